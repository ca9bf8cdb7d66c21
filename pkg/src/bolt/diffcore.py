"""Dense-array primitives with reverse-mode gradients.

Arrays are ``torch.Tensor``; the autograd graph plays the role of the tape.
The wrappers here pin down the handful of contracts the model relies on
(shape checks, NaN rejection, inverted dropout with an explicit generator)
and :func:`grad_check` provides an independent central-difference oracle.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import torch
import torch.nn.functional as F

Array = torch.Tensor


class NumericError(ValueError):
    """Non-finite values reached a primitive that requires finite input."""


@contextmanager
def precision(dtype: torch.dtype) -> Iterator[None]:
    """Temporarily switch the default floating dtype (32-bit or 64-bit)."""
    if dtype not in (torch.float32, torch.float64):
        raise ValueError(f"unsupported precision {dtype}")
    old = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(old)


def matmul(a: Array, b: Array) -> Array:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ValueError(f"matmul inner extents differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def softmax_lastdim(x: Array) -> Array:
    """Max-subtracted softmax over the last axis. ``-inf`` entries are masked keys."""
    if torch.isnan(x).any():
        raise NumericError("softmax input contains NaN")
    shift = x.amax(dim=-1, keepdim=True).detach()
    shift = torch.where(torch.isfinite(shift), shift, torch.zeros_like(shift))
    e = torch.exp(x - shift)
    return e / e.sum(dim=-1, keepdim=True)


def layernorm(x: Array, weight: Array, bias: Array, eps: float = 1e-5) -> Array:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * weight + bias


def gelu(x: Array) -> Array:
    # exact erf form
    return 0.5 * x * (1.0 + torch.erf(x / 2.0**0.5))


def dropout(x: Array, rate: float, train: bool, generator: torch.Generator | None = None) -> Array:
    """Inverted dropout; identity when ``rate == 0`` or ``train`` is off."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) < keep
    return x * mask / keep


def cross_entropy(logits: Array, label: Array | int) -> Array:
    """Mean negative log-likelihood. ``logits`` is ``(C,)`` or ``(B, C)``."""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    label = torch.as_tensor(label, dtype=torch.long).reshape(-1)
    if label.numel() != logits.shape[0]:
        raise ValueError("one label per row of logits is required")
    if (label < 0).any() or (label >= logits.shape[1]).any():
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    return F.cross_entropy(logits, label)


def gather_rows(x: Array, index: Array) -> Array:
    """Select rows of ``x`` (along dim -2) by an integer index tensor of any shape."""
    return x[..., index, :]


def scatter_add_rows(src: Array, index: Array, n_rows: int) -> Array:
    """Inverse of :func:`gather_rows`: sum ``src`` rows into ``n_rows`` slots.

    ``src`` has shape ``(*batch, *index.shape, D)``.
    """
    batch = src.shape[: src.dim() - index.dim() - 1]
    d = src.shape[-1]
    flat_src = src.reshape(*batch, -1, d)
    out = src.new_zeros(*batch, n_rows, d)
    idx = index.reshape(-1)
    return out.index_add(len(batch), idx, flat_src)


def grad_check(f: Callable[[Array], Array], x: Array, eps: float = 1e-6) -> float:
    """Max relative error between autograd and central differences.

    Error per coordinate is ``|a - c| / (|a| + |c| + 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = x.detach().clone()
    xg = x0.clone().requires_grad_(True)
    out = f(xg)
    if out.numel() != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {tuple(out.shape)}")
    (analytic,) = torch.autograd.grad(out, xg, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x0)
    central = torch.zeros_like(x0)
    flat = x0.reshape(-1)
    with torch.no_grad():
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + eps
            hi = f(x0).item()
            flat[k] = orig - eps
            lo = f(x0).item()
            flat[k] = orig
            central.view(-1)[k] = (hi - lo) / (2 * eps)
    err = (analytic - central).abs() / (analytic.abs() + central.abs() + 1e-8)
    return float(err.max()) if err.numel() else 0.0


def grad_check_params(
    loss_fn: Callable[[], Array], params: Sequence[Array], eps: float = 1e-6
) -> list[float]:
    """Central-difference check of ``loss_fn`` against every tensor in ``params``.

    ``loss_fn`` must read the parameters by reference; each coordinate is
    perturbed in place and restored. Returns the max relative error per tensor.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    errors = []
    with torch.no_grad():
        for p, g in zip(params, grads):
            analytic = torch.zeros_like(p) if g is None else g
            central = torch.zeros_like(p)
            flat = p.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                hi = loss_fn().item()
                flat[k] = orig - eps
                lo = loss_fn().item()
                flat[k] = orig
                central.view(-1)[k] = (hi - lo) / (2 * eps)
            err = (analytic - central).abs() / (analytic.abs() + central.abs() + 1e-8)
            errors.append(float(err.max()) if err.numel() else 0.0)
    return errors
