"""Relevancy maps from gradient-weighted fused-window attention.

Global frames are ``(F + T) x (F + T)``: rows and columns ``0..F-1`` are the
per-window CLS tokens, ``F..F+T-1`` the BOLD tokens in time order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .windows import WindowLayout


@dataclass
class GlobalAttention:
    attention: torch.Tensor  # (B, F+T, F+T), already divided by ``norm``
    norm: torch.Tensor  # (F+T, F+T) contributing-window counts


@dataclass
class Explanation:
    relevancy: torch.Tensor  # (B, F+T, F+T)
    importance: torch.Tensor  # (B, T)
    target: torch.Tensor  # (B,) explained class per sample
    logits: torch.Tensor
    layout: WindowLayout
    global_attention: list[GlobalAttention]


def grad_weighted_attention(attn: torch.Tensor, grad: torch.Tensor) -> torch.Tensor:
    """Head-averaged rectified ``grad * attn``; the head axis is ``-3``."""
    if attn.shape != grad.shape:
        raise ValueError(f"attention {tuple(attn.shape)} and gradient {tuple(grad.shape)} differ in shape")
    return (grad * attn).clamp(min=0).mean(dim=-3)


def _cell_indices(layout: WindowLayout, key_offsets: torch.Tensor, valid: torch.Tensor):
    """Flat global-frame destinations of every valid (window, query, key) cell."""
    F, T, W = layout.F, layout.T, layout.W
    n = F + T
    anchors = torch.as_tensor(layout.anchors, dtype=torch.long)
    win = torch.arange(F)
    key_tok = F + anchors[:, None] + key_offsets[None, :]  # (F, K-1)
    qry_tok = F + anchors[:, None] + torch.arange(W)[None, :]  # (F, W)
    kval = valid[:, 1:]

    # window, query row, key column, destination row, destination column
    parts = []
    parts.append((win, torch.zeros(F, dtype=torch.long), torch.zeros(F, dtype=torch.long), win, win))
    wi, kc = torch.nonzero(kval, as_tuple=True)
    parts.append((wi, torch.zeros_like(wi), kc + 1, wi, key_tok[wi, kc]))
    wi, qr = torch.meshgrid(win, torch.arange(W), indexing="ij")
    wi, qr = wi.reshape(-1), qr.reshape(-1)
    parts.append((wi, qr + 1, torch.zeros_like(wi), qry_tok[wi, qr], wi))
    wi, qr, kc = torch.nonzero(kval[:, None, :].expand(F, W, -1), as_tuple=True)
    parts.append((wi, qr + 1, kc + 1, qry_tok[wi, qr], key_tok[wi, kc]))
    w, q, k, r, c = (torch.cat(p) for p in zip(*parts))
    return w, q, k, r * n + c


def occurrence_counts(layout: WindowLayout, key_offsets: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Number of windows writing each global cell at one block."""
    n = layout.F + layout.T
    *_, dest = _cell_indices(layout, key_offsets, valid)
    counts = torch.zeros(n * n, dtype=torch.long)
    counts.index_add_(0, dest, torch.ones_like(dest))
    return counts.reshape(n, n)


def assemble_global(
    maps: torch.Tensor, layout: WindowLayout, key_offsets: torch.Tensor, valid: torch.Tensor
) -> GlobalAttention:
    """Place per-window maps ``(B, F, 1+W, K)`` into the global frame and average overlaps.

    ``key_offsets`` and ``valid`` come from the block's attention record (key
    column 0 is the window's CLS token).
    """
    if maps.dim() == 3:
        maps = maps.unsqueeze(0)
    B, F = maps.shape[:2]
    if F != layout.F or maps.shape[2] != 1 + layout.W or maps.shape[3] != valid.shape[1]:
        raise ValueError(f"window maps {tuple(maps.shape)} do not match the layout")
    n = layout.F + layout.T
    w, q, k, dest = _cell_indices(layout, key_offsets, valid)
    flat = maps.new_zeros(B, n * n)
    flat.index_add_(1, dest, maps[:, w, q, k])
    counts = torch.zeros(n * n, dtype=torch.long)
    counts.index_add_(0, dest, torch.ones_like(dest))
    norm = counts.reshape(n, n)
    scale = torch.where(counts > 0, 1.0 / counts.clamp(min=1).to(maps.dtype), torch.zeros((), dtype=maps.dtype))
    return GlobalAttention((flat * scale).reshape(B, n, n), norm)


def propagate(global_maps: list[torch.Tensor], return_all: bool = False):
    """Accumulate ``R <- R + A R`` from the identity, one update per block."""
    if not global_maps:
        raise ValueError("need at least one block")
    A0 = global_maps[0]
    R = torch.eye(A0.shape[-1], dtype=A0.dtype).expand_as(A0).clone()
    history = [R]
    for A in global_maps:
        R = R + A @ R
        history.append(R)
    return history if return_all else R


def importance_weights(R: torch.Tensor, F: int) -> torch.Tensor:
    """Mean over the ``F`` CLS rows of the BOLD columns."""
    return R[..., :F, F:].mean(dim=-2)


def top_k_landmarks(w_imp, k: int) -> np.ndarray:
    """Indices of the ``k`` largest weights; ties go to the earlier index."""
    w = np.asarray(w_imp, dtype=np.float64)
    if not 1 <= k <= w.shape[-1]:
        raise ValueError(f"k must lie in [1, {w.shape[-1]}], got {k}")
    return np.argsort(-w, axis=-1, kind="stable")[..., :k]


def explain(model, x: torch.Tensor, target=None) -> Explanation:
    """Relevancy maps for ``x`` (``(T, N)`` or ``(B, T, N)``).

    The explained scalar is the logit of ``target`` (default: predicted class).
    Samples are independent in eval mode, so a batch is explained with one
    backward pass over the sum of the selected logits.
    """
    if not model.arch.use_cls:
        raise ValueError("relevancy maps need CLS tokens; the model was built with use_cls off")
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            out = model(x, capture=True)
            logits = out.logits
            if target is None:
                target = logits.argmax(dim=-1)
            target = torch.as_tensor(target, dtype=torch.long).reshape(-1).expand(logits.shape[0])
            scalar = logits.gather(1, target[:, None]).sum()
            probs = [r.probs for r in out.records]
            grads = torch.autograd.grad(scalar, probs)
    finally:
        model.train(was_training)

    layout = out.layout
    globals_ = []
    for rec, g in zip(out.records, grads):
        weighted = grad_weighted_attention(rec.probs.detach(), g)
        globals_.append(assemble_global(weighted, layout, rec.key_offsets, rec.valid))
    R = propagate([ga.attention for ga in globals_])
    return Explanation(
        relevancy=R,
        importance=importance_weights(R, layout.F),
        target=target,
        logits=logits.detach(),
        layout=layout,
        global_attention=globals_,
    )


def write_relevancy(path: str | Path, R, w_imp, T: int, F: int, M: int) -> None:
    """Header ``T=..,F=..,M=..``, then ``F+T`` matrix rows, then the importance row."""
    R = np.asarray(R, dtype=np.float64)
    w = np.asarray(w_imp, dtype=np.float64).reshape(-1)
    if R.shape != (F + T, F + T) or w.shape != (T,):
        raise ValueError("relevancy export needs an (F+T)x(F+T) matrix and a length-T vector")
    with open(path, "w") as f:
        f.write(f"T={T},F={F},M={M}\n")
        for row in R:
            f.write(",".join(f"{v:.6g}" for v in row) + "\n")
        f.write(",".join(f"{v:.6g}" for v in w) + "\n")


def read_relevancy(path: str | Path):
    with open(path) as f:
        header = f.readline().strip()
        meta = dict(kv.split("=") for kv in header.split(","))
        T, F, M = int(meta["T"]), int(meta["F"]), int(meta["M"])
        rows = [list(map(float, line.split(","))) for line in f if line.strip()]
    if len(rows) != F + T + 1:
        raise ValueError(f"{path}: expected {F + T + 1} data rows, found {len(rows)}")
    return np.asarray(rows[:-1]), np.asarray(rows[-1]), {"T": T, "F": F, "M": M}


# --- landmark scoring against planted events --------------------------------


def landmarks(model, dataset, k: int = 5, batch_size: int = 100) -> np.ndarray:
    """Top-``k`` importance indices ``(len(dataset), k)`` for equal-length scans."""
    out = []
    for i in range(0, len(dataset), batch_size):
        x = torch.from_numpy(np.stack([s.values for s in dataset[i : i + batch_size]]).astype(np.float32))
        out.append(top_k_landmarks(explain(model, x).importance.numpy(), k))
    return np.concatenate(out)


def _event_mask(T: int, events) -> np.ndarray:
    mask = np.zeros(T, dtype=bool)
    for a, b in events:
        mask[a:b] = True
    return mask


def event_overlap(indices, T: int, events) -> float:
    """Fraction of ``indices`` that fall inside any ``[start, end)`` event interval."""
    idx = np.asarray(indices)
    return float(_event_mask(T, events)[idx].mean())


def chance_overlap(T: int, events, k: int, rng: np.random.Generator, draws: int = 2000) -> float:
    """Monte-Carlo overlap of ``k`` token indices drawn uniformly without replacement."""
    mask = _event_mask(T, events)
    picks = np.argsort(rng.random((draws, T)), axis=1)[:, :k]
    return float(mask[picks].mean())


def token_features(values: np.ndarray, indices) -> np.ndarray:
    """Selected time points of a ``(T, N)`` series concatenated in the given order."""
    return np.asarray(values)[np.asarray(indices)].reshape(-1)
