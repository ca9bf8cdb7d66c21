"""Fused-window multi-head self-attention and the token fuser."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import diffcore as dc
from .windows import ConfigurationError, WindowLayout

# slots appended after the BOLD-BOLD offsets in each head's bias table
CLS_CLS, CLS_BOLD, BOLD_CLS = 0, 1, 2


def bias_index(W: int, key_offsets: torch.Tensor, radius: int, use_cls: bool = True) -> torch.Tensor:
    """Integer table index for every (query, key) cell of a window.

    ``key_offsets`` are key positions relative to the window anchor. A
    BOLD-BOLD cell indexes the relative distance ``key - query`` shifted by
    ``radius - 1``; CLS cells point at the three dedicated slots that follow
    the ``2 * radius - 1`` distance entries.
    """
    rel = key_offsets[None, :] - torch.arange(W)[:, None]
    if rel.numel() and rel.abs().max() > radius - 1:
        raise ValueError(f"relative distance {int(rel.abs().max())} exceeds the bias table radius {radius}")
    bold = rel + (radius - 1)
    if not use_cls:
        return bold
    n_off = 2 * radius - 1
    idx = torch.empty(1 + W, 1 + len(key_offsets), dtype=torch.long)
    idx[0, 0] = n_off + CLS_CLS
    idx[0, 1:] = n_off + CLS_BOLD
    idx[1:, 0] = n_off + BOLD_CLS
    idx[1:, 1:] = bold
    return idx


@dataclass
class AttentionRecord:
    """Attention probabilities of one block, padded over clipped fringe columns.

    ``probs`` has shape ``(B, F, H, Q, K)`` with ``Q = 1 + W``; key column
    ``c >= 1`` holds the token at ``anchor + key_offsets[c - 1]`` (no leading
    CLS row/column when CLS tokens are ablated). ``valid`` ``(F, K)`` marks
    columns that exist inside the series.
    """

    probs: torch.Tensor
    valid: torch.Tensor
    key_offsets: torch.Tensor
    block: int

    @property
    def grad(self) -> torch.Tensor | None:
        return self.probs.grad


class FusedWindowAttention(nn.Module):
    """One FW-MSA layer. The bias table is owned per block."""

    def __init__(self, dim: int, heads: int, radius: int, dropout: float = 0.1, use_cls: bool = True):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.radius = radius
        self.use_cls = use_cls
        self.dropout = dropout
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        n_slots = 2 * radius - 1 + (3 if use_cls else 0)
        self.bias_table = nn.Parameter(torch.zeros(heads, n_slots))

    def bias(self, W: int, key_offsets: torch.Tensor) -> torch.Tensor:
        """``(H, Q, K)`` bias shared by every window of the block."""
        idx = bias_index(W, key_offsets, self.radius, self.use_cls)
        return self.bias_table[:, idx]

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.heads, self.head_dim).transpose(-2, -3)

    def forward(
        self,
        cls: torch.Tensor | None,
        bold: torch.Tensor,
        layout: WindowLayout,
        block: int,
        *,
        capture: bool = False,
        attn_offset: torch.Tensor | None = None,
        rng: torch.Generator | None = None,
    ):
        """Attend within every window of ``layout`` at fringe length ``layout.fringe[block]``.

        ``cls`` is ``(B, F, D)`` (or ``None`` without CLS tokens), ``bold`` is
        ``(B, T, D)``. Returns ``(cls_out, base_out, record)`` where
        ``base_out`` is ``(B, F, W, D)``, the per-window outputs of base tokens
        before fusion. ``attn_offset`` is added to the attention probabilities
        and exists so tests can differentiate through them.
        """
        if bold.shape[-1] != self.dim:
            raise ConfigurationError(f"expected token dim {self.dim}, got {bold.shape[-1]}")
        W = layout.W
        base_idx = layout.base_index()
        key_idx, valid, key_offsets = layout.key_index(block)

        q = dc.gather_rows(self.q(bold), base_idx)  # (B, F, W, D)
        k = dc.gather_rows(self.k(bold), key_idx)  # (B, F, W+2L, D)
        v = dc.gather_rows(self.v(bold), key_idx)
        if self.use_cls:
            if cls is None or cls.shape[-2] != layout.F:
                raise ConfigurationError("need one CLS token per window")
            q = torch.cat([self.q(cls).unsqueeze(-2), q], dim=-2)
            k = torch.cat([self.k(cls).unsqueeze(-2), k], dim=-2)
            v = torch.cat([self.v(cls).unsqueeze(-2), v], dim=-2)
            valid = torch.cat([torch.ones(layout.F, 1, dtype=torch.bool), valid], dim=1)

        q, k, v = self._split_heads(q), self._split_heads(k), self._split_heads(v)  # (B, F, H, n, d)
        scores = dc.matmul(q, k.transpose(-1, -2)) / self.head_dim**0.5
        scores = scores + self.bias(W, key_offsets)
        scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        probs = dc.softmax_lastdim(scores)
        if capture:
            probs.retain_grad()
        used = probs if attn_offset is None else probs + attn_offset
        out = dc.matmul(used, v)  # (B, F, H, Q, d)
        out = out.transpose(-2, -3).reshape(*out.shape[:2], out.shape[-2], self.dim)
        out = dc.dropout(self.proj(out), self.dropout, self.training, rng)

        record = AttentionRecord(probs, valid, key_offsets, block) if capture else None
        if self.use_cls:
            return out[..., 0, :], out[..., 1:, :], record
        return None, out, record


def fuse_tokens(base_out: torch.Tensor, layout: WindowLayout) -> torch.Tensor:
    """Average each token's outputs over the windows holding it as a base token.

    ``base_out`` is ``(B, F, W, D)``; the result is ``(B, T, D)``.
    """
    counts = torch.as_tensor(layout.coverage_counts())
    if (counts == 0).any():
        missing = torch.nonzero(counts == 0).flatten().tolist()
        raise ValueError(f"tokens {missing[:5]} are not base tokens of any window")
    summed = dc.scatter_add_rows(base_out, layout.base_index(), layout.T)
    return summed / counts.to(summed.dtype)[:, None]
