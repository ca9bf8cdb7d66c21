"""Window geometry for fused-window attention.

A series of ``T`` tokens is split into ``F`` windows of ``W`` base tokens.
Block ``m`` additionally lets every window attend to ``L[m]`` fringe tokens on
each side, clipped at the series boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch


class ConfigurationError(ValueError):
    pass


def round_half_up(x: float) -> int:
    # guard against 23.999999 style float noise before flooring
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True)
class WindowSpec:
    W: int = 20
    alpha: float = 0.4
    beta: int = 2
    M: int = 4
    # explicit stride override; the fringe schedule still uses ``alpha``
    stride_override: int | None = None

    def __post_init__(self):
        if self.W < 1:
            raise ConfigurationError(f"window size must be >= 1, got {self.W}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta < 0 or int(self.beta) != self.beta:
            raise ConfigurationError(f"beta must be a nonnegative integer, got {self.beta}")
        if self.M < 1:
            raise ConfigurationError(f"need at least one block, got M={self.M}")
        if self.stride < 1:
            raise ConfigurationError(f"stride round(W*alpha) must be >= 1, got {self.stride}")

    @property
    def stride(self) -> int:
        if self.stride_override is not None:
            return int(self.stride_override)
        return round_half_up(self.W * self.alpha)

    def fringe(self, m: int) -> int:
        return round_half_up(m * (1.0 - self.alpha) * self.W * self.beta)

    @property
    def fringe_schedule(self) -> list[int]:
        return [self.fringe(m) for m in range(self.M)]

    @property
    def receptive_fields(self) -> list[int]:
        return [self.W + 2 * L for L in self.fringe_schedule]


@dataclass
class WindowLayout:
    T: int
    W: int
    stride: int
    anchors: np.ndarray
    fringe: list[int]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def F(self) -> int:
        return len(self.anchors)

    @property
    def M(self) -> int:
        return len(self.fringe)

    def base_range(self, i: int) -> tuple[int, int]:
        a = int(self.anchors[i])
        return a, a + self.W

    def key_range(self, i: int, m: int) -> tuple[int, int]:
        """Clipped receptive field ``[lo, hi)`` of window ``i`` at block ``m``."""
        a, L = int(self.anchors[i]), self.fringe[m]
        return max(0, a - L), min(self.T, a + self.W + L)

    def base_index(self) -> torch.Tensor:
        """``(F, W)`` token indices of each window's base tokens."""
        if "base" not in self._cache:
            a = torch.as_tensor(self.anchors, dtype=torch.long)
            self._cache["base"] = a[:, None] + torch.arange(self.W)[None, :]
        return self._cache["base"]

    def key_index(self, m: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Padded key grid for block ``m``.

        Returns ``(index, valid, offsets)``: ``index`` is ``(F, K)`` token
        positions (clamped into range), ``valid`` marks which of them really
        lie inside ``[0, T)``, and ``offsets`` gives each column's position
        relative to the window anchor. Columns that are out of range for every
        window are dropped.
        """
        key = ("keys", m)
        if key not in self._cache:
            L = self.fringe[m]
            a = torch.as_tensor(self.anchors, dtype=torch.long)
            offsets = torch.arange(-L, self.W + L)
            pos = a[:, None] + offsets[None, :]
            valid = (pos >= 0) & (pos < self.T)
            keep = valid.any(dim=0)
            self._cache[key] = (pos[:, keep].clamp(0, self.T - 1), valid[:, keep], offsets[keep])
        return self._cache[key]

    def coverage_counts(self) -> np.ndarray:
        counts = np.zeros(self.T, dtype=np.int64)
        for a in self.anchors:
            counts[a : a + self.W] += 1
        return counts


def plan_windows(T: int, spec: WindowSpec) -> WindowLayout:
    """Anchor windows at ``0, s, 2s, ...``; add one at ``T - W`` if the tail is uncovered."""
    if T < spec.W:
        raise ConfigurationError(f"series length {T} is shorter than the window size {spec.W}")
    s = spec.stride
    anchors = list(range(0, T - spec.W + 1, s))
    if anchors[-1] + spec.W < T:
        anchors.append(T - spec.W)
    return WindowLayout(
        T=T,
        W=spec.W,
        stride=s,
        anchors=np.asarray(anchors, dtype=np.int64),
        fringe=spec.fringe_schedule,
    )
