"""Analytic FW-MSA cost model and a wall-clock forward benchmark."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import torch

from .model import BolT, ModelConfig, apply_ablation

TERMS = ("qk", "av", "proj")


@dataclass
class FlopReport:
    T: int
    W: int
    stride: int
    F: int
    fringe: list[int]
    per_block: list[dict[str, int]]
    seconds: float | None = None
    terms: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.terms.values())


def flop_model(T: int, cfg: ModelConfig) -> FlopReport:
    """Multiply-accumulates of every FW-MSA layer as executed.

    Each window runs ``Q = 1 + W`` queries against the block's key grid of
    ``K = 1 + W + 2L`` columns (narrower only when a fringe overhangs both
    ends of a short series): ``Q*K*D`` each for scores and weighted values,
    ``2*Q*D^2`` for the query and output projections. Keys and values are
    projected once per token, ``2*(T + F)*D^2``.
    """
    arch = apply_ablation(cfg)
    layout = arch.layout(T)
    n_cls = 1 if arch.use_cls else 0
    D, F = cfg.dim, layout.F
    Q = n_cls + layout.W
    per_block = []
    for m in range(cfg.blocks):
        K = n_cls + layout.key_index(m)[0].shape[1]
        per_block.append({
            "qk": F * Q * K * D,
            "av": F * Q * K * D,
            "proj": F * Q * 2 * D * D + (T + n_cls * F) * 2 * D * D,
        })
    terms = {t: sum(b[t] for b in per_block) for t in TERMS}
    return FlopReport(T, layout.W, layout.stride, F, list(layout.fringe), per_block, terms=terms)


@torch.no_grad()
def time_forward(model: BolT, T: int, repeats: int = 5, seed: int = 0) -> float:
    """Median eval-mode forward time for one ``T``-long random series."""
    model.eval()
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, T, model.cfg.n_channels, generator=g)
    model(x)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model(x)
        times.append(time.perf_counter() - t0)
    times.sort()
    return times[len(times) // 2]


def bench(lengths: list[int], cfg: ModelConfig, repeats: int = 5) -> list[FlopReport]:
    cfg = dataclasses.replace(cfg, max_len=max(max(lengths), cfg.max_len))
    model = BolT(cfg)
    reports = []
    for T in lengths:
        rep = flop_model(T, cfg)
        rep.seconds = time_forward(model, T, repeats)
        reports.append(rep)
    return reports


def format_reports(reports: list[FlopReport]) -> str:
    head = ["T", "W", "s", "F", "L_per_block", "qk_macs", "av_macs", "proj_macs", "total_macs", "forward_s"]
    lines = ["\t".join(head)]
    for r in reports:
        cells = [
            str(r.T), str(r.W), str(r.stride), str(r.F), "/".join(map(str, r.fringe)),
            *(f"{r.terms[t]:.6g}" for t in TERMS), f"{r.total:.6g}",
            f"{r.seconds:.6g}" if r.seconds is not None else "nan",
        ]
        lines.append("\t".join(cells))
    if len(reports) >= 2:
        a, b = reports[0], reports[-1]
        lines.append(f"flop_ratio(T={b.T}/T={a.T})\t{b.total / a.total:.6g}")
    return "\n".join(lines)
