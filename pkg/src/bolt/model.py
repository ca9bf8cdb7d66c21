"""The BolT cascade: embedding, FW-MSA blocks, CLS aggregation and the loss."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import diffcore as dc
from .fwmsa import AttentionRecord, FusedWindowAttention, fuse_tokens
from .windows import ConfigurationError, WindowLayout, WindowSpec, plan_windows


@dataclass
class ModelConfig:
    n_channels: int = 16
    dim: int = 32
    heads: int = 4
    blocks: int = 4
    window: int = 20
    alpha: float = 0.4
    beta: int = 2
    mlp_ratio: int = 4
    dropout: float = 0.1
    num_classes: int = 2
    lambda_cwr: float = 1.0
    # longest series the global-window ablation must handle
    max_len: int = 60
    use_cls: bool = True
    use_windowing: bool = True
    use_fusion: bool = True
    use_cross_attn: bool = True
    use_cwr: bool = True

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigurationError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if self.lambda_cwr < 0:
            raise ConfigurationError("lambda_cwr must be nonnegative")
        if self.num_classes < 2:
            raise ConfigurationError("need at least two classes")
        self.window_spec  # validates geometry

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(W=self.window, alpha=self.alpha, beta=self.beta, M=self.blocks)


@dataclass(frozen=True)
class Architecture:
    """Concrete geometry and loss weighting after ablation flags are applied.

    ``spec is None`` means a single window spanning the whole series.
    """

    spec: WindowSpec | None
    blocks: int
    use_cls: bool
    lambda_cwr: float
    bias_radius: int

    def layout(self, T: int) -> WindowLayout:
        if self.spec is None:
            return plan_windows(T, WindowSpec(W=T, alpha=1.0, beta=0, M=self.blocks))
        return plan_windows(T, self.spec)


def apply_ablation(cfg: ModelConfig) -> Architecture:
    spec = cfg.window_spec
    if not cfg.use_cross_attn:
        spec = dataclasses.replace(spec, beta=0)
    if not cfg.use_fusion:
        spec = dataclasses.replace(spec, stride_override=spec.W)
    if not cfg.use_windowing:
        radius = cfg.max_len
        spec = None
    else:
        radius = spec.W + max(spec.fringe_schedule)
    lam = cfg.lambda_cwr if (cfg.use_cwr and cfg.use_cls) else 0.0
    return Architecture(spec, cfg.blocks, cfg.use_cls, lam, radius)


@dataclass
class ForwardOutput:
    logits: torch.Tensor  # (B, C)
    cls: torch.Tensor | None  # (B, F, D) at the output of the last block
    layout: WindowLayout
    records: list[AttentionRecord] | None = None


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return dc.layernorm(x, self.weight, self.bias)


class Block(nn.Module):
    """Pre-norm FW-MSA with residual, token fusion, then pre-norm MLP with residual."""

    def __init__(self, cfg: ModelConfig, radius: int, use_cls: bool):
        super().__init__()
        self.norm1 = LayerNorm(cfg.dim)
        self.attn = FusedWindowAttention(cfg.dim, cfg.heads, radius, cfg.dropout, use_cls)
        self.norm2 = LayerNorm(cfg.dim)
        self.fc1 = nn.Linear(cfg.dim, cfg.mlp_ratio * cfg.dim)
        self.fc2 = nn.Linear(cfg.mlp_ratio * cfg.dim, cfg.dim)
        self.dropout = cfg.dropout

    def mlp(self, x, rng):
        h = dc.dropout(dc.gelu(self.fc1(x)), self.dropout, self.training, rng)
        return dc.dropout(self.fc2(h), self.dropout, self.training, rng)

    def forward(self, cls, bold, layout, block, capture=False, attn_offset=None, rng=None):
        a_cls, a_base, record = self.attn(
            None if cls is None else self.norm1(cls),
            self.norm1(bold),
            layout,
            block,
            capture=capture,
            attn_offset=attn_offset,
            rng=rng,
        )
        # every window sees the same residual copy, so adding it after fusion is exact
        bold = bold + fuse_tokens(a_base, layout)
        bold = bold + self.mlp(self.norm2(bold), rng)
        if cls is not None:
            cls = cls + a_cls
            cls = cls + self.mlp(self.norm2(cls), rng)
        return cls, bold, record


class BolT(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.arch = apply_ablation(cfg)
        self.embed = nn.Linear(cfg.n_channels, cfg.dim)
        self.cls_token = nn.Parameter(torch.zeros(cfg.dim))
        self.blocks = nn.ModuleList(
            Block(cfg, self.arch.bias_radius, self.arch.use_cls) for _ in range(cfg.blocks)
        )
        self.norm = LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, cfg.num_classes)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for mod in self.modules():
                if isinstance(mod, nn.Linear):
                    nn.init.xavier_uniform_(mod.weight, generator=g)
                    mod.bias.zero_()
                elif isinstance(mod, FusedWindowAttention):
                    nn.init.trunc_normal_(mod.bias_table, std=0.02, a=-0.04, b=0.04, generator=g)
            nn.init.trunc_normal_(self.cls_token, std=0.02, a=-0.04, b=0.04, generator=g)

    def forward(
        self,
        x: torch.Tensor,
        *,
        capture: bool = False,
        attn_offsets: list[torch.Tensor | None] | None = None,
        rng: torch.Generator | None = None,
    ) -> ForwardOutput:
        """Classify ``x`` of shape ``(T, N)`` or ``(B, T, N)``."""
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.cfg.n_channels:
            raise ConfigurationError(f"expected {self.cfg.n_channels} channels, got {x.shape[-1]}")
        if not torch.isfinite(x).all():
            raise dc.NumericError("input series contains non-finite values")
        if self.training and self.cfg.dropout > 0 and rng is None:
            raise ValueError("training-mode forward with dropout needs an explicit generator")
        B, T, _ = x.shape
        layout = self.arch.layout(T)

        bold = self.embed(x.to(self.embed.weight.dtype))
        cls = self.cls_token.expand(B, layout.F, -1) if self.arch.use_cls else None
        records = [] if capture else None
        for m, blk in enumerate(self.blocks):
            off = attn_offsets[m] if attn_offsets is not None else None
            cls, bold, rec = blk(cls, bold, layout, m, capture, off, rng)
            if capture:
                records.append(rec)
        pooled = cls.mean(dim=1) if cls is not None else bold.mean(dim=1)
        logits = self.head(self.norm(pooled))
        return ForwardOutput(logits, cls, layout, records)


def cwr_loss(final_cls: torch.Tensor) -> torch.Tensor:
    """Mean squared deviation of per-window CLS tokens from their window average.

    Normalised by ``D * F``; batched input ``(B, F, D)`` is averaged over ``B``.
    """
    if final_cls.dim() == 2:
        final_cls = final_cls.unsqueeze(0)
    _, F, D = final_cls.shape
    dev = final_cls - final_cls.mean(dim=1, keepdim=True)
    return ((dev**2).sum(dim=(1, 2)) / (D * F)).mean()


def total_loss(logits, label, final_cls, lambda_cwr: float):
    """Returns ``(total, ce, cwr)``; the CWR term is skipped when ``lambda_cwr == 0``."""
    ce = dc.cross_entropy(logits, label)
    if final_cls is None:
        cwr = ce.new_zeros(())
    else:
        cwr = cwr_loss(final_cls)
    total = ce + lambda_cwr * cwr if lambda_cwr else ce
    return total, ce, cwr


# --- checkpoint container -------------------------------------------------

CKPT_MAGIC = b"BOLTCKPT"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, model: BolT, extra: dict | None = None) -> None:
    """Magic, version, JSON config echo, then named little-endian float32 arrays."""
    header = json.dumps({"config": dataclasses.asdict(model.cfg), "extra": extra or {}}, sort_keys=True)
    hb = header.encode("utf-8")
    state = model.state_dict()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(hb)))
        f.write(hb)
        f.write(struct.pack("<I", len(state)))
        for name, t in state.items():
            nb = name.encode("utf-8")
            arr = t.detach().cpu().numpy().astype("<f4")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[BolT, dict]:
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a BolT checkpoint")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        (n,) = struct.unpack("<I", f.read(4))
        state = {}
        for _ in range(n):
            (nl,) = struct.unpack("<H", f.read(2))
            name = f.read(nl).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = math.prod(shape)
            arr = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            state[name] = torch.from_numpy(arr.astype(np.float32))
    model = BolT(ModelConfig(**header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
