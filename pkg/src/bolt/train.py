"""Training loop, one-cycle schedule and evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.stats import rankdata

from .data import RoiTimeSeries, random_crop
from .model import BolT, ModelConfig, cwr_loss, total_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr_low: float = 2e-4
    lr_peak: float = 5e-4
    lr_final: float = 2e-5
    warm_frac: float = 0.3
    seed: int = 0
    crop_len: int = 60
    weight_decay: float = 0.0
    grad_clip: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.warm_frac < 1.0:
            raise ValueError(f"warm_frac must lie in (0, 1), got {self.warm_frac}")
        if min(self.lr_low, self.lr_peak, self.lr_final) <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def one_cycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp ``lr_low -> lr_peak`` over the first ``ceil(warm_frac * total)``
    steps, then linear decay to ``lr_final`` at the last step."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = math.ceil(cfg.warm_frac * total_steps)
    if step < warm:
        return cfg.lr_low + (cfg.lr_peak - cfg.lr_low) * step / warm
    span = total_steps - 1 - warm
    if span <= 0:
        return cfg.lr_final
    return cfg.lr_peak + (cfg.lr_final - cfg.lr_peak) * (step - warm) / span


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    ce: float
    cwr: float
    val_acc: float
    val_auroc: float

    FIELDS = ("epoch", "lr", "train_loss", "ce", "cwr", "val_acc", "val_auroc")

    def row(self) -> str:
        return ",".join([str(self.epoch)] + [f"{getattr(self, k):.6g}" for k in self.FIELDS[1:]])


@dataclass
class TrainResult:
    model: BolT
    history: list[EpochMetrics] = field(default_factory=list)


def _stack(batch: list[RoiTimeSeries]) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.values for s in batch]).astype(np.float32))
    y = torch.tensor([s.label for s in batch], dtype=torch.long)
    return x, y


def train(
    train_set: list[RoiTimeSeries],
    val_set: list[RoiTimeSeries] | None,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    model: BolT | None = None,
) -> TrainResult:
    """Adam with the one-cycle schedule; fresh random crops every epoch."""
    if not train_set:
        raise ValueError("empty training set")
    if len({s.label for s in train_set}) < 2:
        raise ValueError("training set needs at least two classes")
    model = model or BolT(model_cfg, seed=cfg.seed)
    lam = model.arch.lambda_cwr
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.lr_low, betas=(0.9, 0.999), eps=1e-8, weight_decay=cfg.weight_decay
    )
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    result = TrainResult(model)
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = [random_crop(train_set[i], min(cfg.crop_len, train_set[i].T), rng) for i in idx]
            x, y = _stack(batch)
            lr = one_cycle_lr(step, total, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            out = model(x, rng=gen)
            loss, ce, cwr = total_loss(out.logits, y, out.cls, lam)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            sums += [loss.item() * len(idx), ce.item() * len(idx), cwr.item() * len(idx)]
            step += 1
        sums /= len(train_set)
        acc = auc = float("nan")
        if val_set:
            ev = evaluate(model, val_set)
            acc, auc = ev["accuracy"], ev["auroc"]
        m = EpochMetrics(epoch, lr, *sums.tolist(), acc, auc)
        result.history.append(m)
        log.info("epoch %d lr %.3g loss %.4f ce %.4f cwr %.4f val_acc %.4f auroc %.4f", epoch, lr, *sums, acc, auc)
    model.eval()
    return result


@torch.no_grad()
def predict(model: BolT, dataset: list[RoiTimeSeries], batch_size: int = 100):
    """Class probabilities, labels and mean final-CLS CWR over ``dataset`` (eval mode, full series)."""
    was = model.training
    model.eval()
    probs, labels, cwrs = [], [], []
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(dataset):
        by_len.setdefault(s.T, []).append(i)
    order = []
    for idxs in by_len.values():
        for k in range(0, len(idxs), batch_size):
            chunk = idxs[k : k + batch_size]
            x, y = _stack([dataset[i] for i in chunk])
            out = model(x)
            probs.append(torch.softmax(out.logits, dim=-1))
            labels.append(y)
            if out.cls is not None:
                cwrs.extend(cwr_loss(c).item() for c in out.cls)
            order.extend(chunk)
    model.train(was)
    inv = np.argsort(order)
    P = torch.cat(probs).numpy()[inv]
    Y = torch.cat(labels).numpy()[inv]
    return P, Y, (float(np.mean(cwrs)) if cwrs else 0.0)


def auroc(scores, labels) -> float:
    """Mann-Whitney rank statistic with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n1, n0 = labels.sum(), (~labels).sum()
    if n1 == 0 or n0 == 0:
        raise ValueError("AUROC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def evaluate(model: BolT, dataset: list[RoiTimeSeries]) -> dict:
    """Accuracy and AUROC (one-vs-rest macro average beyond two classes)."""
    if not dataset:
        raise ValueError("empty dataset")
    P, Y, cwr = predict(model, dataset)
    acc = float((P.argmax(axis=1) == Y).mean())
    present = np.unique(Y)
    if P.shape[1] == 2:
        auc = auroc(P[:, 1], Y == 1) if len(present) == 2 else float("nan")
    else:
        aucs = [auroc(P[:, c], Y == c) for c in present if 0 < (Y == c).sum() < len(Y)]
        auc = float(np.mean(aucs)) if aucs else float("nan")
    return {"accuracy": acc, "auroc": auc, "cwr": cwr}
