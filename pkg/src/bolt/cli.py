"""Command line: ``bolt {synth,train,eval,explain,bench}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import data
from .config import ConfigError, format_config, read_config
from .explain import explain, write_relevancy
from .flops import bench, format_reports
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .train import EpochMetrics, TrainConfig, evaluate, train


def _synth(args) -> int:
    spec = data.planted_sync_spec(
        T=args.t, N=args.n, amplitude=args.amplitude, duration=args.duration,
        noise=args.noise, smooth=args.smooth,
    )
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    events = []
    for split, n in (("train", args.n_train), ("val", args.n_val)):
        ds = data.synth_generate(spec, n, rng)
        for s in ds:
            s.meta["id"] = f"{split}{s.meta['id'][4:]}"
            events.extend((s.meta["id"], a, b) for a, b in s.events)
        data.save_dataset(out / split, ds)
    with open(out / "events.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scan_id", "start", "end"])
        w.writerows(events)
    print(f"wrote {args.n_train} train / {args.n_val} val scans to {out}")
    return 0


def _train(args) -> int:
    model_cfg, train_cfg = read_config(args.config) if args.config else (ModelConfig(), TrainConfig())
    root = Path(args.data)
    train_set = data.load_dataset(root / "train")
    val_dir = root / "val"
    val_set = data.load_dataset(val_dir) if val_dir.is_dir() else None
    result = train(train_set, val_set, model_cfg, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", result.model, extra={"epochs": train_cfg.epochs})
    (out / "run.cfg").write_text(format_config(model_cfg, train_cfg))
    with open(out / "metrics.csv", "w") as f:
        f.write(",".join(EpochMetrics.FIELDS) + "\n")
        for m in result.history:
            f.write(m.row() + "\n")
    if result.history:
        last = result.history[-1]
        print(f"final val_acc={last.val_acc:.6g} val_auroc={last.val_auroc:.6g}")
    return 0


def _eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.data)
    ev = evaluate(model, ds)
    print(f"accuracy={ev['accuracy']:.6g} auroc={ev['auroc']:.6g}")
    return 0


def _explain(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    s = data.zscore(data.load_series(args.scan))
    x = torch.from_numpy(s.values.astype(np.float32))
    e = explain(model, x, target=args.target)
    lay = e.layout
    write_relevancy(args.out, e.relevancy[0].numpy(), e.importance[0].numpy(), lay.T, lay.F, model.cfg.blocks)
    print(f"class {int(e.target[0])} relevancy written to {args.out}")
    return 0


def _bench(args) -> int:
    model_cfg = read_config(args.config)[0] if args.config else ModelConfig()
    lengths = args.t or [150, 300, 600, 1200]
    print(format_reports(bench(lengths, model_cfg, repeats=args.repeats)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bolt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="write a synthetic planted-event dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-train", type=int, default=800)
    s.add_argument("--n-val", type=int, default=200)
    s.add_argument("--t", type=int, default=60)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--amplitude", type=float, default=2.0)
    s.add_argument("--duration", type=int, default=6)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--smooth", type=int, default=3)
    s.set_defaults(func=_synth)

    t = sub.add_parser("train", help="train from DATA/train, validate on DATA/val")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="accuracy and AUROC of a checkpoint on a scan directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=_eval)

    x = sub.add_parser("explain", help="relevancy map export for one scan")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--scan", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--target", type=int, default=None)
    x.set_defaults(func=_explain)

    b = sub.add_parser("bench", help="FLOP model and forward timing per series length")
    b.add_argument("--t", type=int, action="append")
    b.add_argument("--config")
    b.add_argument("--repeats", type=int, default=5)
    b.set_defaults(func=_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, data.ParseError, ValueError) as e:
        print(f"bolt {args.cmd}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
