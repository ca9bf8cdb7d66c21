"""Ablation table on the planted-synchrony task: one row per (variant, seed), then means.

    python3 scripts/ablation.py --seeds 0 1 2 3 4 > ablation.tsv
"""

import argparse
import dataclasses
import sys

import numpy as np
import torch

from bolt.data import planted_sync_spec, synth_generate
from bolt.model import ModelConfig
from bolt.train import TrainConfig, evaluate, train

VARIANTS = {
    "full": {},
    "no_cls": {"use_cls": False},
    "no_windowing": {"use_windowing": False},
    "no_fusion": {"use_fusion": False},
    "no_cross_attn": {"use_cross_attn": False},
    "no_cwr": {"use_cwr": False},
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    args = p.parse_args()
    torch.set_num_threads(1)

    spec = planted_sync_spec()
    scores = {v: [] for v in args.variants}
    print("variant\tseed\taccuracy\tauroc\tcwr")
    for seed in args.seeds:
        rng = np.random.default_rng(1000 + seed)
        tr, va = synth_generate(spec, 800, rng), synth_generate(spec, 200, rng)
        for name in args.variants:
            cfg = dataclasses.replace(ModelConfig(), **VARIANTS[name])
            model = train(tr, va, cfg, TrainConfig(seed=seed, epochs=args.epochs)).model
            ev = evaluate(model, va)
            scores[name].append(ev["accuracy"])
            print(f"{name}\t{seed}\t{ev['accuracy']:.6g}\t{ev['auroc']:.6g}\t{ev['cwr']:.6g}", flush=True)
    for name, acc in scores.items():
        print(f"mean\t{name}\t{np.mean(acc):.6g}", file=sys.stderr)


if __name__ == "__main__":
    main()
