"""FLOP model and forward timing across series lengths for a few geometries.

    python3 scripts/bench.py --t 150 300 600 1200
"""

import argparse
import dataclasses

import torch

from bolt.flops import bench, flop_model, format_reports
from bolt.model import ModelConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--t", type=int, nargs="+", default=[150, 300, 600, 1200])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()
    torch.set_num_threads(1)

    desk = ModelConfig()
    print("# windowed, desk defaults")
    print(format_reports(bench(args.t, desk, args.repeats)))
    print("\n# single global window")
    print(format_reports(bench(args.t, dataclasses.replace(desk, use_windowing=False), args.repeats)))

    print("\n# stride halving (alpha 0.4 -> 0.2), analytic only")
    print("dim\tT\tF_ratio\tflop_ratio")
    for dim, heads in ((32, 4), (400, 8)):
        base = dataclasses.replace(desk, dim=dim, heads=heads)
        for T in args.t:
            a, b = flop_model(T, base), flop_model(T, dataclasses.replace(base, alpha=0.2))
            print(f"{dim}\t{T}\t{b.F / a.F:.4g}\t{b.total / a.total:.4g}")


if __name__ == "__main__":
    main()
