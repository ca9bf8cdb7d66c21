"""Train on the planted-synchrony task, then score landmark tokens against the planted events.

    python3 scripts/desk_run.py --seed 0
"""

import argparse
import time

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from bolt.data import planted_sync_spec, synth_generate
from bolt.explain import chance_overlap, event_overlap, landmarks, token_features
from bolt.model import ModelConfig
from bolt.train import TrainConfig, evaluate, train


def fidelity(model, train_set, val_set, k=5, seed=0):
    rng = np.random.default_rng(seed)
    top_val = landmarks(model, val_set, k)
    T = val_set[0].T
    overlap = np.mean([event_overlap(t, T, s.events) for t, s in zip(top_val, val_set)])
    chance = np.mean([chance_overlap(T, s.events, k, rng) for s in val_set])

    top_tr = landmarks(model, train_set, k)
    rand_tr = [rng.choice(T, k, replace=False) for _ in train_set]
    rand_val = [rng.choice(T, k, replace=False) for _ in val_set]
    y_tr = [s.label for s in train_set]
    y_val = [s.label for s in val_set]

    def probe(idx_tr, idx_val):
        X_tr = np.stack([token_features(s.values, t) for s, t in zip(train_set, idx_tr)])
        X_val = np.stack([token_features(s.values, t) for s, t in zip(val_set, idx_val)])
        return LogisticRegression(max_iter=2000).fit(X_tr, y_tr).score(X_val, y_val)

    return {
        "overlap": float(overlap),
        "chance": float(chance),
        "probe_top": probe(top_tr, top_val),
        "probe_random": probe(rand_tr, rand_val),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    args = p.parse_args()
    torch.set_num_threads(1)

    spec = planted_sync_spec()
    rng = np.random.default_rng(1000 + args.seed)
    tr, va = synth_generate(spec, 800, rng), synth_generate(spec, 200, rng)
    t0 = time.perf_counter()
    res = train(tr, va, ModelConfig(), TrainConfig(seed=args.seed, epochs=args.epochs))
    elapsed = time.perf_counter() - t0
    for m in res.history:
        print(m.row())
    ev = evaluate(res.model, va)
    print(f"accuracy={ev['accuracy']:.6g} auroc={ev['auroc']:.6g} cwr={ev['cwr']:.6g} train_s={elapsed:.1f}")
    for k, v in fidelity(res.model, tr, va, seed=args.seed).items():
        print(f"{k}={v:.6g}")


if __name__ == "__main__":
    main()
