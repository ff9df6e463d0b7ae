"""Measure dilation gap vs attack budget across seeds (scratch)."""
import sys
import time

import numpy as np

from tempadv.attack import AttackConfig, team_generate, team_train
from tempadv.data import SynthClassConfig, SynthConfig, gen_synthetic, make_windows
from tempadv.metrics import compute_asr
from tempadv.models import TrainConfig, train_classifier


def build(seed):
    cfg = SynthConfig(
        classes=[
            SynthClassConfig("normal", records=8960, coupling=0.25),
            SynthClassConfig("attack", records=8960, coupling=0.85, mean_shift=1.0),
        ],
        feature_count=64, nonfunctional_count=24,
        noise=0.12, functional_gap=0.02, nonfunctional_gap=0.10,
    )
    return gen_synthetic(cfg, seed=seed)


def offdiag(seed, dil, epochs, train_n):
    ds = build(seed)
    windows = make_windows(ds, 8, 6, 2, "attack", seed=seed + 1000)
    train_wins, test_wins = windows[:train_n], windows[1000:1120]
    kinds = ("ornn", "lstm", "gru")
    targets, arts = {}, {}
    for i, kind in enumerate(kinds):
        targets[kind] = train_classifier(ds, TrainConfig(
            cell_kind=kind, epochs=60, hidden_dim=32, seed=seed * 10 + i,
            window_batch=128, early_stop_accuracy=0.97))
        sur = train_classifier(ds, TrainConfig(
            cell_kind=kind, epochs=60, hidden_dim=32, seed=seed * 10 + i + 5,
            window_batch=128, dilation=dil, data_fraction=0.5,
            early_stop_accuracy=0.97), role="surrogate")
        arts[kind] = team_train(sur, train_wins, AttackConfig(
            attack_type="attack", epoch_n=epochs, seed=seed * 10 + i,
            dilation=dil, window_batch=256))
    off, wb = [], []
    for sk in kinds:
        comp = team_generate(arts[sk], test_wins)
        for tk in kinds:
            v = compute_asr(targets[tk], comp)[0].percent
            (wb if sk == tk else off).append(v)
    return np.mean(off), np.mean(wb)


if __name__ == "__main__":
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 15
    train_n = int(sys.argv[2]) if len(sys.argv) > 2 else 300
    t0 = time.time()
    for seed in range(5):
        o1, w1 = offdiag(seed, 1.0, epochs, train_n)
        o2, w2 = offdiag(seed, 2.0, epochs, train_n)
        print(f"seed {seed} ep{epochs} n{train_n}: "
              f"dil1 off={o1:.1f} wb={w1:.1f} | dil2 off={o2:.1f} wb={w2:.1f} "
              f"| gap={o2-o1:+.1f}")
    print(f"total {time.time()-t0:.0f}s")
