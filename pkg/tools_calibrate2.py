"""Explore harder configs so the dilation ablation shows a real gap (scratch)."""
import time

import numpy as np

from tempadv.attack import AttackConfig, team_generate, team_train
from tempadv.data import SynthClassConfig, SynthConfig, gen_synthetic, make_windows
from tempadv.metrics import compute_asr, compute_mar
from tempadv.models import TrainConfig, train_classifier


def build(seed, nfg, noise, ca, cn, fg=0.02):
    cfg = SynthConfig(
        classes=[
            SynthClassConfig("normal", records=8960, coupling=cn),
            SynthClassConfig("attack", records=8960, coupling=ca, mean_shift=1.0),
        ],
        feature_count=64, nonfunctional_count=24,
        noise=noise, functional_gap=fg, nonfunctional_gap=nfg,
    )
    return gen_synthetic(cfg, seed=seed)


def trial(name, seed, nfg, noise, ca, cn, dilations=(1.0, 1.5, 2.0), epochs=60, train_n=300):
    ds = build(seed, nfg, noise, ca, cn)
    windows = make_windows(ds, 8, 6, 2, "attack", seed=seed + 1000)
    train_wins, test_wins = windows[:train_n], windows[1000:1100]
    kinds = ("ornn", "lstm", "gru")
    targets = {}
    for i, kind in enumerate(kinds):
        targets[kind] = train_classifier(ds, TrainConfig(
            cell_kind=kind, epochs=60, hidden_dim=32, seed=seed * 10 + i,
            window_batch=128, early_stop_accuracy=0.97))
    accs = {k: round(targets[k].train_summary["holdout_accuracy"], 3) for k in kinds}
    mars = {k: round(compute_mar(targets[k], test_wins, 1)[0].percent, 1) for k in kinds}
    print(f"[{name}] seed {seed} acc={accs} mar={mars}")
    for dil in dilations:
        wb, off = [], []
        for i, kind in enumerate(kinds):
            sur = train_classifier(ds, TrainConfig(
                cell_kind=kind, epochs=60, hidden_dim=32, seed=seed * 10 + i + 5,
                window_batch=128, dilation=dil, data_fraction=0.5,
                early_stop_accuracy=0.97), role="surrogate")
            art = team_train(sur, train_wins, AttackConfig(
                attack_type="attack", epoch_n=epochs, seed=seed * 10 + i,
                dilation=dil, window_batch=256))
            comp = team_generate(art, test_wins)
            for tk in kinds:
                v = compute_asr(targets[tk], comp)[0].percent
                (wb if tk == kind else off).append(v)
        print(f"   dil {dil}: whitebox={np.mean(wb):.1f} {[round(v,1) for v in wb]} "
              f"offdiag={np.mean(off):.1f}")


if __name__ == "__main__":
    t0 = time.time()
    trial("hardA nfg.05 n.12", 0, nfg=0.05, noise=0.12, ca=0.9, cn=0.25)
    trial("hardB nfg.04 n.14", 0, nfg=0.04, noise=0.14, ca=0.9, cn=0.25)
    trial("hardC nfg.06 n.12 ca.95", 0, nfg=0.06, noise=0.12, ca=0.95, cn=0.2)
    print(f"total {time.time()-t0:.0f}s")
