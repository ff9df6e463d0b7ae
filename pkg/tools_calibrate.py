"""Scratch calibration for the desk-scale acceptance dataset (not shipped)."""
import time

import numpy as np

from tempadv.attack import AttackConfig, team_generate, team_train
from tempadv.data import SynthClassConfig, SynthConfig, gen_synthetic, make_windows
from tempadv.metrics import as_control_windows, compute_asr, compute_mar, next_moment_eval
from tempadv.models import TrainConfig, train_classifier

FG, NFG, NOISE = 0.02, 0.10, 0.12


def build(seed):
    cfg = SynthConfig(
        classes=[
            SynthClassConfig("normal", records=8960, coupling=0.25),
            SynthClassConfig("attack", records=8960, coupling=0.85, mean_shift=1.0),
        ],
        feature_count=64,
        nonfunctional_count=24,
        noise=NOISE,
        functional_gap=FG,
        nonfunctional_gap=NFG,
    )
    return gen_synthetic(cfg, seed=seed)


def run_seed(seed, dilation, kinds=("ornn", "lstm", "gru"), attack_epochs=120):
    ds = build(seed)
    windows = make_windows(ds, 8, 6, 2, "attack", seed=seed + 1000)
    train_wins, test_wins = windows[:1000], windows[1000:1100]
    targets, artifacts = {}, {}
    t0 = time.time()
    for i, kind in enumerate(kinds):
        tc = TrainConfig(cell_kind=kind, epochs=60, hidden_dim=32, seed=seed * 10 + i,
                         window_batch=128, early_stop_accuracy=0.97)
        targets[kind] = train_classifier(ds, tc)
        sc = TrainConfig(cell_kind=kind, epochs=60, hidden_dim=32, seed=seed * 10 + i + 5,
                         window_batch=128, dilation=dilation, data_fraction=0.5,
                         early_stop_accuracy=0.97)
        sur = train_classifier(ds, sc, role="surrogate")
        ac = AttackConfig(attack_type="attack", epoch_n=attack_epochs, seed=seed * 10 + i,
                          dilation=dilation, window_batch=256)
        artifacts[kind] = team_train(sur, train_wins[:300], ac)
    acc = {k: targets[k].train_summary["holdout_accuracy"] for k in kinds}
    asr = {}
    for sk in kinds:
        comp = team_generate(artifacts[sk], test_wins)
        for tk in kinds:
            asr[(sk, tk)] = compute_asr(targets[tk], comp)[0].percent
    mar = {k: compute_mar(targets[k], test_wins, 1)[0].percent for k in kinds}
    base1 = {k: next_moment_eval(targets[k], as_control_windows(test_wins))[0].percent
             for k in kinds}
    up1 = {}
    for sk in kinds:
        comp = team_generate(artifacts[sk], test_wins)
        up1[sk] = next_moment_eval(targets[sk], comp)[0].percent
    print(f"seed {seed} dil {dilation}: {time.time()-t0:.0f}s acc={ {k: round(v,3) for k,v in acc.items()} }")
    print(f"  mar={ {k: round(v,1) for k,v in mar.items()} } base_mar1={ {k: round(v,1) for k,v in base1.items()} }")
    print(f"  whitebox asr={ {k: round(asr[(k,k)],1) for k in kinds} }")
    off = [asr[(s, t)] for s in kinds for t in kinds if s != t]
    print(f"  mean off-diag asr={np.mean(off):.1f}  mar1={ {k: round(up1[k],1) for k in kinds} }")
    return np.mean(off), asr, acc, mar, base1, up1


if __name__ == "__main__":
    for seed in (0, 1):
        run_seed(seed, dilation=1.5)
        run_seed(seed, dilation=1.0)
