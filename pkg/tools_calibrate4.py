"""Probe intermediate configs: imperfect-but-accurate models (scratch)."""
import sys
import time
import numpy as np
from tempadv.attack import AttackConfig, team_generate, team_train
from tempadv.data import SynthClassConfig, SynthConfig, gen_synthetic, make_windows
from tempadv.metrics import compute_asr
from tempadv.models import TrainConfig, train_classifier

def build(seed, nfg, noise, ca=0.85, cn=0.25):
    cfg = SynthConfig(
        classes=[SynthClassConfig("normal", records=8960, coupling=cn),
                 SynthClassConfig("attack", records=8960, coupling=ca, mean_shift=1.0)],
        feature_count=64, nonfunctional_count=24,
        noise=noise, functional_gap=0.02, nonfunctional_gap=nfg)
    return gen_synthetic(cfg, seed=seed)

def run(tag, nfg, noise, seeds=(0,1,2), dils=(1.0, 2.0), epochs=40, train_n=300):
    for seed in seeds:
        ds = build(seed, nfg, noise)
        windows = make_windows(ds, 8, 6, 2, "attack", seed=seed + 1000)
        train_wins, test_wins = windows[:train_n], windows[1000:1120]
        kinds = ("ornn", "lstm", "gru")
        targets = {}
        accs = []
        for i, kind in enumerate(kinds):
            targets[kind] = train_classifier(ds, TrainConfig(
                cell_kind=kind, epochs=60, hidden_dim=32, seed=seed*10+i,
                window_batch=128, early_stop_accuracy=0.97))
            accs.append(targets[kind].train_summary["holdout_accuracy"])
        row = f"[{tag}] seed {seed} acc={min(accs):.3f}"
        for dil in dils:
            off, wb = [], []
            for i, kind in enumerate(kinds):
                sur = train_classifier(ds, TrainConfig(
                    cell_kind=kind, epochs=60, hidden_dim=32, seed=seed*10+i+5,
                    window_batch=128, dilation=dil, data_fraction=0.5,
                    early_stop_accuracy=0.97), role="surrogate")
                art = team_train(sur, train_wins, AttackConfig(
                    attack_type="attack", epoch_n=epochs, seed=seed*10+i,
                    dilation=dil, window_batch=256))
                comp = team_generate(art, test_wins)
                for tk in kinds:
                    v = compute_asr(targets[tk], comp)[0].percent
                    (wb if tk == kind else off).append(v)
            row += f" | d{dil}: wb={np.mean(wb):.1f} off={np.mean(off):.1f}"
        print(row, flush=True)

if __name__ == "__main__":
    t0 = time.time()
    run("nfg.07 n.11", 0.07, 0.11)
    run("nfg.08 n.12", 0.08, 0.12)
    print(f"total {time.time()-t0:.0f}s")
