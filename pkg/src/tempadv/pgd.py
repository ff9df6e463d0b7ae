"""Projected gradient descent baseline restricted to non-functional features.

Iterative signed-gradient descent on the cross entropy toward the normal
class at the perturbed window positions, projected after every step onto
the L-inf ball of radius epsilon around the originals intersected with
[0, 1]. Functional coordinates and the window's untouched suffix records
are frozen, so the perturbation budget matches the reconstruction
attack's exactly and metrics stay position-comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells
from .attack import ComposedWindow
from .data import TimeStepComposition
from .errors import ConfigError
from .models import ClassifierModel
from .nn import Tape, Tensor, add, linear, reduce_mean, softmax_cross_entropy_rows


@dataclass
class PgdConfig:
    epsilon: float = 0.3    # L-inf budget in normalized feature units
    step_size: float = 0.03
    steps: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.epsilon > 0 and self.step_size > self.epsilon:
            raise ConfigError("step_size must not exceed epsilon")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")


def pgd_attack(model: ClassifierModel, windows: list[TimeStepComposition],
               mask: np.ndarray, cfg: PgdConfig) -> list[ComposedWindow]:
    """Perturb the prefix positions of each window toward the normal class.

    `mask` is boolean over the feature width; True marks perturbable
    (non-functional) coordinates. With epsilon 0 the output equals the
    input exactly; with steps 1 this is masked FGSM.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigError("perturbation mask marks no coordinate")
    if not windows:
        return []
    adv_n = windows[0].adv_n
    org_n = windows[0].org_n
    for w in windows:
        if w.adv_n != adv_n or w.org_n != org_n:
            raise ConfigError("windows disagree on prefix/suffix composition")
    adv0 = np.stack([w.adv_records for w in windows])  # (B, adv_n, F)
    org = np.stack([w.org_records for w in windows])
    if mask.shape[0] != adv0.shape[2]:
        raise ConfigError(f"mask length {mask.shape[0]} vs feature width {adv0.shape[2]}")

    batch = adv0.shape[0]
    normal = np.full(batch, model.normal_index)
    lo = np.clip(adv0 - cfg.epsilon, 0.0, 1.0)
    hi = np.clip(adv0 + cfg.epsilon, 0.0, 1.0)
    x = adv0.copy()

    for _ in range(cfg.steps):
        step_tensors = [Tensor(x[:, t, :]) for t in range(adv_n)]
        xs = step_tensors + [Tensor(org[:, t, :]) for t in range(org_n)]
        with Tape() as tape:
            states = cells.unroll(model.cell_kind, model.cell, xs)
            total = None
            for t in range(adv_n):
                lg = linear(states[t].h, model.head.weights, model.head.bias)
                ce = softmax_cross_entropy_rows(lg, normal)
                total = ce if total is None else add(total, ce)
            loss = reduce_mean(total)
        tape.backward(loss)
        for t, xt in enumerate(step_tensors):
            g = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
            moved = x[:, t, :] - cfg.step_size * np.sign(g)
            moved = np.where(mask[None, :], moved, x[:, t, :])
            x[:, t, :] = np.clip(moved, lo[:, t, :], hi[:, t, :])

    out = []
    for i, w in enumerate(windows):
        records = np.vstack([x[i], org[i]])
        is_adv = np.zeros(w.time_n, dtype=bool)
        is_adv[:adv_n] = True
        out.append(ComposedWindow(records, is_adv, w.attack_type))
    return out
