"""Adversarial reconstruction of non-functional traffic features.

An autoencoder learns to rewrite only the non-functional columns of
attack records. Each training window splices the reconstructed prefix
records back onto their untouched functional columns, appends the
window's original suffix records unchanged, runs the whole window
through a frozen (time-dilated) surrogate classifier, and pulls every
position's prediction toward the normal class:

    prefix loss   cross entropy of reconstructed-record positions vs normal
    suffix loss   cross entropy of untouched-record positions vs normal
    total         prefix + suffix

Gradients reach the autoencoder alone; the surrogate's weights never
move, and the hard column splice blocks gradients into functional
columns by construction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cells
from .container import load_container, save_container
from .data import TimeStepComposition
from .errors import ConfigError, IntegrityError, NumericError, UsageError
from .models import ClassifierModel
from .nn import (
    Adam,
    DenseLayer,
    Tape,
    Tensor,
    add,
    dense_forward,
    linear,
    mul,
    reduce_mean,
    scatter_columns,
    softmax_cross_entropy_rows,
)

ARTIFACT_KIND = "attack-generator"


@dataclass
class AutoEncoderParams:
    """Four dense layers around a bottleneck; final sigmoid keeps outputs in [0,1]."""

    layers: list[DenseLayer]

    @property
    def input_width(self) -> int:
        return self.layers[0].weights.data.shape[1]

    @property
    def output_width(self) -> int:
        return self.layers[-1].weights.data.shape[0]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def init_autoencoder(rng: np.random.Generator, input_width: int,
                     hidden_width: int | None = None,
                     bottleneck: int | None = None) -> AutoEncoderParams:
    from .nn import init_dense

    if input_width < 1:
        raise ConfigError("autoencoder input width must be >= 1")
    hidden = hidden_width if hidden_width else input_width
    mid = bottleneck if bottleneck else math.ceil(input_width / 2)
    return AutoEncoderParams([
        init_dense(rng, hidden, input_width, "tanh"),
        init_dense(rng, mid, hidden, "tanh"),
        init_dense(rng, hidden, mid, "tanh"),
        init_dense(rng, input_width, hidden, "sigmoid"),
    ])


def autoencoder_forward(x: Tensor, ae: AutoEncoderParams) -> Tensor:
    if x.data.shape[-1] != ae.input_width:
        raise UsageError(
            f"autoencoder expects width {ae.input_width}, got {x.data.shape[-1]}"
        )
    h = x
    for layer in ae.layers:
        h = dense_forward(h, layer)
    return h


@dataclass
class AttackConfig:
    attack_type: str
    time_n: int = 8
    adv_n: int = 6
    org_n: int = 2
    epoch_n: int = 100
    lr: float = 1e-3
    seed: int = 0
    dilation: float = 1.0
    keep_best: bool = True
    window_batch: int = 128
    validation_fraction: float = 0.1
    ae_hidden: int | None = None
    ae_bottleneck: int | None = None
    suffix_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.adv_n + self.org_n != self.time_n:
            raise ConfigError(
                f"adv_n + org_n must equal time_n ({self.adv_n}+{self.org_n} != {self.time_n})"
            )
        if self.adv_n < 1:
            raise ConfigError("need at least one reconstructed record per window")
        if self.epoch_n < 1:
            raise ConfigError("epoch_n must be >= 1")


@dataclass
class AttackArtifact:
    """A trained generator plus the provenance transfer runs depend on."""

    autoencoder: AutoEncoderParams
    config: AttackConfig
    surrogate_hash: str
    surrogate_cell_kind: str
    attack_class_index: int
    nonfunctional_idx: np.ndarray
    feature_width: int
    loss_curve: list[dict] = field(default_factory=list)
    best_epoch: int | None = None


@dataclass
class ComposedWindow:
    """A full window after generation: records plus per-position provenance."""

    records: np.ndarray  # (time_n, W)
    is_adv: np.ndarray   # (time_n,) bool, True at reconstructed positions
    attack_type: int


def compose_window(comp: TimeStepComposition, ae: AutoEncoderParams | None,
                   nonfunctional_idx: np.ndarray) -> ComposedWindow:
    """Splice reconstructed non-functional features into the window's prefix.

    `ae=None` means the identity generator: the composed window equals
    the original. Functional columns and suffix records always pass
    through byte-identical.
    """
    records = comp.full_window().copy()
    if ae is not None:
        prefix = records[:comp.adv_n]
        recon = autoencoder_forward(Tensor(prefix[:, nonfunctional_idx]), ae).data
        prefix[:, nonfunctional_idx] = recon
    is_adv = np.zeros(comp.time_n, dtype=bool)
    is_adv[:comp.adv_n] = True
    return ComposedWindow(records, is_adv, comp.attack_type)


def _stack_windows(windows: list[TimeStepComposition], cfg: AttackConfig) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise ConfigError("no windows to attack")
    kinds = {w.attack_type for w in windows}
    if len(kinds) != 1:
        raise UsageError(f"windows mix attack classes {sorted(kinds)}")
    for w in windows:
        if w.adv_n != cfg.adv_n or w.org_n != cfg.org_n:
            raise ConfigError(
                f"window composition {w.adv_n}+{w.org_n} does not match config "
                f"{cfg.adv_n}+{cfg.org_n}"
            )
    adv = np.stack([w.adv_records for w in windows])
    org = np.stack([w.org_records for w in windows])
    return adv, org


def window_losses(surrogate: ClassifierModel, ae: AutoEncoderParams,
                  adv: np.ndarray, org: np.ndarray, nf_idx: np.ndarray,
                  suffix_weight: float = 1.0) -> tuple[Tensor, Tensor, Tensor]:
    """(prefix, suffix, total) losses over a (B, adv_n/org_n, F) window batch.

    Tape-aware: run under a Tape to train, without one to audit the loss.
    """
    batch = adv.shape[0]
    normal = np.full(batch, surrogate.normal_index)
    xs: list[Tensor] = []
    for t in range(adv.shape[1]):
        recon = autoencoder_forward(Tensor(adv[:, t, :][:, nf_idx]), ae)
        xs.append(scatter_columns(adv[:, t, :], recon, nf_idx))
    for t in range(org.shape[1]):
        xs.append(Tensor(org[:, t, :]))
    states = cells.unroll(surrogate.cell_kind, surrogate.cell, xs)
    logits = [linear(st.h, surrogate.head.weights, surrogate.head.bias) for st in states]

    prefix_total = None
    for t in range(adv.shape[1]):
        ce = softmax_cross_entropy_rows(logits[t], normal)
        prefix_total = ce if prefix_total is None else add(prefix_total, ce)
    prefix = reduce_mean(prefix_total)

    suffix_total = None
    for t in range(adv.shape[1], len(logits)):
        ce = softmax_cross_entropy_rows(logits[t], normal)
        suffix_total = ce if suffix_total is None else add(suffix_total, ce)
    if suffix_total is None:
        suffix = Tensor(np.asarray(0.0))
    else:
        suffix = reduce_mean(suffix_total)
        if suffix_weight != 1.0:
            suffix = mul(suffix, Tensor(np.asarray(suffix_weight)))
    return prefix, suffix, add(prefix, suffix)


def generator_success(surrogate: ClassifierModel, ae: AutoEncoderParams | None,
                      windows: list[TimeStepComposition], nf_idx: np.ndarray) -> float:
    """Fraction of all window positions the surrogate labels normal."""
    from .models import predict_window

    if not windows:
        return 0.0
    composed = np.stack([compose_window(w, ae, nf_idx).records for w in windows])
    labels, _ = predict_window(surrogate, composed)
    return float((labels == surrogate.normal_index).mean())


def _snapshot(ae: AutoEncoderParams) -> list[np.ndarray]:
    return [p.data.copy() for p in ae.parameters()]


def _restore(ae: AutoEncoderParams, snap: list[np.ndarray]) -> None:
    for p, s in zip(ae.parameters(), snap):
        p.data[:] = s


def team_train(surrogate: ClassifierModel, windows: list[TimeStepComposition],
               cfg: AttackConfig) -> AttackArtifact:
    """Train the generator against a frozen surrogate; Algorithm: per epoch,
    reconstruct the prefix, splice, run the spliced window, minimize the
    summed cross entropy toward normal.

    With keep_best, the snapshot with the highest surrogate-measured
    misjudgment rate on a held-out validation slice wins.
    """
    if surrogate.dilation != cfg.dilation:
        raise UsageError(
            f"surrogate dilation {surrogate.dilation} does not match config {cfg.dilation}"
        )
    if surrogate.encoder is None:
        raise UsageError("surrogate has no feature encoder; train or load it with one")
    nf_idx = np.nonzero(surrogate.encoder.expanded_mask(cfg.attack_type))[0]
    expect_cls = surrogate.encoder.schema.class_index(cfg.attack_type)
    adv_all, org_all = _stack_windows(windows, cfg)
    if windows[0].attack_type != expect_cls:
        raise UsageError(
            f"windows carry class {windows[0].attack_type}, config names {expect_cls}"
        )
    if adv_all.shape[2] != surrogate.feature_width:
        raise UsageError(
            f"window width {adv_all.shape[2]} does not match surrogate {surrogate.feature_width}"
        )

    frozen_hash = surrogate.parameter_hash()
    rng = np.random.default_rng(cfg.seed)
    ae = init_autoencoder(rng, len(nf_idx), cfg.ae_hidden, cfg.ae_bottleneck)
    opt = Adam(ae.parameters(), lr=cfg.lr)

    n_val = int(len(windows) * cfg.validation_fraction) if cfg.keep_best else 0
    val_windows = windows[:n_val]
    adv, org = adv_all[n_val:], org_all[n_val:]
    if adv.shape[0] == 0:
        raise ConfigError("validation slice consumed every window")

    curve: list[dict] = []
    best_success = -1.0
    best_epoch: int | None = None
    best_snap: list[np.ndarray] | None = None
    for epoch in range(cfg.epoch_n):
        order = rng.permutation(adv.shape[0])
        sums = np.zeros(3)
        batches = 0
        for start in range(0, len(order), cfg.window_batch):
            sel = order[start:start + cfg.window_batch]
            opt.zero_grad()
            with Tape() as tape:
                prefix, suffix, total = window_losses(
                    surrogate, ae, adv[sel], org[sel], nf_idx, cfg.suffix_weight)
            if not np.isfinite(total.data):
                raise NumericError(f"non-finite attack loss at epoch {epoch}")
            tape.backward(total)
            opt.step()
            sums += [float(prefix.data), float(suffix.data), float(total.data)]
            batches += 1
        curve.append({
            "epoch": epoch,
            "prefix_loss": sums[0] / batches,
            "suffix_loss": sums[1] / batches,
            "total_loss": sums[2] / batches,
        })
        if cfg.keep_best and val_windows:
            success = generator_success(surrogate, ae, val_windows, nf_idx)
            if success > best_success:
                best_success = success
                best_epoch = epoch
                best_snap = _snapshot(ae)

    if cfg.keep_best and best_snap is not None:
        _restore(ae, best_snap)

    if surrogate.parameter_hash() != frozen_hash:
        raise NumericError("surrogate parameters changed during attack training")

    return AttackArtifact(
        autoencoder=ae,
        config=cfg,
        surrogate_hash=frozen_hash,
        surrogate_cell_kind=surrogate.cell_kind,
        attack_class_index=expect_cls,
        nonfunctional_idx=nf_idx,
        feature_width=int(adv_all.shape[2]),
        loss_curve=curve,
        best_epoch=best_epoch,
    )


def team_generate(artifact: AttackArtifact,
                  windows: list[TimeStepComposition]) -> list[ComposedWindow]:
    """Compose adversarial windows from held-out originals; pure and deterministic."""
    out = []
    for w in windows:
        if w.attack_type != artifact.attack_class_index:
            raise UsageError(
                f"window class {w.attack_type} does not match artifact "
                f"{artifact.attack_class_index}"
            )
        if w.full_window().shape[1] != artifact.feature_width:
            raise UsageError("window width does not match artifact")
        out.append(compose_window(w, artifact.autoencoder, artifact.nonfunctional_idx))
    return out


def pretrain_identity(ae: AutoEncoderParams, records: np.ndarray, epochs: int = 200,
                      lr: float = 1e-3, seed: int = 0, batch: int = 256) -> list[float]:
    """Fit the autoencoder to reproduce clean records (mean squared error)."""
    rng = np.random.default_rng(seed)
    opt = Adam(ae.parameters(), lr=lr)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(records.shape[0])
        total = 0.0
        nb = 0
        for start in range(0, len(order), batch):
            x = records[order[start:start + batch]]
            opt.zero_grad()
            with Tape() as tape:
                recon = autoencoder_forward(Tensor(x), ae)
                diff = add(recon, Tensor(-x))
                loss = reduce_mean(mul(diff, diff))
            tape.backward(loss)
            opt.step()
            total += float(loss.data)
            nb += 1
        losses.append(total / nb)
    return losses


# ---------------------------------------------------------------------------
# persistence (same container format as model checkpoints)


def save_artifact(artifact: AttackArtifact, path: str | Path) -> str:
    arrays = {}
    for i, layer in enumerate(artifact.autoencoder.layers):
        arrays[f"ae.{i}.weights"] = layer.weights.data
        arrays[f"ae.{i}.bias"] = layer.bias.data
    arrays["nonfunctional_idx"] = artifact.nonfunctional_idx.astype(np.int64)
    meta = {
        "kind": ARTIFACT_KIND,
        "config": asdict(artifact.config),
        "surrogate_hash": artifact.surrogate_hash,
        "surrogate_cell_kind": artifact.surrogate_cell_kind,
        "attack_class_index": artifact.attack_class_index,
        "feature_width": artifact.feature_width,
        "loss_curve": artifact.loss_curve,
        "best_epoch": artifact.best_epoch,
        "activations": [layer.activation for layer in artifact.autoencoder.layers],
    }
    return save_container(path, meta, arrays)


def load_artifact(path: str | Path) -> AttackArtifact:
    meta, arrays, _ = load_container(path)
    if meta.get("kind") != ARTIFACT_KIND:
        raise IntegrityError(f"{path}: container holds {meta.get('kind')!r}, not an attack generator")
    layers = []
    for i, act in enumerate(meta["activations"]):
        layers.append(DenseLayer(Tensor(arrays[f"ae.{i}.weights"]),
                                 Tensor(arrays[f"ae.{i}.bias"]), act))
    return AttackArtifact(
        autoencoder=AutoEncoderParams(layers),
        config=AttackConfig(**meta["config"]),
        surrogate_hash=meta["surrogate_hash"],
        surrogate_cell_kind=meta["surrogate_cell_kind"],
        attack_class_index=int(meta["attack_class_index"]),
        nonfunctional_idx=arrays["nonfunctional_idx"].astype(np.int64),
        feature_width=int(meta["feature_width"]),
        loss_curve=list(meta.get("loss_curve") or []),
        best_epoch=meta.get("best_epoch"),
    )
