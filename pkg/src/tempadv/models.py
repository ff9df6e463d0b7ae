"""Training and serving of the recurrent traffic classifiers.

Two roles share one architecture (single recurrent layer + linear head,
one label per window position): the defender's target model, trained on
the full training data with dilation 1, and the attacker's surrogate,
trained on a seeded shuffled half of the records with time dilation
active. Record-level subsampling deliberately scrambles the temporal
chains the full data carries, which is exactly the handicap the
dilation coefficient is there to compensate for.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cells
from .container import load_container, save_container
from .data import Dataset, FeatureEncoder, class_windows
from .errors import ConfigError, IntegrityError, NumericError, UsageError
from .nn import Adam, DenseLayer, Tape, Tensor, add, linear, reduce_mean, softmax_cross_entropy_rows
from .schema import FeatureSchema, schema_from_dict
from .util import sha256_arrays

CHECKPOINT_KIND = "classifier"


@dataclass
class TrainConfig:
    cell_kind: str = "gru"
    epochs: int = 40
    lr: float = 1e-3
    seed: int = 0
    hidden_dim: int = 64
    time_n: int = 8
    dilation: float = 1.0
    data_fraction: float = 1.0
    window_batch: int = 32
    holdout_fraction: float = 0.1
    dilate_input_weights: bool = True
    early_stop_accuracy: float | None = None

    def __post_init__(self) -> None:
        if self.cell_kind not in cells.CELL_KINDS:
            raise ConfigError(f"unknown cell kind {self.cell_kind!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0.0 < self.data_fraction <= 1.0):
            raise ConfigError("data_fraction must be in (0, 1]")
        if not (np.isfinite(self.dilation) and self.dilation > 0):
            raise ConfigError("dilation must be finite and > 0")


@dataclass
class ClassifierModel:
    cell_kind: str
    cell: cells.CellParams
    head: DenseLayer
    class_names: list[str]
    normal_class: str
    role: str = "target"  # target | surrogate
    encoder: FeatureEncoder | None = None
    config: TrainConfig | None = None
    train_summary: dict = field(default_factory=dict)

    @property
    def dilation(self) -> float:
        return self.cell.dilation

    @property
    def normal_index(self) -> int:
        return self.class_names.index(self.normal_class)

    @property
    def feature_width(self) -> int:
        return self.cell.input_dim

    def parameters(self) -> list[Tensor]:
        return self.cell.parameters() + self.head.parameters()

    def parameter_hash(self) -> str:
        return sha256_arrays([p.data for p in self.parameters()])


def assert_attack_target(model: ClassifierModel) -> None:
    """Targets under evaluation must be undilated: dilation exactly 1."""
    if model.role == "target" and model.dilation != 1.0:
        raise UsageError(
            f"model tagged 'target' has dilation {model.dilation}; targets must use 1.0"
        )


def _subsample_records(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, str]:
    """Seeded shuffle of record indices, prefix kept in shuffled order.

    The shuffled order is intentional: the partial view loses the
    original temporal adjacency, like traffic captured by sniffing.
    """
    if fraction >= 1.0:
        return dataset, sha256_arrays([np.arange(len(dataset))])
    n = len(dataset)
    take = max(1, int(np.floor(n * fraction)))
    order = np.random.default_rng(seed).permutation(n)[:take]
    sub = Dataset(dataset.features[order], dataset.labels[order], dataset.schema, dataset.encoder)
    return sub, sha256_arrays([order])


def _window_stacks(dataset: Dataset, time_n: int) -> tuple[np.ndarray, np.ndarray]:
    """All homogeneous class windows pooled: (W, T, F) plus window labels."""
    stacks, labels = [], []
    for ci, name in enumerate(dataset.schema.class_names):
        if not np.any(dataset.labels == ci):
            continue
        w = class_windows(dataset, time_n, name)
        stacks.append(w)
        labels.append(np.full(w.shape[0], ci, dtype=np.int64))
    if not stacks:
        raise ConfigError("dataset has no windowable class")
    return np.vstack(stacks), np.concatenate(labels)


def window_logits(model: ClassifierModel, batch: np.ndarray) -> list[Tensor]:
    """Per-step logit Tensors for a (B, T, F) batch; tape-aware."""
    if batch.ndim != 3 or batch.shape[2] != model.feature_width:
        raise UsageError(
            f"windows must be (B, T, {model.feature_width}), got {batch.shape}"
        )
    xs = [Tensor(batch[:, t, :]) for t in range(batch.shape[1])]
    states = cells.unroll(model.cell_kind, model.cell, xs)
    return [linear(st.h, model.head.weights, model.head.bias) for st in states]


def predict_window(model: ClassifierModel, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels and logits for one (T, F) window or a (B, T, F) batch.

    Label ties break toward the lowest class index (argmax convention).
    """
    single = window.ndim == 2
    batch = window[None, ...] if single else window
    logits = np.stack([lg.data for lg in window_logits(model, batch)], axis=1)  # (B, T, C)
    labels = np.argmax(logits, axis=2)
    if single:
        return labels[0], logits[0]
    return labels, logits


def _accuracy(model: ClassifierModel, wins: np.ndarray, wlabels: np.ndarray,
              batch: int = 256) -> float:
    hit = 0
    total = 0
    for i in range(0, len(wins), batch):
        chunk = wins[i:i + batch]
        labels, _ = predict_window(model, chunk)
        hit += int((labels == wlabels[i:i + batch, None]).sum())
        total += labels.size
    return hit / total if total else 0.0


def train_classifier(dataset: Dataset, cfg: TrainConfig, role: str = "target") -> ClassifierModel:
    """Train one classifier; deterministic given (dataset, cfg).

    Loss is the per-step cross entropy summed over each window and
    averaged over the window batch. Raises NumericError with epoch,
    batch and gradient-norm diagnostics if the loss leaves the reals.
    """
    rng = np.random.default_rng(cfg.seed)
    data, selection_hash = _subsample_records(dataset, cfg.data_fraction, cfg.seed)
    wins, wlabels = _window_stacks(data, cfg.time_n)
    order = rng.permutation(len(wins))
    wins, wlabels = wins[order], wlabels[order]
    n_hold = int(len(wins) * cfg.holdout_fraction)
    hold_w, hold_y = wins[:n_hold], wlabels[:n_hold]
    train_w, train_y = wins[n_hold:], wlabels[n_hold:]
    if len(train_w) == 0:
        raise ConfigError("no training windows left after holdout split")

    width = dataset.features.shape[1]
    n_classes = len(dataset.schema.class_names)
    cell = cells.init_cell(cfg.cell_kind, rng, width, cfg.hidden_dim,
                           dilation=cfg.dilation, dilate_input_weights=cfg.dilate_input_weights)
    head = DenseLayer(
        Tensor(rng.uniform(-1 / np.sqrt(cfg.hidden_dim), 1 / np.sqrt(cfg.hidden_dim),
                           size=(n_classes, cfg.hidden_dim))),
        Tensor(np.zeros(n_classes)),
        "linear",
    )
    model = ClassifierModel(cfg.cell_kind, cell, head, list(dataset.schema.class_names),
                            dataset.schema.normal_class, role=role,
                            encoder=dataset.encoder, config=cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)

    epochs_run = 0
    last_loss = float("nan")
    for epoch in range(cfg.epochs):
        eorder = rng.permutation(len(train_w))
        for bi, start in enumerate(range(0, len(eorder), cfg.window_batch)):
            sel = eorder[start:start + cfg.window_batch]
            batch, ylab = train_w[sel], train_y[sel]
            opt.zero_grad()
            with Tape() as tape:
                logits = window_logits(model, batch)
                total = None
                for lg in logits:
                    ce = softmax_cross_entropy_rows(lg, ylab)
                    total = ce if total is None else add(total, ce)
                loss = reduce_mean(total)
            if not np.isfinite(loss.data):
                gn = float(np.sqrt(sum((p.grad ** 2).sum() for p in model.parameters()
                                       if p.grad is not None)))
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {bi} (grad norm {gn:.3g})"
                )
            tape.backward(loss)
            opt.step()
            last_loss = float(loss.data)
        epochs_run = epoch + 1
        if cfg.early_stop_accuracy is not None and len(hold_w):
            if _accuracy(model, hold_w, hold_y) >= cfg.early_stop_accuracy:
                break

    model.train_summary = {
        "epochs_run": epochs_run,
        "final_loss": last_loss,
        "train_accuracy": _accuracy(model, train_w, train_y),
        "holdout_accuracy": _accuracy(model, hold_w, hold_y) if len(hold_w) else None,
        "train_windows": int(len(train_w)),
        "holdout_windows": int(len(hold_w)),
        "selection_hash": selection_hash,
    }
    return model


# ---------------------------------------------------------------------------
# checkpoints

_CELL_FIELDS = {
    "ornn": ["w_xh", "w_hh", "bias"],
    "lstm": ["w_xf", "w_hf", "b_f", "w_xi", "w_hi", "b_i",
             "w_xc", "w_hc", "b_c", "w_xo", "w_ho", "b_o"],
    "gru": ["w_xr", "w_hr", "b_r", "w_xz", "w_hz", "b_z", "w_xh", "w_hh", "b_h"],
}


def save_checkpoint(model: ClassifierModel, path: str | Path) -> str:
    """Write the model container plus its normalization sidecar; returns hash."""
    path = Path(path)
    arrays = {f"cell.{name}": getattr(model.cell, name).data for name in _CELL_FIELDS[model.cell_kind]}
    arrays["head.weights"] = model.head.weights.data
    arrays["head.bias"] = model.head.bias.data
    meta = {
        "kind": CHECKPOINT_KIND,
        "cell_kind": model.cell_kind,
        "dilation": model.dilation,
        "dilate_input_weights": getattr(model.cell, "dilate_input_weights", True),
        "class_names": model.class_names,
        "normal_class": model.normal_class,
        "role": model.role,
        "config": asdict(model.config) if model.config else None,
        "train_summary": model.train_summary,
        "schema_name": model.encoder.schema.name if model.encoder else None,
    }
    digest = save_container(path, meta, arrays)
    if model.encoder is not None:
        sidecar = path.with_suffix(path.suffix + ".norm.json")
        payload = {"encoder": model.encoder.to_dict(), "schema": _schema_to_dict(model.encoder.schema)}
        sidecar.write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                           encoding="utf-8")
    return digest


def _schema_to_dict(schema: FeatureSchema) -> dict:
    return {
        "name": schema.name,
        "label_column": schema.label_column,
        "classes": schema.class_names,
        "normal_class": schema.normal_class,
        "columns": [
            {"name": c.name, "kind": c.kind,
             **({"min": c.vmin} if c.vmin is not None else {}),
             **({"max": c.vmax} if c.vmax is not None else {})}
            for c in schema.columns
        ],
        "label_map": schema.label_map,
        "drop_labels": schema.drop_labels,
        "nonfunctional": {k: [schema.columns[i].name for i in np.nonzero(v)[0]]
                          for k, v in schema.nonfunctional_masks.items()},
        "notes": schema.notes,
    }


def load_checkpoint(path: str | Path) -> ClassifierModel:
    path = Path(path)
    meta, arrays, _ = load_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise IntegrityError(f"{path}: container holds {meta.get('kind')!r}, not a classifier")
    cell_kind = meta["cell_kind"]
    if cell_kind not in _CELL_FIELDS:
        raise IntegrityError(f"{path}: unknown cell kind {cell_kind!r}")
    kwargs = {name: Tensor(arrays[f"cell.{name}"]) for name in _CELL_FIELDS[cell_kind]}
    kwargs["dilation"] = float(meta["dilation"])
    if cell_kind != "ornn":
        kwargs["dilate_input_weights"] = bool(meta.get("dilate_input_weights", True))
    cls = {"ornn": cells.OrnnParams, "lstm": cells.LstmParams, "gru": cells.GruParams}[cell_kind]
    cell = cls(**kwargs)
    head = DenseLayer(Tensor(arrays["head.weights"]), Tensor(arrays["head.bias"]), "linear")
    encoder = None
    sidecar = path.with_suffix(path.suffix + ".norm.json")
    if sidecar.exists():
        payload = json.loads(sidecar.read_text(encoding="utf-8"))
        schema = schema_from_dict(payload["schema"])
        encoder = FeatureEncoder.from_dict(payload["encoder"], schema)
    cfg = TrainConfig(**meta["config"]) if meta.get("config") else None
    return ClassifierModel(
        cell_kind, cell, head, list(meta["class_names"]), meta["normal_class"],
        role=meta.get("role", "target"), encoder=encoder, config=cfg,
        train_summary=dict(meta.get("train_summary") or {}),
    )
