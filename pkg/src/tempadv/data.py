"""Dataset ingestion, normalization, windowing, and the synthetic substrate.

Records are rows of a traffic-feature CSV turned into float64 vectors in
[0, 1]: continuous columns are min-max scaled with statistics taken from
the training split only, categoricals are one-hot expanded with an
explicit `other` bucket for values unseen at fit time. The fitted
encoder is persisted as a sidecar next to every trained model so test
data always uses training statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, SchemaError, UsageError
from .schema import FeatureSchema, split_features, splice
from .util import sha256_arrays


@dataclass
class FeatureEncoder:
    """Fitted normalization + one-hot expansion for one schema.

    slot ranges map each schema column to a [start, stop) range of the
    expanded feature vector. Continuous columns occupy one slot;
    categorical columns occupy one slot per value seen at fit time plus
    a trailing `other` slot.
    """

    schema: FeatureSchema
    cont_min: dict[str, float]
    cont_max: dict[str, float]
    cat_values: dict[str, list[str]]
    unseen_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._slots: dict[str, tuple[int, int]] = {}
        pos = 0
        for col in self.schema.columns:
            if col.kind == "continuous":
                self._slots[col.name] = (pos, pos + 1)
                pos += 1
            else:
                n = len(self.cat_values[col.name]) + 1  # + other
                self._slots[col.name] = (pos, pos + n)
                pos += n
        self.width = pos

    def slot(self, column: str) -> tuple[int, int]:
        return self._slots[column]

    def expanded_mask(self, attack_type: str) -> np.ndarray:
        """Column-level non-functional mask widened to the encoded vector.

        One-hot groups are always functional, so only continuous columns
        can contribute perturbable slots.
        """
        colmask = self.schema.mask_for(attack_type)
        out = np.zeros(self.width, dtype=bool)
        for col, bit in zip(self.schema.columns, colmask):
            if bit and col.kind == "continuous":
                start, stop = self._slots[col.name]
                out[start:stop] = True
        return out

    def encode_continuous(self, column: str, values: np.ndarray) -> np.ndarray:
        lo = self.cont_min[column]
        hi = self.cont_max[column]
        if hi <= lo:
            return np.zeros_like(values)  # constant column convention
        return np.clip((values - lo) / (hi - lo), 0.0, 1.0)

    def denormalize_continuous(self, column: str, scaled: np.ndarray) -> np.ndarray:
        lo = self.cont_min[column]
        hi = self.cont_max[column]
        return scaled * (hi - lo) + lo

    def encode_rows(self, columns: dict[str, list[str]]) -> np.ndarray:
        n = len(next(iter(columns.values())))
        out = np.zeros((n, self.width))
        for col in self.schema.columns:
            start, stop = self._slots[col.name]
            raw = columns[col.name]
            if col.kind == "continuous":
                try:
                    vals = np.asarray([float(v) for v in raw])
                except ValueError as e:
                    raise InputError(f"column {col.name!r}: unparseable value ({e})") from None
                vals = np.nan_to_num(vals, nan=0.0, posinf=0.0, neginf=0.0)
                out[:, start] = self.encode_continuous(col.name, vals)
            else:
                lookup = {v: i for i, v in enumerate(self.cat_values[col.name])}
                other = stop - start - 1
                for r, v in enumerate(raw):
                    i = lookup.get(v)
                    if i is None:
                        i = other
                        self.unseen_counts[col.name] = self.unseen_counts.get(col.name, 0) + 1
                    out[r, start + i] = 1.0
        return out

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.name,
            "cont_min": self.cont_min,
            "cont_max": self.cont_max,
            "cat_values": self.cat_values,
        }

    @classmethod
    def from_dict(cls, raw: dict, schema: FeatureSchema) -> "FeatureEncoder":
        return cls(schema, dict(raw["cont_min"]), dict(raw["cont_max"]),
                   {k: list(v) for k, v in raw["cat_values"].items()})


def fit_encoder(columns: dict[str, list[str]], schema: FeatureSchema) -> FeatureEncoder:
    """Compute normalization constants from a training split.

    Columns with declared min/max in the schema keep them; the rest are
    measured from the data.
    """
    cont_min: dict[str, float] = {}
    cont_max: dict[str, float] = {}
    cat_values: dict[str, list[str]] = {}
    for col in schema.columns:
        raw = columns[col.name]
        if col.kind == "continuous":
            if col.vmin is not None and col.vmax is not None:
                cont_min[col.name], cont_max[col.name] = float(col.vmin), float(col.vmax)
            else:
                vals = np.asarray([float(v) for v in raw])
                vals = vals[np.isfinite(vals)]
                if vals.size == 0:
                    cont_min[col.name] = cont_max[col.name] = 0.0
                else:
                    cont_min[col.name] = float(vals.min())
                    cont_max[col.name] = float(vals.max())
        else:
            cat_values[col.name] = sorted(set(raw))
    return FeatureEncoder(schema, cont_min, cont_max, cat_values)


@dataclass
class Dataset:
    """Encoded records: features (N, W) in [0,1], labels (N,) class indices."""

    features: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema
    encoder: FeatureEncoder

    def __len__(self) -> int:
        return self.features.shape[0]

    def content_hash(self) -> str:
        return sha256_arrays([self.features, self.labels])

    def class_indices(self, class_name: str) -> np.ndarray:
        return np.nonzero(self.labels == self.schema.class_index(class_name))[0]


def read_csv_columns(path: str | Path, schema: FeatureSchema) -> dict[str, list[str]]:
    """Read a feature CSV into columnar string lists, label column included.

    Headered UTF-8 CSV is the contract; a headerless file whose row width
    matches the schema (with or without a trailing extra column, as in the
    official NSL-KDD dumps) is accepted with schema column order.
    """
    expected = schema.column_names() + [schema.label_column]
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None:
            raise InputError(f"{path}: empty file")
        header = [h.strip() for h in first]
        if schema.label_column in header:
            names = header
            rows = list(reader)
        elif len(first) in (len(expected), len(expected) + 1):
            names = expected + [f"_extra{i}" for i in range(len(first) - len(expected))]
            rows = [first] + list(reader)
        else:
            raise SchemaError(
                f"{path}: header lacks label column {schema.label_column!r} and row width "
                f"{len(first)} does not match the schema's {len(expected)} columns"
            )
    missing = [c for c in expected if c not in names]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    idx = {c: names.index(c) for c in expected}
    out: dict[str, list[str]] = {c: [] for c in expected}
    for r, row in enumerate(rows):
        if not row:
            continue
        if len(row) != len(names):
            raise InputError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(names)}")
        for c in expected:
            out[c].append(row[idx[c]].strip())
    return out


def normalize(columns: dict[str, list[str]], schema: FeatureSchema,
              encoder: FeatureEncoder | None = None) -> Dataset:
    """Encode raw columnar data into a Dataset.

    Pass an already-fitted encoder to apply training statistics to a
    test split; otherwise one is fitted from this data.
    """
    labels_raw = columns[schema.label_column]
    keep: list[int] = []
    label_idx: list[int] = []
    for i, raw in enumerate(labels_raw):
        mapped = schema.map_label(raw)
        if mapped is None:
            continue
        keep.append(i)
        label_idx.append(schema.class_index(mapped))
    feat_cols = {
        c.name: [columns[c.name][i] for i in keep] for c in schema.columns
    }
    if encoder is None:
        encoder = fit_encoder(feat_cols, schema)
    features = encoder.encode_rows(feat_cols)
    return Dataset(features, np.asarray(label_idx, dtype=np.int64), schema, encoder)


def load_csv_dataset(path: str | Path, schema: FeatureSchema,
                     encoder: FeatureEncoder | None = None) -> Dataset:
    return normalize(read_csv_columns(path, schema), schema, encoder)


def save_dataset(ds: Dataset, out_dir: str | Path, name: str = "dataset") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / f"{name}.features.npy", ds.features)
    np.save(out / f"{name}.labels.npy", ds.labels)
    return out / f"{name}.features.npy"


def load_dataset(out_dir: str | Path, schema: FeatureSchema,
                 encoder: FeatureEncoder, name: str = "dataset") -> Dataset:
    out = Path(out_dir)
    features = np.load(out / f"{name}.features.npy")
    labels = np.load(out / f"{name}.labels.npy")
    return Dataset(features, labels, schema, encoder)


def save_dataset_bundle(ds: Dataset, out_dir: str | Path) -> Path:
    """Self-contained dataset directory: arrays plus schema and encoder JSON."""
    import json

    from .models import _schema_to_dict

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    payload = {"schema": _schema_to_dict(ds.schema), "encoder": ds.encoder.to_dict()}
    (out / "dataset.meta.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    return out


def load_dataset_bundle(out_dir: str | Path) -> Dataset:
    import json

    from .schema import schema_from_dict

    out = Path(out_dir)
    meta_path = out / "dataset.meta.json"
    if not meta_path.exists():
        raise InputError(f"{out}: not a dataset bundle (missing dataset.meta.json)")
    payload = json.loads(meta_path.read_text(encoding="utf-8"))
    schema = schema_from_dict(payload["schema"])
    encoder = FeatureEncoder.from_dict(payload["encoder"], schema)
    return load_dataset(out, schema, encoder)


# ---------------------------------------------------------------------------
# window composition


@dataclass
class TimeStepComposition:
    """One detection window: a prefix of records to perturb, a suffix left alone.

    All records share one attack type; the composition models a
    sustained attack inside a single window.
    """

    adv_records: np.ndarray  # (adv_n, W) originals destined for reconstruction
    org_records: np.ndarray  # (org_n, W) untouched originals
    attack_type: int

    @property
    def adv_n(self) -> int:
        return self.adv_records.shape[0]

    @property
    def org_n(self) -> int:
        return self.org_records.shape[0]

    @property
    def time_n(self) -> int:
        return self.adv_n + self.org_n

    def full_window(self) -> np.ndarray:
        return np.vstack([self.adv_records, self.org_records])


def make_windows(dataset: Dataset, time_n: int, adv_n: int, org_n: int,
                 attack_type: str, seed: int) -> list[TimeStepComposition]:
    """Compose non-overlapping windows from one attack class.

    Records are grouped in dataset order (consecutive groups of time_n),
    no record is reused, then the window order is shuffled by the seed.
    """
    if adv_n + org_n != time_n:
        raise ConfigError(f"adv_n + org_n must equal time_n ({adv_n}+{org_n} != {time_n})")
    if adv_n < 0 or org_n < 0 or time_n <= 0:
        raise ConfigError("window sizes must be non-negative with time_n >= 1")
    cls = dataset.schema.class_index(attack_type)
    idx = np.nonzero(dataset.labels == cls)[0]
    count = len(idx) // time_n
    if count == 0:
        raise InputError(
            f"need at least {time_n} records of {attack_type!r}, found {len(idx)}"
        )
    order = np.random.default_rng(seed).permutation(count)
    windows = []
    for w in order:
        rows = idx[w * time_n:(w + 1) * time_n]
        block = dataset.features[rows]
        windows.append(TimeStepComposition(
            adv_records=block[:adv_n].copy(),
            org_records=block[adv_n:].copy(),
            attack_type=cls,
        ))
    return windows


def windows_hash(windows: list[TimeStepComposition]) -> str:
    arrays = []
    for w in windows:
        arrays.append(w.adv_records)
        arrays.append(w.org_records)
        arrays.append(np.asarray([w.attack_type]))
    return sha256_arrays(arrays)


def class_windows(dataset: Dataset, time_n: int, class_name: str) -> np.ndarray:
    """(W, time_n, width) stack of homogeneous windows for classifier training."""
    cls = dataset.schema.class_index(class_name)
    idx = np.nonzero(dataset.labels == cls)[0]
    count = len(idx) // time_n
    if count == 0:
        raise InputError(f"need at least {time_n} records of {class_name!r}, found {len(idx)}")
    rows = idx[: count * time_n]
    return dataset.features[rows].reshape(count, time_n, -1)


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SynthClassConfig:
    name: str
    records: int
    coupling: float = 0.0      # AR(1) coefficient of the per-feature noise
    mean_shift: float = 0.0    # scales this class's offset from the base mean


@dataclass
class SynthConfig:
    """Gaussian-cluster classes over [0,1] features with optional AR(1) drift.

    Class offsets from the shared base mean are random-sign vectors:
    functional columns move by `functional_gap`, non-functional columns
    by `nonfunctional_gap`, both scaled by the class's `mean_shift`. The
    non-functional block is the trailing `nonfunctional_count` columns.
    """

    classes: list[SynthClassConfig]
    feature_count: int = 64
    nonfunctional_count: int = 24
    noise: float = 0.12
    functional_gap: float = 0.02
    nonfunctional_gap: float = 0.10
    base_mean: float = 0.45

    def __post_init__(self) -> None:
        if not self.classes:
            raise ConfigError("need at least one class")
        if not (0 < self.nonfunctional_count <= self.feature_count):
            raise ConfigError("nonfunctional_count must be in (0, feature_count]")
        for c in self.classes:
            if not (0.0 <= c.coupling < 1.0):
                raise ConfigError(f"coupling must be in [0,1), got {c.coupling} for {c.name}")


def synthetic_schema(cfg: SynthConfig) -> FeatureSchema:
    from .schema import Column

    names = [f"f{i:02d}" for i in range(cfg.feature_count)]
    nf = names[cfg.feature_count - cfg.nonfunctional_count:]
    mask_targets = [c.name for c in cfg.classes[1:]] or []
    return FeatureSchema(
        name="synthetic",
        columns=[Column(n, "continuous", 0.0, 1.0) for n in names],
        label_column="label",
        class_names=[c.name for c in cfg.classes],
        normal_class=cfg.classes[0].name,
        nonfunctional_masks={cls: np.isin(np.array(names), nf) for cls in mask_targets},
    )


def bundled_synth_config(name: str) -> SynthConfig:
    """Load a shipped synthetic-dataset preset, e.g. 'desk_synth'.

    'desk_synth' is the desk-scale high-temporal dataset the acceptance
    suite runs on: 2 classes, 64 features of which the trailing 24 are
    non-functional, 1120 attack windows of 8 records (1000 for training).
    """
    import json
    from importlib import resources

    ref = resources.files("tempadv.presets").joinpath(f"{name}.json")
    if not ref.is_file():
        raise ConfigError(f"no bundled synthetic config named {name!r}")
    raw = json.loads(ref.read_text(encoding="utf-8"))
    classes = [SynthClassConfig(**c) for c in raw.pop("classes")]
    return SynthConfig(classes=classes, **raw)


def gen_synthetic(cfg: SynthConfig, seed: int) -> Dataset:
    """Deterministic labeled dataset; class 0 is the normal class.

    Per class, records form one contiguous chain whose per-feature noise
    follows eps_t = rho*eps_{t-1} + sqrt(1-rho^2)*eta_t, so the sample
    autocorrelation of a feature matches the class's coupling.
    """
    rng = np.random.default_rng(seed)
    schema = synthetic_schema(cfg)
    F = cfg.feature_count
    nf_start = F - cfg.nonfunctional_count
    feats = []
    labels = []
    for ci, cls in enumerate(cfg.classes):
        signs = rng.choice([-1.0, 1.0], size=F)
        gaps = np.where(np.arange(F) < nf_start, cfg.functional_gap, cfg.nonfunctional_gap)
        mean = cfg.base_mean + cls.mean_shift * signs * gaps
        rho = cls.coupling
        eta = rng.normal(scale=cfg.noise, size=(cls.records, F))
        eps = np.empty_like(eta)
        if cls.records:
            eps[0] = eta[0]
            decay = np.sqrt(1.0 - rho * rho)
            for t in range(1, cls.records):
                eps[t] = rho * eps[t - 1] + decay * eta[t]
        feats.append(np.clip(mean + eps, 0.0, 1.0))
        labels.append(np.full(cls.records, ci, dtype=np.int64))
    features = np.vstack(feats)
    encoder = FeatureEncoder(
        schema,
        cont_min={c.name: 0.0 for c in schema.columns},
        cont_max={c.name: 1.0 for c in schema.columns},
        cat_values={},
    )
    return Dataset(features, np.concatenate(labels), schema, encoder)


__all__ = [
    "Dataset",
    "FeatureEncoder",
    "SynthClassConfig",
    "SynthConfig",
    "TimeStepComposition",
    "class_windows",
    "fit_encoder",
    "gen_synthetic",
    "load_csv_dataset",
    "load_dataset",
    "make_windows",
    "normalize",
    "read_csv_columns",
    "save_dataset",
    "splice",
    "split_features",
    "synthetic_schema",
    "windows_hash",
]
