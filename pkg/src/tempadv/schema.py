"""Feature schemas: columns, class lists, and non-functional masks.

A schema is data, not code. It names the columns of a traffic-feature
CSV, the class labels, and, for every attack class, which columns are
non-functional (safe to perturb without breaking the attack's own
function). Two bundled schemas cover the NSL-KDD and CIC-IDS2017 column
sets; masks can be redefined by editing the JSON.

Schema file grammar (JSON object):

    name            str
    label_column    str
    classes         [str, ...]            must contain normal_class
    normal_class    str
    columns         [{"name": str, "kind": "continuous"|"categorical",
                      "min": float?, "max": float?}, ...]
    label_map       {raw label -> class}  optional, default identity
    drop_labels     [str, ...]            optional, rows to discard
    nonfunctional   {attack class -> [column name, ...] or [bool * n_columns]}
    notes           str                   optional

Masks may not touch categorical columns: discrete flag-like fields stay
functional because perturbing them breaks or exposes the attack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError, UsageError


@dataclass
class Column:
    name: str
    kind: str  # continuous | categorical
    vmin: float | None = None
    vmax: float | None = None


@dataclass
class FeatureSchema:
    name: str
    columns: list[Column]
    label_column: str
    class_names: list[str]
    normal_class: str
    nonfunctional_masks: dict[str, np.ndarray]  # attack class -> bool over columns
    label_map: dict[str, str] = field(default_factory=dict)
    drop_labels: list[str] = field(default_factory=list)
    notes: str = ""

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise UsageError(f"unknown class {name!r}; schema has {self.class_names}") from None

    @property
    def normal_index(self) -> int:
        return self.class_names.index(self.normal_class)

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def mask_for(self, attack_type: str) -> np.ndarray:
        if attack_type not in self.nonfunctional_masks:
            raise ConfigError(
                f"no non-functional mask for {attack_type!r}; masks exist for "
                f"{sorted(self.nonfunctional_masks)}"
            )
        return self.nonfunctional_masks[attack_type]

    def map_label(self, raw: str) -> str | None:
        """Raw label -> class name, or None for dropped rows."""
        if raw in self.drop_labels:
            return None
        mapped = self.label_map.get(raw, raw)
        if mapped not in self.class_names:
            raise SchemaError(f"label {raw!r} maps to {mapped!r}, not a schema class")
        return mapped


def _parse_mask(schema_name: str, attack: str, spec, columns: list[Column]) -> np.ndarray:
    names = [c.name for c in columns]
    if all(isinstance(v, bool) for v in spec):
        if len(spec) != len(columns):
            raise SchemaError(
                f"{schema_name}: mask for {attack!r} has length {len(spec)}, "
                f"schema has {len(columns)} columns"
            )
        mask = np.asarray(spec, dtype=bool)
    else:
        mask = np.zeros(len(columns), dtype=bool)
        unknown = [n for n in spec if n not in names]
        if unknown:
            raise SchemaError(f"{schema_name}: mask for {attack!r} names unknown columns {unknown}")
        for n in spec:
            mask[names.index(n)] = True
    bad = [names[i] for i in np.nonzero(mask)[0] if columns[i].kind == "categorical"]
    if bad:
        raise SchemaError(
            f"{schema_name}: mask for {attack!r} marks categorical columns {bad}; "
            "discrete flag-like columns are always functional"
        )
    if not mask.any():
        raise SchemaError(f"{schema_name}: mask for {attack!r} marks no column non-functional")
    return mask


def schema_from_dict(raw: dict) -> FeatureSchema:
    try:
        columns = [
            Column(c["name"], c["kind"], c.get("min"), c.get("max")) for c in raw["columns"]
        ]
        class_names = list(raw["classes"])
        normal = raw["normal_class"]
        name = raw.get("name", "unnamed")
        label_column = raw["label_column"]
        mask_spec = raw["nonfunctional"]
    except KeyError as e:
        raise SchemaError(f"schema missing required key: {e}") from None
    for c in columns:
        if c.kind not in ("continuous", "categorical"):
            raise SchemaError(f"{name}: column {c.name!r} has unknown kind {c.kind!r}")
    seen = set()
    for c in columns:
        if c.name in seen:
            raise SchemaError(f"{name}: duplicate column {c.name!r}")
        seen.add(c.name)
    if normal not in class_names:
        raise SchemaError(f"{name}: normal class {normal!r} not in class list")
    masks = {
        attack: _parse_mask(name, attack, spec, columns) for attack, spec in mask_spec.items()
    }
    for attack in masks:
        if attack not in class_names:
            raise SchemaError(f"{name}: mask for {attack!r}, which is not a schema class")
    return FeatureSchema(
        name=name,
        columns=columns,
        label_column=label_column,
        class_names=class_names,
        normal_class=normal,
        nonfunctional_masks=masks,
        label_map=dict(raw.get("label_map", {})),
        drop_labels=list(raw.get("drop_labels", [])),
        notes=raw.get("notes", ""),
    )


def load_schema(path: str | Path) -> FeatureSchema:
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON ({e})") from None
    return schema_from_dict(raw)


def bundled_schema(name: str) -> FeatureSchema:
    """Load one of the shipped schemas: 'nsl-kdd' or 'cic-ids2017'."""
    fname = name.replace("-", "_") + ".json"
    ref = resources.files("tempadv.schemas").joinpath(fname)
    if not ref.is_file():
        raise SchemaError(f"no bundled schema named {name!r}")
    return schema_from_dict(json.loads(ref.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# functional / non-functional record splitting


@dataclass
class SplitRecord:
    """One record partitioned by a mask, with index maps for lossless splice."""

    functional: np.ndarray
    functional_idx: np.ndarray
    nonfunctional: np.ndarray
    nonfunctional_idx: np.ndarray

    @property
    def width(self) -> int:
        return len(self.functional_idx) + len(self.nonfunctional_idx)


def split_features(features: np.ndarray, mask: np.ndarray) -> SplitRecord:
    """Partition a feature vector into functional / non-functional parts.

    `mask` is boolean over the feature vector's width (True marks
    non-functional). The two index sets partition the indices, so
    `splice` can rebuild the record exactly.
    """
    features = np.asarray(features)
    mask = np.asarray(mask, dtype=bool)
    if features.shape[-1] != mask.shape[0]:
        raise ConfigError(
            f"mask length {mask.shape[0]} does not match feature width {features.shape[-1]}"
        )
    nf_idx = np.nonzero(mask)[0]
    f_idx = np.nonzero(~mask)[0]
    return SplitRecord(
        functional=features[..., f_idx].copy(),
        functional_idx=f_idx,
        nonfunctional=features[..., nf_idx].copy(),
        nonfunctional_idx=nf_idx,
    )


def splice(split: SplitRecord) -> np.ndarray:
    """Rebuild the full-width record from a SplitRecord.

    Functional values come back byte-identical; overlapping or
    incomplete index maps are refused.
    """
    f_idx, nf_idx = split.functional_idx, split.nonfunctional_idx
    width = split.width
    combined = np.concatenate([f_idx, nf_idx])
    if len(np.unique(combined)) != width or combined.min() != 0 or combined.max() != width - 1:
        raise UsageError("index maps do not partition the feature indices")
    lead = split.functional.shape[:-1]
    out = np.empty(lead + (width,), dtype=np.float64)
    out[..., f_idx] = split.functional
    out[..., nf_idx] = split.nonfunctional
    return out
