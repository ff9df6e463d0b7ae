"""Attack evaluation: misjudgment metrics, transfer matrices, reports.

Four rates, all percentages of records the target labels normal:

    mar    original attack records, every window position
    asr    reconstructed records only (the perturbed prefix positions)
    mar1   the first untouched record after the perturbed prefix
    mar2   the second untouched record after the prefix

Every evaluation first writes a raw per-record prediction log; the
metrics are computed vectorized from the same arrays and can always be
re-derived by `recount_from_log`, a deliberately naive second code path
kept for auditing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attack import AttackArtifact, ComposedWindow, team_generate
from .data import TimeStepComposition
from .errors import ConfigError, InputError, UsageError
from .models import ClassifierModel, assert_attack_target, predict_window
from .util import stable_json_dumps


@dataclass(frozen=True)
class MetricValue:
    percent: float
    misjudged: int
    evaluated: int

    @classmethod
    def from_counts(cls, misjudged: int, evaluated: int) -> "MetricValue":
        if evaluated <= 0:
            raise InputError("metric needs at least one evaluated record")
        return cls(100.0 * misjudged / evaluated, int(misjudged), int(evaluated))


def predict_composed(model: ClassifierModel, windows: list[ComposedWindow]) -> list[dict]:
    """Per-record prediction log for a batch of composed windows."""
    if not windows:
        raise InputError("no windows to evaluate")
    stack = np.stack([w.records for w in windows])
    labels, _ = predict_window(model, stack)
    log = []
    for i, w in enumerate(windows):
        for t in range(w.records.shape[0]):
            log.append({
                "window": i,
                "position": t,
                "attack_type": int(w.attack_type),
                "predicted": int(labels[i, t]),
                "is_adv": bool(w.is_adv[t]),
            })
    return log


def as_control_windows(windows: list[TimeStepComposition]) -> list[ComposedWindow]:
    """Original records with the prefix positions still tagged (identity generator)."""
    out = []
    for w in windows:
        is_adv = np.zeros(w.time_n, dtype=bool)
        is_adv[:w.adv_n] = True
        out.append(ComposedWindow(w.full_window(), is_adv, w.attack_type))
    return out


def _rate(log: list[dict], normal_index: int, keep) -> MetricValue:
    kept = [e for e in log if keep(e)]
    if not kept:
        raise InputError("no records selected for this metric")
    mis = sum(1 for e in kept if e["predicted"] == normal_index)
    return MetricValue.from_counts(mis, len(kept))


def compute_mar(model: ClassifierModel, windows: list[TimeStepComposition],
                attack_type: int) -> tuple[MetricValue, list[dict]]:
    """Misjudgment rate of untouched attack records over all window positions."""
    for w in windows:
        if w.attack_type != attack_type:
            raise UsageError(f"window carries class {w.attack_type}, expected {attack_type}")
    log = predict_composed(model, as_control_windows(windows))
    return _rate(log, model.normal_index, lambda e: True), log


def compute_asr(model: ClassifierModel, windows: list[ComposedWindow]) -> tuple[MetricValue, list[dict]]:
    """Success rate at the reconstructed positions only."""
    if not any(w.is_adv.any() for w in windows):
        raise UsageError("windows carry no adversarial provenance tags")
    log = predict_composed(model, windows)
    return _rate(log, model.normal_index, lambda e: e["is_adv"]), log


def _prefix_length(w: ComposedWindow) -> int:
    n = int(w.is_adv.sum())
    if n == 0 or not w.is_adv[:n].all() or w.is_adv[n:].any():
        raise UsageError("window tags are not a contiguous prefix")
    return n


def next_moment_eval(model: ClassifierModel, windows: list[ComposedWindow]
                     ) -> tuple[MetricValue, MetricValue, list[dict]]:
    """(mar1, mar2) at the first and second untouched positions after the prefix."""
    if not windows:
        raise InputError("no windows to evaluate")
    prefix = _prefix_length(windows[0])
    for w in windows:
        if _prefix_length(w) != prefix:
            raise UsageError("windows disagree on prefix length")
        if w.records.shape[0] - prefix < 2:
            raise ConfigError(
                "next-moment evaluation needs at least 2 untouched records after the prefix"
            )
    log = predict_composed(model, windows)
    mar1 = _rate(log, model.normal_index, lambda e: e["position"] == prefix)
    mar2 = _rate(log, model.normal_index, lambda e: e["position"] == prefix + 1)
    return mar1, mar2, log


def recount_from_log(log: list[dict], metric: str, normal_index: int) -> tuple[int, int]:
    """Brute-force recount of any metric from a raw prediction log.

    Pure python loops on purpose; this is the audit path, not the fast
    path. Returns (misjudged, evaluated).
    """
    windows: dict[int, list[dict]] = {}
    for entry in log:
        windows.setdefault(entry["window"], []).append(entry)
    misjudged = 0
    evaluated = 0
    for entries in windows.values():
        entries = sorted(entries, key=lambda e: e["position"])
        prefix = 0
        for e in entries:
            if e["is_adv"]:
                prefix += 1
            else:
                break
        for e in entries:
            if metric == "mar":
                selected = True
            elif metric == "asr":
                selected = e["is_adv"]
            elif metric == "mar1":
                selected = e["position"] == prefix
            elif metric == "mar2":
                selected = e["position"] == prefix + 1
            else:
                raise ConfigError(f"unknown metric {metric!r}")
            if selected:
                evaluated += 1
                if e["predicted"] == normal_index:
                    misjudged += 1
    return misjudged, evaluated


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class MetricsCell:
    attack_type: str
    surrogate_cell: str
    target_cell: str
    white_box: bool
    mar: MetricValue
    asr: MetricValue
    mar1: MetricValue | None = None
    mar2: MetricValue | None = None


@dataclass
class MetricsReport:
    cells: list[MetricsCell] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def mv(v):
            return None if v is None else asdict(v)

        return {
            "meta": self.meta,
            "cells": [
                {
                    "attack_type": c.attack_type,
                    "surrogate_cell": c.surrogate_cell,
                    "target_cell": c.target_cell,
                    "white_box": c.white_box,
                    "mar": mv(c.mar),
                    "asr": mv(c.asr),
                    "mar1": mv(c.mar1),
                    "mar2": mv(c.mar2),
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        def mv(v):
            return None if v is None else MetricValue(**v)

        cells = [
            MetricsCell(
                attack_type=c["attack_type"],
                surrogate_cell=c["surrogate_cell"],
                target_cell=c["target_cell"],
                white_box=c["white_box"],
                mar=mv(c["mar"]),
                asr=mv(c["asr"]),
                mar1=mv(c.get("mar1")),
                mar2=mv(c.get("mar2")),
            )
            for c in raw["cells"]
        ]
        return cls(cells=cells, meta=dict(raw.get("meta", {})))

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricsReport) and self.to_dict() == other.to_dict()


def _fmt_value(v: MetricValue | None) -> str:
    if v is None:
        return "-".center(18)
    return f"{v.percent:6.2f} ({v.misjudged}/{v.evaluated})".ljust(18)


def render_text_table(report: MetricsReport) -> str:
    """Fixed-width table, one row per (attack type, surrogate), grouped targets."""
    lines = []
    targets = sorted({c.target_cell for c in report.cells})
    header = "attack type".ljust(22) + "surrogate".ljust(11)
    for t in targets:
        header += f"| {t}: MAR".ljust(20) + "ASR".ljust(19) + "MAR1".ljust(19) + "MAR2".ljust(19)
    lines.append(header)
    lines.append("-" * len(header))
    keys = sorted({(c.attack_type, c.surrogate_cell) for c in report.cells})
    for attack, sur in keys:
        row = attack.ljust(22) + sur.ljust(11)
        for t in targets:
            match = [c for c in report.cells
                     if c.attack_type == attack and c.surrogate_cell == sur and c.target_cell == t]
            if match:
                c = match[0]
                wb = "*" if c.white_box else " "
                row += f"|{wb}" + _fmt_value(c.mar) + _fmt_value(c.asr) \
                       + _fmt_value(c.mar1) + _fmt_value(c.mar2)
            else:
                row += "|" + " " * 73
        lines.append(row)
    lines.append("(* = white box: surrogate and target share the cell kind)")
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, path: str | Path, fmt: str = "json") -> Path:
    """Deterministic serialization; formats: json (machine), text (human)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(stable_json_dumps(report.to_dict()), encoding="utf-8")
    elif fmt == "text":
        path.write_text(render_text_table(report), encoding="utf-8")
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    return path


def write_prediction_log(log: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(stable_json_dumps(log), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# transfer evaluation


def _check_compatible_targets(targets: dict[str, ClassifierModel]) -> None:
    models = list(targets.values())
    first = models[0]
    for m in models[1:]:
        if m.class_names != first.class_names or m.feature_width != first.feature_width:
            raise UsageError("targets disagree on schema (classes or feature width)")
        if (m.encoder is None) != (first.encoder is None):
            raise UsageError("targets disagree on normalization")
        if m.encoder is not None and m.encoder.to_dict() != first.encoder.to_dict():
            raise UsageError("targets disagree on normalization constants")


def transfer_matrix(artifacts: dict[str, AttackArtifact],
                    targets: dict[str, ClassifierModel],
                    test_windows: list[TimeStepComposition],
                    attack_type: str,
                    meta: dict | None = None,
                    with_next_moment: bool = True,
                    ) -> tuple[MetricsReport, dict[str, list[dict]]]:
    """Evaluate every generator against every target; diagonal is white box.

    Returns the report plus the raw prediction logs keyed by
    "surrogate->target" (baseline logs keyed "baseline->target").
    """
    report = MetricsReport(meta=dict(meta or {}))
    logs: dict[str, list[dict]] = {}
    if not test_windows:
        raise InputError("no test windows")
    if not targets or not artifacts:
        raise InputError("need at least one target and one generator")
    _check_compatible_targets(targets)
    cls_index = test_windows[0].attack_type
    for t_kind, target in targets.items():
        assert_attack_target(target)
        mar, base_log = compute_mar(target, test_windows, cls_index)
        logs[f"baseline->{t_kind}"] = base_log
        for s_kind, artifact in artifacts.items():
            composed = team_generate(artifact, test_windows)
            asr, log = compute_asr(target, composed)
            mar1 = mar2 = None
            if with_next_moment and test_windows[0].org_n >= 2:
                mar1, mar2, _ = next_moment_eval(target, composed)
            logs[f"{s_kind}->{t_kind}"] = log
            report.cells.append(MetricsCell(
                attack_type=attack_type,
                surrogate_cell=s_kind,
                target_cell=t_kind,
                white_box=s_kind == t_kind,
                mar=mar,
                asr=asr,
                mar1=mar1,
                mar2=mar2,
            ))
    return report, logs
