"""Deterministic experiment recipes: named stage pipelines with assertions.

A recipe is a JSON document (same structured-text family as schemas):

    {
      "name": "smoke",
      "stages": [
        {"kind": "gen-synth",  "name": "data",   "config": {...}},
        {"kind": "windows",    "name": "wins",   "config": {"dataset": "data", ...}},
        {"kind": "train-target", "name": "tgt",  "config": {"dataset": "data", ...}},
        {"kind": "train-surrogate", "name": "sur", "config": {...}},
        {"kind": "attack-team", "name": "gen",   "config": {"surrogate": "sur", ...}},
        {"kind": "attack-pgd",  "name": "pgd",   "config": {"model": "tgt", ...}},
        {"kind": "evaluate",   "name": "eval",   "config": {"target": "tgt", ...}},
        {"kind": "transfer",   "name": "matrix", "config": {"artifacts": {...}, ...}}
      ],
      "assertions": [
        {"stage": "eval", "path": "asr.percent", "op": ">=", "value": 90.0}
      ]
    }

Stage configs reference earlier stages by name. Every stage draws its
seed from the master seed via the documented splitmix derivation
(`derive_seed(master, "stage:<name>")`), so any stage can be re-run in
isolation. Checkpoints, artifacts, reports, and logs land under a run
directory named `<recipe>-seed<master>`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .attack import AttackConfig, save_artifact, team_generate, team_train
from .data import (
    Dataset,
    SynthClassConfig,
    SynthConfig,
    gen_synthetic,
    load_csv_dataset,
    make_windows,
    save_dataset_bundle,
)
from .errors import ConfigError, RecipeAssertionError, TempadvError
from .metrics import (
    as_control_windows,
    compute_asr,
    compute_mar,
    emit_report,
    next_moment_eval,
    transfer_matrix,
    write_prediction_log,
)
from .models import TrainConfig, save_checkpoint, train_classifier
from .pgd import PgdConfig, pgd_attack
from .schema import bundled_schema, load_schema
from .util import derive_seed, stable_json_dumps

_OPS = {
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


@dataclass
class ExperimentRecipe:
    name: str
    stages: list[dict]
    assertions: list[dict] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentRecipe":
        try:
            stages = list(raw["stages"])
            name = raw["name"]
        except KeyError as e:
            raise ConfigError(f"recipe missing required key {e}") from None
        seen = set()
        for st in stages:
            if "kind" not in st or "name" not in st:
                raise ConfigError(f"stage needs kind and name: {st}")
            if st["name"] in seen:
                raise ConfigError(f"duplicate stage name {st['name']!r}")
            seen.add(st["name"])
        return cls(name=name, stages=stages, assertions=list(raw.get("assertions", [])))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentRecipe":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def bundled_recipe(name: str) -> ExperimentRecipe:
    """Load a shipped recipe preset, e.g. 'smoke'."""
    from importlib import resources

    ref = resources.files("tempadv.presets").joinpath(f"{name}.json")
    if not ref.is_file():
        raise ConfigError(f"no bundled recipe named {name!r}")
    return ExperimentRecipe.from_dict(json.loads(ref.read_text(encoding="utf-8")))


@dataclass
class RunBundle:
    run_dir: Path
    results: dict[str, dict]          # stage name -> JSON-safe summary
    objects: dict[str, object]        # stage name -> live object (dataset, model, ...)
    assertion_lines: list[str] = field(default_factory=list)


def _dig(summary: dict, path: str):
    cur = summary
    for part in path.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        else:
            raise ConfigError(f"assertion path {path!r} not found in stage summary")
    return cur


def _require(cfg: dict, key: str, stage: str):
    if key not in cfg:
        raise ConfigError(f"stage {stage!r}: config needs {key!r}")
    return cfg[key]


def _ref(objects: dict, name: str, stage: str):
    if name not in objects:
        raise ConfigError(f"stage {stage!r} references unknown stage {name!r}")
    return objects[name]


def _synth_config(raw: dict) -> SynthConfig:
    classes = [SynthClassConfig(**c) for c in raw["classes"]]
    rest = {k: v for k, v in raw.items() if k != "classes"}
    return SynthConfig(classes=classes, **rest)


def _run_stage(kind: str, name: str, cfg: dict, seed: int, run_dir: Path,
               objects: dict) -> tuple[dict, object]:
    if kind == "gen-synth":
        ds = gen_synthetic(_synth_config(cfg), seed=seed)
        save_dataset_bundle(ds, run_dir / name)
        return {"records": len(ds), "hash": ds.content_hash()}, ds

    if kind == "load-csv":
        schema_ref = _require(cfg, "schema", name)
        schema = bundled_schema(schema_ref) if not Path(schema_ref).exists() \
            else load_schema(schema_ref)
        ds = load_csv_dataset(_require(cfg, "path", name), schema)
        return {"records": len(ds), "hash": ds.content_hash()}, ds

    if kind == "windows":
        ds: Dataset = _ref(objects, _require(cfg, "dataset", name), name)
        wins = make_windows(ds, cfg.get("time_n", 8), cfg.get("adv_n", 6),
                            cfg.get("org_n", 2), _require(cfg, "attack_type", name), seed)
        train_n = int(_require(cfg, "train_count", name))
        test_n = int(cfg.get("test_count", max(1, len(wins) - train_n)))
        if train_n + test_n > len(wins):
            raise ConfigError(
                f"stage {name!r}: {train_n}+{test_n} windows requested, {len(wins)} available"
            )
        split = {"train": wins[:train_n], "test": wins[train_n:train_n + test_n],
                 "attack_type": _require(cfg, "attack_type", name)}
        return {"train": train_n, "test": test_n, "total": len(wins)}, split

    if kind in ("train-target", "train-surrogate"):
        ds = _ref(objects, _require(cfg, "dataset", name), name)
        role = "target" if kind == "train-target" else "surrogate"
        tc_fields = {k: v for k, v in cfg.items() if k != "dataset"}
        tc = TrainConfig(seed=seed, **tc_fields)
        if role == "target" and tc.dilation != 1.0:
            raise ConfigError(f"stage {name!r}: targets must keep dilation 1.0")
        model = train_classifier(ds, tc, role=role)
        digest = save_checkpoint(model, run_dir / f"{name}.ckpt")
        return {"train_summary": model.train_summary, "checkpoint_hash": digest,
                "parameter_hash": model.parameter_hash()}, model

    if kind == "attack-team":
        surrogate = _ref(objects, _require(cfg, "surrogate", name), name)
        split = _ref(objects, _require(cfg, "windows", name), name)
        ac_fields = {k: v for k, v in cfg.items() if k not in ("surrogate", "windows")}
        ac = AttackConfig(attack_type=split["attack_type"], seed=seed,
                          dilation=surrogate.dilation, **ac_fields)
        artifact = team_train(surrogate, split["train"], ac)
        save_artifact(artifact, run_dir / f"{name}.art")
        return {"best_epoch": artifact.best_epoch,
                "final_loss": artifact.loss_curve[-1]["total_loss"],
                "surrogate_hash": artifact.surrogate_hash}, artifact

    if kind == "attack-pgd":
        model = _ref(objects, _require(cfg, "model", name), name)
        split = _ref(objects, _require(cfg, "windows", name), name)
        mask = model.encoder.expanded_mask(split["attack_type"])
        pc_fields = {k: v for k, v in cfg.items() if k not in ("model", "windows")}
        pc = PgdConfig(seed=seed, **pc_fields)
        composed = pgd_attack(model, split["test"], mask, pc)
        return {"windows": len(composed)}, composed

    if kind == "evaluate":
        target = _ref(objects, _require(cfg, "target", name), name)
        split = _ref(objects, _require(cfg, "windows", name), name)
        if "generator" in cfg:
            composed = team_generate(_ref(objects, cfg["generator"], name), split["test"])
        elif "adversarial" in cfg:
            composed = _ref(objects, cfg["adversarial"], name)
        else:
            composed = as_control_windows(split["test"])
        mar, base_log = compute_mar(target, split["test"], split["test"][0].attack_type)
        asr, log = compute_asr(target, composed)
        summary = {
            "mar": {"percent": mar.percent, "misjudged": mar.misjudged,
                    "evaluated": mar.evaluated},
            "asr": {"percent": asr.percent, "misjudged": asr.misjudged,
                    "evaluated": asr.evaluated},
        }
        if split["test"][0].org_n >= 2:
            mar1, mar2, _ = next_moment_eval(target, composed)
            summary["mar1"] = {"percent": mar1.percent, "misjudged": mar1.misjudged,
                               "evaluated": mar1.evaluated}
            summary["mar2"] = {"percent": mar2.percent, "misjudged": mar2.misjudged,
                               "evaluated": mar2.evaluated}
        out = run_dir / name
        write_prediction_log(base_log, out / "predictions.baseline.json")
        write_prediction_log(log, out / "predictions.json")
        (out / "summary.json").write_text(stable_json_dumps(summary), encoding="utf-8")
        return summary, composed

    if kind == "transfer":
        split = _ref(objects, _require(cfg, "windows", name), name)
        artifacts = {k: _ref(objects, v, name) for k, v in _require(cfg, "artifacts", name).items()}
        targets = {k: _ref(objects, v, name) for k, v in _require(cfg, "targets", name).items()}
        report, logs = transfer_matrix(artifacts, targets, split["test"],
                                       split["attack_type"],
                                       meta={"stage": name, "seed": seed})
        out = run_dir / name
        emit_report(report, out / "report.json")
        emit_report(report, out / "report.txt", fmt="text")
        for key, log in logs.items():
            write_prediction_log(log, out / f"predictions.{key.replace('->', '_to_')}.json")
        return report.to_dict(), report

    raise ConfigError(f"unknown stage kind {kind!r}")


def run_recipe(recipe: ExperimentRecipe | dict | str | Path, master_seed: int,
               out_dir: str | Path) -> RunBundle:
    """Execute a recipe end to end; raises on stage failure or failed assertion.

    Stage failures carry the stage name; assertion results are written to
    `assertions.txt` in the run directory either way.
    """
    if isinstance(recipe, (str, Path)):
        recipe = ExperimentRecipe.load(recipe)
    elif isinstance(recipe, dict):
        recipe = ExperimentRecipe.from_dict(recipe)
    run_dir = Path(out_dir) / f"{recipe.name}-seed{master_seed}"
    run_dir.mkdir(parents=True, exist_ok=True)

    results: dict[str, dict] = {}
    objects: dict[str, object] = {}
    for st in recipe.stages:
        kind, name = st["kind"], st["name"]
        seed = derive_seed(master_seed, f"stage:{name}")
        try:
            summary, obj = _run_stage(kind, name, dict(st.get("config", {})),
                                      seed, run_dir, objects)
        except TempadvError:
            raise
        except Exception as e:
            raise ConfigError(f"stage {name!r} ({kind}) failed: {e}") from e
        results[name] = summary
        objects[name] = obj

    manifest = {
        "recipe": recipe.name,
        "master_seed": master_seed,
        "stage_seeds": {st["name"]: derive_seed(master_seed, f"stage:{st['name']}")
                        for st in recipe.stages},
        "results": results,
    }
    (run_dir / "manifest.json").write_text(stable_json_dumps(manifest), encoding="utf-8")

    lines = []
    failures = []
    for a in recipe.assertions:
        stage, path, op, value = a["stage"], a["path"], a["op"], a["value"]
        if stage not in results:
            raise ConfigError(f"assertion references unknown stage {stage!r}")
        if op not in _OPS:
            raise ConfigError(f"assertion has unknown op {op!r}")
        actual = _dig(results[stage], path)
        ok = _OPS[op](actual, value)
        line = f"{'PASS' if ok else 'FAIL'} {stage}.{path} = {actual} {op} {value}"
        lines.append(line)
        if not ok:
            failures.append(line)
    (run_dir / "assertions.txt").write_text("\n".join(lines) + ("\n" if lines else ""),
                                            encoding="utf-8")
    if failures:
        raise RecipeAssertionError("; ".join(failures))
    return RunBundle(run_dir=run_dir, results=results, objects=objects,
                     assertion_lines=lines)
