"""Command-line surface.

Every subcommand is driven by a JSON config file plus repeatable
`--set dotted.key=value` overrides; flags win over the file. Each run
writes `resolved_config.json` into its output directory so the pair
(snapshot, --seed) reproduces the run exactly. All randomness flows
from --seed; no environment variables are consulted and no network is
touched.

Exit codes: 0 success, 1 internal failure, 2 user/config error,
3 recipe assertion failure. Errors print one machine-parseable line:
`error <ErrorClass>: <message>`.
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys
from pathlib import Path

import numpy as np

from .attack import AttackConfig, load_artifact, save_artifact, team_generate, team_train
from .attack import ComposedWindow
from .container import load_container, save_container
from .data import load_csv_dataset, load_dataset_bundle, make_windows, save_dataset_bundle
from .data import SynthClassConfig, SynthConfig, gen_synthetic
from .errors import (
    ConfigError,
    InputError,
    RecipeAssertionError,
    SchemaError,
    TempadvError,
    UsageError,
)
from .metrics import (
    as_control_windows,
    compute_asr,
    compute_mar,
    emit_report,
    next_moment_eval,
    transfer_matrix,
    write_prediction_log,
)
from .models import TrainConfig, load_checkpoint, save_checkpoint, train_classifier
from .pgd import PgdConfig, pgd_attack
from .recipes import ExperimentRecipe, bundled_recipe, run_recipe
from .schema import bundled_schema, load_schema
from .util import stable_json_dumps

SUBCOMMANDS = [
    "gen-synth", "train-target", "train-surrogate", "attack-team",
    "attack-pgd", "evaluate", "transfer", "recipe",
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 2 with a single parseable line
        hint = ""
        words = message.split()
        if "invalid choice:" in message and len(words) >= 3:
            bad = words[words.index("choice:") + 1].strip("'\",")
            close = difflib.get_close_matches(bad, SUBCOMMANDS, n=1)
            if close:
                hint = f" (did you mean {close[0]!r}?)"
        print(f"error UsageError: {message}{hint}", file=sys.stderr)
        sys.exit(2)


def _parse_set(pairs: list[str]) -> dict:
    out: dict[str, object] = {}
    sources: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set needs key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if key in out and out[key] != value:
            raise UsageError(
                f"conflicting overrides for {key!r}: --set {sources[key]} vs --set {pair}"
            )
        out[key] = value
        sources[key] = pair
    return out


def _apply_overrides(config: dict, overrides: dict) -> dict:
    for dotted, value in overrides.items():
        cur = config
        parts = dotted.split(".")
        for p in parts[:-1]:
            cur = cur.setdefault(p, {})
            if not isinstance(cur, dict):
                raise UsageError(f"override {dotted!r} descends into a non-object")
        cur[parts[-1]] = value
    return config


def _load_config(args) -> dict:
    config: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            config = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
    return _apply_overrides(config, _parse_set(args.set or []))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(config: dict, args, out: Path) -> None:
    payload = {"config": config, "seed": args.seed, "subcommand": args.subcommand}
    (out / "resolved_config.json").write_text(stable_json_dumps(payload), encoding="utf-8")


def _load_dataset_ref(ref, seed: int):
    """Dataset reference: a bundle directory, or {csv, schema} for raw CSVs."""
    if isinstance(ref, str):
        return load_dataset_bundle(ref)
    if isinstance(ref, dict) and "csv" in ref:
        schema_ref = ref.get("schema")
        if schema_ref is None:
            raise ConfigError("csv dataset reference needs a schema")
        schema = load_schema(schema_ref) if Path(str(schema_ref)).exists() \
            else bundled_schema(str(schema_ref))
        return load_csv_dataset(ref["csv"], schema)
    raise ConfigError(f"unusable dataset reference {ref!r}")


def _window_plan(config: dict, dataset, seed: int):
    attack_type = config.get("attack_type")
    if attack_type is None:
        raise ConfigError("config needs attack_type")
    wins = make_windows(dataset,
                        int(config.get("time_n", 8)),
                        int(config.get("adv_n", 6)),
                        int(config.get("org_n", 2)),
                        attack_type,
                        int(config.get("window_seed", seed)))
    return wins, attack_type


def _check_schema_match(model, dataset) -> None:
    if model.encoder is None:
        raise SchemaError("checkpoint carries no normalization sidecar")
    if model.encoder.schema.name != dataset.schema.name \
            or model.feature_width != dataset.features.shape[1]:
        raise SchemaError(
            f"checkpoint trained under schema {model.encoder.schema.name!r} "
            f"(width {model.feature_width}) but dataset is {dataset.schema.name!r} "
            f"(width {dataset.features.shape[1]})"
        )


def _metric_lines(summary: dict) -> list[str]:
    lines = []
    for key in ("mar", "asr", "mar1", "mar2"):
        if key in summary:
            v = summary[key]
            lines.append(f"{key} {v['percent']:.2f} {v['misjudged']}/{v['evaluated']}")
    return lines


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_synth(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    classes = [SynthClassConfig(**c) for c in config.get("classes", [])]
    rest = {k: v for k, v in config.items() if k != "classes"}
    ds = gen_synthetic(SynthConfig(classes=classes, **rest), seed=args.seed)
    save_dataset_bundle(ds, out / "dataset")
    print(f"records {len(ds)}")
    print(f"hash {ds.content_hash()}")
    return 0


def _cmd_train(args, role: str) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    dataset = _load_dataset_ref(config.get("dataset"), args.seed)
    tc_fields = {k: v for k, v in config.items() if k != "dataset"}
    cfg = TrainConfig(seed=args.seed, **tc_fields)
    if role == "target" and cfg.dilation != 1.0:
        raise ConfigError("targets must keep dilation 1.0")
    model = train_classifier(dataset, cfg, role=role)
    digest = save_checkpoint(model, out / "model.ckpt")
    s = model.train_summary
    print(f"holdout_accuracy {s['holdout_accuracy']:.4f}")
    print(f"train_accuracy {s['train_accuracy']:.4f}")
    print(f"epochs_run {s['epochs_run']}")
    print(f"checkpoint {digest}")
    return 0


def _cmd_attack_team(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    surrogate = load_checkpoint(config["surrogate"]) if "surrogate" in config \
        else _fail_need("surrogate")
    dataset = _load_dataset_ref(config.get("dataset"), args.seed)
    _check_schema_match(surrogate, dataset)
    wins, attack_type = _window_plan(config, dataset, args.seed)
    train_count = int(config.get("train_count", max(1, int(len(wins) * 0.8))))
    if train_count > len(wins):
        raise ConfigError(f"train_count {train_count} exceeds {len(wins)} windows")
    ac_keys = ("time_n", "adv_n", "org_n", "epoch_n", "lr", "keep_best",
               "window_batch", "validation_fraction", "ae_hidden", "ae_bottleneck",
               "suffix_weight")
    ac_fields = {k: config[k] for k in ac_keys if k in config}
    cfg = AttackConfig(attack_type=attack_type, seed=args.seed,
                       dilation=surrogate.dilation, **ac_fields)
    artifact = team_train(surrogate, wins[:train_count], cfg)
    digest = save_artifact(artifact, out / "generator.art")
    print(f"final_loss {artifact.loss_curve[-1]['total_loss']:.6f}")
    print(f"best_epoch {artifact.best_epoch}")
    print(f"artifact {digest}")
    return 0


def _fail_need(key: str):
    raise ConfigError(f"config needs {key!r}")


COMPOSED_KIND = "composed-windows"


def _save_composed(windows: list[ComposedWindow], path: Path) -> str:
    arrays = {
        "records": np.stack([w.records for w in windows]),
        "is_adv": np.stack([w.is_adv for w in windows]).astype(np.int64),
        "attack_type": np.asarray([w.attack_type for w in windows], dtype=np.int64),
    }
    return save_container(path, {"kind": COMPOSED_KIND, "count": len(windows)}, arrays)


def _load_composed(path) -> list[ComposedWindow]:
    meta, arrays, _ = load_container(path)
    if meta.get("kind") != COMPOSED_KIND:
        raise UsageError(f"{path}: container holds {meta.get('kind')!r}, not composed windows")
    return [
        ComposedWindow(arrays["records"][i],
                       arrays["is_adv"][i].astype(bool),
                       int(arrays["attack_type"][i]))
        for i in range(arrays["records"].shape[0])
    ]


def _cmd_attack_pgd(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    model = load_checkpoint(config["model"]) if "model" in config else _fail_need("model")
    dataset = _load_dataset_ref(config.get("dataset"), args.seed)
    _check_schema_match(model, dataset)
    wins, attack_type = _window_plan(config, dataset, args.seed)
    skip = int(config.get("skip_count", 0))
    count = int(config.get("test_count", len(wins) - skip))
    subset = wins[skip:skip + count]
    if not subset:
        raise ConfigError("window selection is empty")
    mask = model.encoder.expanded_mask(attack_type)
    pc_keys = ("epsilon", "step_size", "steps")
    cfg = PgdConfig(seed=args.seed, **{k: config[k] for k in pc_keys if k in config})
    composed = pgd_attack(model, subset, mask, cfg)
    digest = _save_composed(composed, out / "adversarial.bin")
    print(f"windows {len(composed)}")
    print(f"adversarial {digest}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    target = load_checkpoint(config["target"]) if "target" in config else _fail_need("target")
    dataset = _load_dataset_ref(config.get("dataset"), args.seed)
    _check_schema_match(target, dataset)
    wins, attack_type = _window_plan(config, dataset, args.seed)
    skip = int(config.get("skip_count", 0))
    count = int(config.get("test_count", len(wins) - skip))
    subset = wins[skip:skip + count]
    if not subset:
        raise ConfigError("window selection is empty")

    if "generator" in config:
        composed = team_generate(load_artifact(config["generator"]), subset)
    elif "adversarial" in config:
        composed = _load_composed(config["adversarial"])
    else:
        composed = as_control_windows(subset)

    mar, base_log = compute_mar(target, subset, subset[0].attack_type)
    asr, log = compute_asr(target, composed)
    summary = {
        "mar": {"percent": mar.percent, "misjudged": mar.misjudged, "evaluated": mar.evaluated},
        "asr": {"percent": asr.percent, "misjudged": asr.misjudged, "evaluated": asr.evaluated},
    }
    if subset[0].org_n >= 2:
        mar1, mar2, _ = next_moment_eval(target, composed)
        summary["mar1"] = {"percent": mar1.percent, "misjudged": mar1.misjudged,
                           "evaluated": mar1.evaluated}
        summary["mar2"] = {"percent": mar2.percent, "misjudged": mar2.misjudged,
                           "evaluated": mar2.evaluated}
    write_prediction_log(base_log, out / "predictions.baseline.json")
    write_prediction_log(log, out / "predictions.json")
    (out / "summary.json").write_text(stable_json_dumps(summary), encoding="utf-8")
    for line in _metric_lines(summary):
        print(line)
    return 0


def _cmd_transfer(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    if "targets" not in config or "artifacts" not in config:
        raise ConfigError("config needs targets and artifacts maps")
    targets = {k: load_checkpoint(v) for k, v in config["targets"].items()}
    artifacts = {k: load_artifact(v) for k, v in config["artifacts"].items()}
    dataset = _load_dataset_ref(config.get("dataset"), args.seed)
    for model in targets.values():
        _check_schema_match(model, dataset)
    wins, attack_type = _window_plan(config, dataset, args.seed)
    skip = int(config.get("skip_count", 0))
    count = int(config.get("test_count", len(wins) - skip))
    subset = wins[skip:skip + count]
    if not subset:
        raise ConfigError("window selection is empty")
    report, logs = transfer_matrix(artifacts, targets, subset, attack_type,
                                   meta={"seed": args.seed})
    emit_report(report, out / "report.json")
    emit_report(report, out / "report.txt", fmt="text")
    for key, log in logs.items():
        write_prediction_log(log, out / f"predictions.{key.replace('->', '_to_')}.json")
    for c in report.cells:
        box = "white-box" if c.white_box else "black-box"
        print(f"{c.attack_type} {c.surrogate_cell}->{c.target_cell} {box} "
              f"asr {c.asr.percent:.2f} {c.asr.misjudged}/{c.asr.evaluated}")
    return 0


def _cmd_recipe(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    _snapshot(config, args, out)
    if args.config and Path(args.config).exists() and "stages" in config:
        recipe = ExperimentRecipe.from_dict(config)
    elif "bundled" in config:
        recipe = bundled_recipe(config["bundled"])
    else:
        raise ConfigError("recipe needs a recipe file via --config or a bundled name")
    bundle = run_recipe(recipe, args.seed, out)
    for line in bundle.assertion_lines:
        print(line)
    print(f"run_dir {bundle.run_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tempadv",
                     description="temporal adversarial attacks on recurrent NIDS models")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


_HANDLERS = {
    "gen-synth": _cmd_gen_synth,
    "train-target": lambda a: _cmd_train(a, "target"),
    "train-surrogate": lambda a: _cmd_train(a, "surrogate"),
    "attack-team": _cmd_attack_team,
    "attack-pgd": _cmd_attack_pgd,
    "evaluate": _cmd_evaluate,
    "transfer": _cmd_transfer,
    "recipe": _cmd_recipe,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.subcommand](args)
    except RecipeAssertionError as e:
        print(f"error RecipeAssertionError: {e}", file=sys.stderr)
        return 3
    except (ConfigError, SchemaError, UsageError, InputError) as e:
        print(f"error {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error UsageError: missing file: {e}", file=sys.stderr)
        return 2
    except TempadvError as e:
        print(f"error {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - last-resort guard
        print(f"error {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
