"""Command-line entry point: ``sccam generate | train | evaluate | explain``.

Standard output carries ``key=value`` lines only; progress and diagnostics go
to standard error. Exit codes: 0 success, 1 internal error, 2 configuration or
path problem, 3 data-domain problem (missing class, index out of range, ...).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import dump_config, load_config, model_config, train_config
from .data import (
    ScenarioSpec,
    StandardizerState,
    SyntheticFaultConfig,
    WindowSet,
    build_scenario,
    fit_windows,
    generate_fault_dataset,
    load_csv,
    pools_from_windows,
    preset_scenario,
    sliding_window,
    standardize_array,
    te_analog_faults,
    write_csv,
)
from .data.scenario import KINDS
from .errors import ConfigError, DataError, FormatError, ShapeError
from .explain import export_heatmap, global_explanation, local_explanation
from .model import SCCAM
from .training import TrainReport, evaluate, run_pipeline

log = logging.getLogger("sccam")

MANIFEST = "manifest.json"
MANIFEST_FORMAT = "sccam-dataset"
MANIFEST_VERSION = 1
TE_VARS = 22

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


def emit(**pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={v}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stride(cfg: dict) -> int:
    return cfg["data"]["stride"] or cfg["data"]["window"]


def _faults(cfg: dict) -> tuple[int, list]:
    d = cfg["data"]
    if d["dataset"] == "te":
        return TE_VARS, te_analog_faults(d["magnitude"], d["random_magnitude"])
    return d["n_vars"], [SyntheticFaultConfig(d["fault_variable"], d["fault_kind"], d["magnitude"])]


def _spec(cfg: dict, dataset: str, n_faults: int) -> ScenarioSpec:
    d = cfg["data"]
    return preset_scenario(dataset, d["scenario"], n_faults, cfg["seed"], d["scale"])


# -- generate -----------------------------------------------------------------------------

def cmd_generate(cfg: dict, out: Path) -> None:
    n_vars, faults = _faults(cfg)
    dataset = cfg["data"]["dataset"]
    for f in faults:
        f.validate(n_vars)
    # pools large enough for every scenario kind, so one dataset serves all of them
    specs = [preset_scenario(dataset, k, len(faults), cfg["seed"], cfg["data"]["scale"]) for k in KINDS]
    need = np.max([np.add(s.train_counts, s.test_counts) for s in specs], axis=0)
    window, stride = cfg["data"]["window"], _stride(cfg)
    lengths = [window + (int(n) - 1) * stride for n in need]
    log.info("generating %d classes over %d variables", len(lengths), n_vars)
    series = generate_fault_dataset(faults, n_vars, lengths, cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    spec = _spec(cfg, dataset, len(faults))
    classes = []
    for s in series:
        path = out / f"class{s.label}.csv"
        write_csv(s, path)
        entry = {"label": s.label, "name": s.series_id, "file": path.name, "length": s.length,
                 "sha256": _sha256(path)}
        if s.meta:
            entry.update(root_cause=s.meta["root_cause"], root_cause_name=s.variables[s.meta["root_cause"]],
                         kind=s.meta["kind"], magnitude=s.meta["magnitude"])
        classes.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "dataset": dataset, "seed": cfg["seed"],
        "variables": series[0].variables, "window": window, "stride": stride,
        "scenario": {"kind": spec.kind, "train_counts": list(spec.train_counts),
                     "test_counts": list(spec.test_counts)},
        "classes": classes,
    }
    mpath = out / MANIFEST
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    emit(manifest=mpath, classes=len(classes), variables=n_vars,
         train_counts=",".join(map(str, spec.train_counts)), test_counts=",".join(map(str, spec.test_counts)),
         manifest_sha256=_sha256(mpath))


# -- shared loading -------------------------------------------------------------------------

def read_manifest(data_dir: Path) -> dict:
    path = data_dir / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
        raise ConfigError(f"{path}: not a version-{MANIFEST_VERSION} {MANIFEST_FORMAT} manifest")
    return manifest


def load_pools(cfg: dict, data_dir: Path) -> tuple[dict, dict]:
    manifest = read_manifest(data_dir)
    windows = []
    for entry in manifest["classes"]:
        path = data_dir / entry["file"]
        if not path.is_file():
            raise FileNotFoundError(f"class file listed in the manifest is missing: {path}")
        if _sha256(path) != entry["sha256"]:
            raise DataError(f"{path}: checksum differs from the manifest")
        s = load_csv(path, label=entry["label"], series_id=entry["name"])
        windows.append(sliding_window(s, cfg["data"]["window"], _stride(cfg)))
    return manifest, pools_from_windows(windows)


def split(cfg: dict, data_dir: Path) -> tuple[dict, ScenarioSpec, WindowSet, WindowSet]:
    manifest, pools = load_pools(cfg, data_dir)
    spec = _spec(cfg, manifest["dataset"], len(manifest["classes"]) - 1)
    train, test = build_scenario(pools, spec)
    return manifest, spec, train, test


def checkpoint_path(cfg: dict) -> Path:
    return Path(cfg["paths"]["checkpoint"] or Path(cfg["paths"]["out"]) / "model.ckpt")


def load_model(cfg: dict) -> SCCAM:
    path = checkpoint_path(cfg)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return SCCAM.load(path)


def held_out(cfg: dict, model: SCCAM) -> tuple[dict, WindowSet]:
    """Rebuild the test set the checkpoint was evaluated on, standardized with its training moments."""
    manifest, pools = load_pools(cfg, Path(cfg["paths"]["data"]))
    ex = model.extras
    try:
        spec = ScenarioSpec(tuple(int(v) for v in ex["scenario.train_counts"]),
                            tuple(int(v) for v in ex["scenario.test_counts"]), seed=int(ex["scenario.seed"][0]))
        state = StandardizerState(ex["standardizer.mean"], ex["standardizer.std"])
    except KeyError as exc:
        raise FormatError(f"checkpoint lacks {exc.args[0]!r}; it was not written by 'sccam train'") from None
    _, test = build_scenario(pools, spec)
    test.data = standardize_array(test.data, state)
    return manifest, test


# -- train / evaluate ------------------------------------------------------------------------

def cmd_train(cfg: dict) -> dict:
    data_dir, out = Path(cfg["paths"]["data"]), Path(cfg["paths"]["out"])
    manifest, spec, train, test = split(cfg, data_dir)
    state = fit_windows(train)
    train.data = standardize_array(train.data, state)
    test.data = standardize_array(test.data, state)
    mcfg = model_config(cfg, len(manifest["variables"]), spec.n_classes)
    model = SCCAM.init(mcfg)
    model.extras = {
        "standardizer.mean": state.mean, "standardizer.std": state.std,
        "scenario.train_counts": np.array(spec.train_counts, dtype=np.int64),
        "scenario.test_counts": np.array(spec.test_counts, dtype=np.int64),
        "scenario.seed": np.array([spec.seed], dtype=np.int64),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    log.info("training on %d windows (%s), testing on %d", len(train), spec.kind, len(test))
    report = run_pipeline(model, train, test, train_config(cfg), {"run": cfg})
    ckpt = checkpoint_path(cfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    report.write(out / "report.txt")
    result = {"seed": cfg["seed"], "accuracy": repr(report.metrics.accuracy),
              "macro_accuracy": repr(report.metrics.macro_accuracy),
              "report": out / "report.txt", "checkpoint": ckpt}
    return result


def cmd_evaluate(cfg: dict) -> None:
    model = load_model(cfg)
    _, test = held_out(cfg, model)
    metrics = evaluate(model, test)
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    TrainReport({"run": cfg, "variant": "evaluate"}, metrics=metrics).write(out / "evaluation.txt")
    emit(accuracy=repr(metrics.accuracy), macro_accuracy=repr(metrics.macro_accuracy),
         **{f"class_accuracy.{c}": repr(float(a)) for c, a in enumerate(metrics.per_class)},
         report=out / "evaluation.txt")


# -- explain ------------------------------------------------------------------------------------

def cmd_explain(cfg: dict, scope: str, class_id: Optional[int], sample_index: Optional[int]) -> None:
    model = load_model(cfg)
    manifest, test = held_out(cfg, model)
    names = manifest["variables"]
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    if scope == "global":
        if class_id is None:
            raise ConfigError("--scope global needs --class")
        exp = global_explanation(model, test, class_id, names)
        stem = f"explain_global_class{class_id}"
    else:
        pool = np.arange(len(test)) if class_id is None else np.flatnonzero(test.labels == class_id)
        if class_id is not None and pool.size == 0:
            raise DataError(f"class {class_id} has no windows in the test set")
        if sample_index is None:
            raise ConfigError("--scope local needs --sample-index")
        if not 0 <= sample_index < pool.size:
            raise DataError(f"sample index {sample_index} out of range 0..{pool.size - 1}")
        exp = local_explanation(model, test[int(pool[sample_index])], names)
        stem = f"explain_local_sample{sample_index}" + ("" if class_id is None else f"_class{class_id}")
    csv_path = export_heatmap(exp, out / f"{stem}.csv", "csv")
    pgm_path = export_heatmap(exp, out / f"{stem}.pgm", "pgm")
    print(exp.verdict())
    emit(scope=exp.scope, **{"class": exp.class_id}, windows=exp.n_windows,
         contributions=",".join(repr(float(c)) for c in exp.contributions), csv=csv_path, pgm=pgm_path)


# -- entry point -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--scenario", choices=KINDS)
    common.add_argument("--data", help="dataset directory (paths.data)")
    common.add_argument("--out", help="output directory (paths.out; for generate, the dataset directory)")
    common.add_argument("--checkpoint", help="checkpoint file (paths.checkpoint)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sccam", description="Attention-based fault diagnosis with root-cause maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset and manifest")
    tr = sub.add_parser("train", parents=[common], help="train, evaluate and write checkpoint + report")
    tr.add_argument("--seeds", help="comma-separated seeds, one independent run per seed in <out>/seed_<s>")
    tr.add_argument("--jobs", type=int, default=1, help="parallel processes for --seeds")
    sub.add_parser("evaluate", parents=[common], help="score a checkpoint on its test split")
    ex = sub.add_parser("explain", parents=[common], help="attention heatmaps and root-cause verdict")
    ex.add_argument("--scope", choices=("global", "local"), default="global")
    ex.add_argument("--class", dest="class_id", type=int)
    ex.add_argument("--sample-index", type=int)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.scenario is not None:
        o.setdefault("data", {})["scenario"] = args.scenario
    paths = {k: getattr(args, k) for k in ("data", "out", "checkpoint") if getattr(args, k) is not None}
    if args.command == "generate" and args.out is not None:
        paths["data"] = paths.pop("out")
    if paths:
        o["paths"] = paths
    return o


def _train_seed(cfg: dict, seed: int) -> dict:
    run = {**cfg, "seed": seed,
           "paths": {**cfg["paths"], "out": str(Path(cfg["paths"]["out"]) / f"seed_{seed}"), "checkpoint": None}}
    return cmd_train(run)


def _run(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, _overrides(args))
    if args.command == "generate":
        cmd_generate(cfg, Path(cfg["paths"]["data"]))
    elif args.command == "train":
        if args.seeds:
            seeds = [int(s) for s in args.seeds.split(",")]
            with ProcessPoolExecutor(max_workers=max(1, args.jobs)) as pool:
                for seed, res in zip(seeds, pool.map(_train_seed, [cfg] * len(seeds), seeds)):
                    emit(**{f"seed_{seed}.{k}": v for k, v in res.items() if k != "seed"})
        else:
            emit(**cmd_train(cfg))
    elif args.command == "evaluate":
        cmd_evaluate(cfg)
    else:
        cmd_explain(cfg, args.scope, args.class_id, args.sample_index)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        _run(args)
    except (ConfigError, FormatError, OSError) as exc:
        print(f"sccam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"sccam: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a bug, not a user error
        print(f"sccam: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
