"""``pclr`` command-line harness.

Subcommands: synth, pretrain, embed, lineval, scratch, compare. Each resolves
its configuration as profile defaults, then an optional JSON ``--config`` file,
then explicit flags, and writes ``config.json``, its artifacts and a
``report.json`` run report under ``--out``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .data.labels import label_af, label_lvh
from .data.manifest import CohortManifest, load_manifest, write_manifest
from .data.records import prepare_ecg
from .data.synth import SynthConfig, generate_synthetic_cohort
from .encoder import EncoderConfig, embed_numpy
from .errors import ConfigError, DataError, PclrError
from .lineval import (
    STANDARD_FEATURES, TASK_KINDS, align_rows, evaluate_features, read_embeddings, read_labels,
    select_records, standard_features, task_target, training_subset, write_embeddings,
)
from .pretrain import DESK_PRETRAIN, PAPER_PRETRAIN, EcgCache, PretrainConfig, alignment, pretrain
from .report import (
    RunReport, compare_reports, file_digest, read_report, write_metric_table,
)
from .scratch import DESK_SCRATCH, PAPER_SCRATCH, ScratchConfig, evaluate_scratch, train_scratch

log = logging.getLogger("pclr")

PROFILES = ("paper", "desk")
SIZE_LADDERS = {"paper": [640, 1280, 2560, 5120, 10240, 20480], "desk": [160, 320, 640, 1280]}
TASKS = tuple(TASK_KINDS)
# Keys that steer execution but never change what is written.
_UNHASHED = ("resume",)
# Config keys naming input files whose content is folded into the config hash.
_INPUT_KEYS = ("manifest", "checkpoint", "train_manifest", "val_manifest", "test_manifest",
               "train_embeddings", "test_embeddings", "labels")


def _int_pair(text: str) -> list[int]:
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'min,max', got {text!r}") from None
    return [lo, hi]


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _splits(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        name, _, count = part.partition("=")
        if not name or not count.isdigit():
            raise argparse.ArgumentTypeError(f"expected 'name=count,...', got {text!r}")
        out[name] = int(count)
    return out


def _fraction(text: str) -> str:
    return text  # EncoderConfig parses "1/8" or "0.125"


# ---------------------------------------------------------------- defaults

def _defaults(command: str, profile: str) -> dict:
    desk = profile == "desk"
    if command == "synth":
        d = SynthConfig().to_dict()
        d["ecgs_per_patient"] = list(d["ecgs_per_patient"])
        d["split"] = {}
        return d
    if command == "pretrain":
        d = (DESK_PRETRAIN if desk else PAPER_PRETRAIN).to_dict()
        d.update(manifest=None, halt_after=None, resume=False)
        return d
    if command == "embed":
        return {"checkpoint": None, "manifest": None, "batch_size": 32, "seed": 0}
    if command == "lineval":
        return {
            "task": None, "features": "embeddings", "arm": None,
            "train_manifest": None, "test_manifest": None,
            "train_embeddings": None, "test_embeddings": None, "labels": None,
            "sizes": SIZE_LADDERS[profile], "folds": 4, "seed": 0, "shuffle_labels": False,
        }
    if command == "scratch":
        d = (DESK_SCRATCH if desk else PAPER_SCRATCH).to_dict()
        d.update(task=None, train_manifest=None, val_manifest=None, test_manifest=None,
                 sizes=SIZE_LADDERS[profile], arm="scratch")
        return d
    if command == "compare":
        return {"runs": [], "seed": 0}
    raise ConfigError(f"unknown command {command!r}")


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of configuration values")
    p.add_argument("--profile", choices=PROFILES, help="default values: paper scale or desk scale")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    p.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def _opt(p, flag, dest, **kw):
    p.add_argument(flag, dest=dest, default=argparse.SUPPRESS, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pclr", description="Patient-contrastive ECG pre-training harness")
    parser.add_argument("--version", action="version", version=f"pclr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic ECG cohort")
    _common(p)
    _opt(p, "--patients", "n_patients", type=int)
    _opt(p, "--ecgs-per-patient", "ecgs_per_patient", type=_int_pair, metavar="MIN,MAX")
    _opt(p, "--noise-uv", "noise_uv", type=float)
    _opt(p, "--af-rate", "af_rate", type=float)
    _opt(p, "--lvh-rate", "lvh_rate", type=float)
    _opt(p, "--missing-rate", "missing_rate", type=float)
    _opt(p, "--id-prefix", "id_prefix")
    _opt(p, "--split", "split", type=_splits, metavar="NAME=N,...",
         help="also write patient-disjoint manifest_<NAME>.csv files, N patients each, in order")

    p = sub.add_parser("pretrain", help="contrastive pre-training")
    _common(p)
    _opt(p, "--manifest", "manifest")
    _opt(p, "--patients-per-batch", "patients_per_batch", type=int)
    _opt(p, "--epochs", "epochs", type=int)
    _opt(p, "--lr", "base_lr", type=float)
    _opt(p, "--temperature", "temperature", type=float)
    _opt(p, "--val-fraction", "val_fraction", type=float)
    _opt(p, "--symmetric", "symmetric", action="store_const", const=True)
    _opt(p, "--scale", "scale", type=_fraction, help="channel-width multiplier, e.g. 1/8")
    _opt(p, "--resume", "resume", action="store_const", const=True, help="continue from last.ckpt")
    _opt(p, "--halt-after", "halt_after", type=int, help="stop after this many epochs in this call")

    p = sub.add_parser("embed", help="write encoder embeddings for a manifest")
    _common(p)
    _opt(p, "--checkpoint", "checkpoint")
    _opt(p, "--manifest", "manifest")
    _opt(p, "--batch-size", "batch_size", type=int)

    p = sub.add_parser("lineval", help="linear-probe evaluation")
    _common(p)
    _opt(p, "--task", "task", choices=TASKS)
    _opt(p, "--features", "features", choices=("embeddings", "standard7"))
    _opt(p, "--arm", "arm", help="arm name in the metrics table")
    _opt(p, "--train-manifest", "train_manifest")
    _opt(p, "--test-manifest", "test_manifest")
    _opt(p, "--train-embeddings", "train_embeddings")
    _opt(p, "--test-embeddings", "test_embeddings")
    _opt(p, "--labels", "labels", help="CSV ecg_id,target overriding manifest-derived labels")
    _opt(p, "--sizes", "sizes", type=_int_list, help="training-set size ladder, e.g. 160,320")
    _opt(p, "--shuffle-labels", "shuffle_labels", action="store_const", const=True,
         help="permute training labels (null control)")

    p = sub.add_parser("scratch", help="supervised encoder + linear head baseline")
    _common(p)
    _opt(p, "--task", "task", choices=TASKS)
    _opt(p, "--train-manifest", "train_manifest")
    _opt(p, "--val-manifest", "val_manifest")
    _opt(p, "--test-manifest", "test_manifest")
    _opt(p, "--sizes", "sizes", type=_int_list)
    _opt(p, "--lr", "learning_rate", type=float)
    _opt(p, "--batch-size", "batch_size", type=int)
    _opt(p, "--patience", "patience", type=int)
    _opt(p, "--max-epochs", "max_epochs", type=int)
    _opt(p, "--scale", "scale", type=_fraction)

    p = sub.add_parser("compare", help="merge run reports into a long-format metrics table")
    _common(p)
    p.add_argument("runs", nargs="*", default=argparse.SUPPRESS, help="run directories or report files")
    return parser


_META = {"command", "config", "profile", "out", "force", "dump_config", "verbose"}


def resolve_config(args: argparse.Namespace) -> tuple[str, dict]:
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    profile = args.profile or file_cfg.pop("profile", None) or "paper"
    file_cfg.pop("profile", None)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    cfg = _defaults(args.command, profile)
    flags = {k: v for k, v in vars(args).items() if k not in _META}
    for source in (file_cfg, flags):
        for key, value in source.items():
            if key == "scale" and "encoder" in cfg:
                cfg["encoder"] = {**cfg["encoder"], "scale": value}
            elif key == "encoder" and isinstance(value, dict):
                cfg["encoder"] = {**cfg["encoder"], **value}
            elif key in cfg:
                cfg[key] = value
            else:
                raise ConfigError(f"unknown {args.command} setting {key!r}")
    cfg["profile"] = profile
    return profile, cfg


def _hashed(cfg: dict) -> dict:
    d = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    digests = {}
    for key in _INPUT_KEYS:
        path = cfg.get(key)
        if path and Path(path).is_file():
            digests[key] = file_digest(path)
    d["input_digests"] = digests
    return d


def _require(cfg: dict, *keys) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "", [])]
    if missing:
        raise _Usage(f"missing required setting(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


class _Usage(Exception):
    """Missing or inconsistent arguments; reported with exit code 2."""


def _prepare_out(out: str, force: bool, allow_existing: bool = False) -> Path:
    path = Path(out)
    if path.exists() and not path.is_dir():
        raise ConfigError(f"--out {path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not (force or allow_existing):
        raise ConfigError(f"output directory {path} is not empty (use --force)")
    if path.exists() and force:
        _clear_previous(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _clear_previous(path: Path) -> None:
    """Remove files recorded in a previous run report so stale artifacts are not re-checksummed."""
    report = path / "report.json"
    if not report.is_file():
        return
    try:
        previous = json.loads(report.read_text()).get("artifacts", {})
    except json.JSONDecodeError:
        return
    for rel in previous:
        target = (path / rel)
        if target.is_file():
            target.unlink()
    report.unlink()


def _write_config(out: Path, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: dict, out: Path, report: RunReport) -> None:
    synth_keys = {f.name for f in fields(SynthConfig)}
    config = SynthConfig(**{k: (tuple(v) if k == "ecgs_per_patient" else v)
                            for k, v in cfg.items() if k in synth_keys})
    split = cfg.get("split") or {}
    if sum(split.values()) > config.n_patients:
        raise ConfigError(f"split sizes {split} exceed {config.n_patients} patients")
    manifest = generate_synthetic_cohort(config, out)
    patients = manifest.patients()
    start = 0
    for name, count in split.items():
        chosen = set(patients[start:start + count])
        start += count
        write_manifest(manifest.subset(r for r in manifest.records if r.patient_id in chosen),
                       out / f"manifest_{name}.csv")
    n = len(manifest)
    summary = {
        "patients": len(patients),
        "ecgs": n,
        "af_prevalence": sum(label_af(r.diagnosis_text) for r in manifest) / max(n, 1),
        "lvh_prevalence": sum(label_lvh(r.diagnosis_text) for r in manifest) / max(n, 1),
        "female_fraction": sum(r.sex == "female" for r in manifest) / max(n, 1),
    }
    report.details.update(summary=summary, manifest="manifest.csv",
                          splits={k: f"manifest_{k}.csv" for k in split})
    print(out / "manifest.csv")
    print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))


def _loader(manifest: CohortManifest) -> EcgCache:
    by_id = manifest.by_id()
    return EcgCache(lambda ecg_id: prepare_ecg(by_id[ecg_id]))


def cmd_pretrain(cfg: dict, out: Path, report: RunReport) -> None:
    _require(cfg, "manifest")
    keys = {f.name for f in fields(PretrainConfig)}
    config = PretrainConfig(**{k: v for k, v in cfg.items() if k in keys})
    manifest = load_manifest(cfg["manifest"])
    cache = _loader(manifest)
    result = pretrain(config, manifest.patient_index(), cache, out,
                      resume=bool(cfg.get("resume")), halt_after=cfg.get("halt_after"))
    details = {
        "initial_val_loss": result.initial_val_loss,
        "best_val_loss": result.best_val_loss,
        "best_epoch": result.best_epoch,
        "epochs_completed": len(result.history),
        "train_patients": len(result.train_patients),
        "val_patients": len(result.val_patients),
        "pair_means": result.pair_means,
    }
    if result.best_checkpoint.exists():
        val_index = manifest.patient_index().with_min_ecgs(2).subset(result.val_patients)
        same, cross = alignment(load_checkpoint(result.best_checkpoint), val_index, cache)
        details["val_alignment"] = {"same_patient": same, "cross_patient": cross}
    report.details.update(details)
    print(out / "best.ckpt")


def cmd_embed(cfg: dict, out: Path, report: RunReport) -> None:
    _require(cfg, "checkpoint", "manifest")
    model = load_checkpoint(cfg["checkpoint"])
    manifest = load_manifest(cfg["manifest"])
    ids, rows = [], []
    for rec in manifest:
        try:
            rows.append(prepare_ecg(rec))
            ids.append(rec.ecg_id)
        except DataError as exc:
            report.warnings.append(f"{rec.ecg_id}: skipped ({exc})")
    x = np.stack(rows) if rows else np.zeros((0, model.config.input_length, model.config.leads), np.float32)
    emb = embed_numpy(model, x, cfg["batch_size"])
    write_embeddings(out / "embeddings.csv", ids, emb)
    report.details.update(rows=len(ids), dim=int(emb.shape[1]) if emb.ndim == 2 else 0)
    print(out / "embeddings.csv")


def _check_disjoint(named: dict[str, list]) -> None:
    owners: dict[str, str] = {}
    for split, records in named.items():
        for r in records:
            other = owners.setdefault(r.patient_id, split)
            if other != split:
                raise DataError(f"patient {r.patient_id} appears in both the {other} and {split} sets")


def _targets(records, task: str, labels: dict | None) -> np.ndarray:
    if labels is None:
        return np.array([task_target(r, task) for r in records], dtype=np.float64)
    ids = [r.ecg_id for r in records]
    table = np.array(list(labels.values()), dtype=np.float64)[:, None]
    return align_rows(ids, list(labels), table, "labels")[:, 0]


def _sizes(cfg: dict, available: int, report: RunReport) -> list[int]:
    sizes = cfg.get("sizes") or [available]
    kept = [s for s in sizes if s <= available]
    for s in sizes:
        if s > available:
            report.warnings.append(f"size {s} skipped: only {available} eligible training rows")
    if not kept:
        raise DataError(f"no requested training size fits the {available} eligible rows")
    return kept


def cmd_lineval(cfg: dict, out: Path, report: RunReport) -> None:
    _require(cfg, "task", "train_manifest", "test_manifest")
    task, features = cfg["task"], cfg["features"]
    if features == "standard7" and task == "af":
        raise DataError("standard7 features refused for the AF task: PR interval undefined under AF")
    if features == "embeddings":
        _require(cfg, "train_embeddings", "test_embeddings")
    train = select_records(load_manifest(cfg["train_manifest"]), task)
    test = select_records(load_manifest(cfg["test_manifest"]), task)
    _check_disjoint({"train": train, "test": test})
    labels = read_labels(cfg["labels"]) if cfg.get("labels") else None
    y_train, y_test = _targets(train, task, labels), _targets(test, task, labels)
    if features == "standard7":
        x_train, x_test = standard_features(train, task), standard_features(test, task)
    else:
        x_train = align_rows([r.ecg_id for r in train], *read_embeddings(cfg["train_embeddings"]))
        x_test = align_rows([r.ecg_id for r in test], *read_embeddings(cfg["test_embeddings"]))
    if cfg.get("shuffle_labels"):
        y_train = np.random.default_rng([cfg["seed"], 99]).permutation(y_train)
    arm = cfg.get("arm") or ("standard7" if features == "standard7" else "pclr")
    probes = {}
    for size in _sizes(cfg, len(train), report):
        idx = training_subset(len(train), size, cfg["seed"])
        res = evaluate_features(x_train[idx], y_train[idx], x_test, y_test, task, cfg["seed"], cfg["folds"])
        report.add_metrics(task, size, arm, res.test_metrics)
        probes[str(size)] = {
            **res.to_dict(),
            "weights": res.probe.weights.tolist(),
            "intercept": res.probe.intercept,
        }
        log.info("lineval %s size %d: %s", task, size, res.test_metrics)
    (out / "probes.json").write_text(json.dumps(probes, indent=2, sort_keys=True) + "\n")
    write_metric_table(report.metrics, out / "metrics.csv")
    report.details.update(n_train_available=len(train), n_test=len(test),
                          feature_columns=list(STANDARD_FEATURES) if features == "standard7" else int(x_train.shape[1]),
                          probes={k: {kk: v[kk] for kk in ("lambda", "fold_losses", "test_metrics")}
                                  for k, v in probes.items()})
    for row in report.metrics:
        print(f"{row['task']},{row['size']},{row['arm']},{row['metric']},{row['value']}")


def cmd_scratch(cfg: dict, out: Path, report: RunReport) -> None:
    _require(cfg, "task", "train_manifest", "val_manifest", "test_manifest")
    task = cfg["task"]
    train = select_records(load_manifest(cfg["train_manifest"]), task)
    val = select_records(load_manifest(cfg["val_manifest"]), task)
    test = select_records(load_manifest(cfg["test_manifest"]), task)
    _check_disjoint({"train": train, "validation": val, "test": test})
    keys = {f.name for f in fields(ScratchConfig)}
    config = ScratchConfig(**{k: v for k, v in cfg.items() if k in keys})
    stack = lambda recs: np.stack([prepare_ecg(r) for r in recs])  # noqa: E731
    x_train, x_val, x_test = stack(train), stack(val), stack(test)
    y_train, y_val, y_test = (np.array([task_target(r, task) for r in recs]) for recs in (train, val, test))
    runs = {}
    for size in _sizes(cfg, len(train), report):
        idx = training_subset(len(train), size, cfg["seed"])
        run_dir = out / f"size_{size}"
        res = train_scratch(config, task, x_train[idx], y_train[idx], x_val, y_val, run_dir)
        with open(run_dir / "history.csv", "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            fh.writelines(f"{h['epoch']},{h['train_loss']!r},{h['val_loss']!r}\n" for h in res.history)
        metrics = evaluate_scratch(res.checkpoint, task, x_test, y_test)
        report.add_metrics(task, size, cfg["arm"], metrics)
        runs[str(size)] = {"best_epoch": res.best_epoch, "epochs_run": len(res.history),
                           "best_val_loss": res.best_val_loss, "test_metrics": metrics}
    write_metric_table(report.metrics, out / "metrics.csv")
    report.details.update(runs=runs, n_val=len(val), n_test=len(test))
    for row in report.metrics:
        print(f"{row['task']},{row['size']},{row['arm']},{row['metric']},{row['value']}")


def cmd_compare(cfg: dict, out: Path, report: RunReport) -> None:
    if len(cfg.get("runs") or []) < 1:
        raise _Usage("compare needs at least one run directory")
    rows, warnings = compare_reports([read_report(r) for r in cfg["runs"]])
    write_metric_table(rows, out / "comparison.csv")
    report.metrics = rows
    report.warnings.extend(warnings)
    print(out / "comparison.csv")


COMMANDS = {
    "synth": cmd_synth, "pretrain": cmd_pretrain, "embed": cmd_embed,
    "lineval": cmd_lineval, "scratch": cmd_scratch, "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = f"pclr {args.command}"
    try:
        _, cfg = resolve_config(args)
        if args.dump_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        if not args.out:
            raise _Usage("the following arguments are required: --out")
        if args.command == "compare" and cfg.get("runs"):
            cfg["runs"] = [str(r) for r in cfg["runs"]]
        out = _prepare_out(args.out, args.force, allow_existing=args.command == "pretrain" and cfg.get("resume"))
        report = RunReport(args.command, _hashed(cfg), cfg.get("seed"))
        _write_config(out, {k: v for k, v in cfg.items() if k not in _UNHASHED})
        COMMANDS[args.command](cfg, out, report)
        for w in report.warnings:
            print(f"warning: {w}", file=sys.stderr)
        report.write(out)
        return 0
    except _Usage as exc:
        print(f"usage error: {sub}: {exc}", file=sys.stderr)
        return 2
    except (PclrError, OSError, ValueError) as exc:
        print(f"{sub}: error: {exc}", file=sys.stderr)
        return 1


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
