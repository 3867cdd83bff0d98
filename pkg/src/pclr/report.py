"""Run reports: config hashing, artifact checksums and cross-run comparison tables."""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

REPORT_NAME = "report.json"
METRIC_FIELDS = ("task", "size", "arm", "metric", "value")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_checksums(out_dir) -> dict[str, str]:
    """sha256 of every file under ``out_dir`` except the report itself, keyed by relative path."""
    out_dir = Path(out_dir)
    return {
        p.relative_to(out_dir).as_posix(): file_digest(p)
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p.name != REPORT_NAME and not p.name.endswith(".tmp")
    }


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int | None
    started: float = field(default_factory=time.time)
    metrics: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def add_metrics(self, task: str, size: int | None, arm: str, values: dict) -> None:
        for name, value in values.items():
            self.metrics.append({"task": task, "size": size, "arm": arm, "metric": name, "value": value})

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        doc = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "wall_time": round(time.time() - self.started, 3),
            "config": self.config,
            "artifacts": artifact_checksums(out_dir),
            "metrics": self.metrics,
            "warnings": self.warnings,
            "details": self.details,
        }
        path = out_dir / REPORT_NAME
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        return path


def read_report(run_dir) -> dict:
    path = Path(run_dir)
    if path.is_dir():
        path = path / REPORT_NAME
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"no run report at {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable run report {path}: {exc}") from None


def compare_reports(reports: list[dict]) -> tuple[list[dict], list[str]]:
    """Merge metric rows from several reports into one long table.

    Reports sharing a config hash are counted once. Every (task, size) cell
    seen in any report is expected for every arm and metric; absent
    combinations are left out and described in the returned warnings.
    """
    seen, unique = set(), []
    for rep in reports:
        if rep["config_hash"] in seen:
            continue
        seen.add(rep["config_hash"])
        unique.append(rep)
    rows, index = [], {}
    for rep in unique:
        for m in rep.get("metrics", []):
            key = (m["task"], m["size"], m["arm"], m["metric"])
            if key in index:
                continue
            index[key] = m
            rows.append({k: m[k] for k in METRIC_FIELDS})
    warnings = []
    if len(unique) < 2:
        warnings.append(f"only {len(unique)} distinct run report(s) to compare")
    cells = sorted({(r["task"], r["size"]) for r in rows}, key=lambda c: (c[0], c[1] if c[1] is not None else -1))
    arms = sorted({r["arm"] for r in rows})
    for task, size in cells:
        for arm in arms:
            metrics = {r["metric"] for r in rows if r["task"] == task and r["arm"] == arm}
            have = {k[3] for k in index if k[:3] == (task, size, arm)}
            for metric in sorted(metrics - have):
                warnings.append(f"missing cell task={task} size={size} arm={arm} metric={metric}")
    rows.sort(key=lambda r: (r["task"], r["size"] if r["size"] is not None else -1, r["arm"], r["metric"]))
    return rows, warnings


def write_metric_table(rows: list[dict], path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            value = r["value"]
            w.writerow([r["task"], "" if r["size"] is None else r["size"], r["arm"], r["metric"],
                        "" if value is None else repr(float(value))])
    return Path(path)
