"""Cohort manifest: one CSV row per ECG with its waveform path and metadata."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..contrastive import EcgRef, PatientIndex
from ..errors import DuplicateIdError, MalformedRowError, MissingFileError
from .records import EcgRecord, prepare_ecg

FIELDS = (
    "ecg_id", "patient_id", "path", "sample_rate", "acquired_at", "age", "sex", "diagnosis_text",
    "hr", "pr", "qrs", "qt", "p_axis", "r_axis", "t_axis",
)
_FLOAT_FIELDS = ("age", "hr", "pr", "qrs", "qt", "p_axis", "r_axis", "t_axis")


@dataclass
class CohortManifest:
    records: list[EcgRecord] = field(default_factory=list)
    root: Path | None = None  # directory that relative waveform paths resolve against

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, EcgRecord]:
        return {r.ecg_id: r for r in self.records}

    def patient_index(self) -> PatientIndex:
        index = PatientIndex()
        for r in self.records:
            index.add(r.patient_id, EcgRef(r.ecg_id, r.acquired_at))
        return index

    def patients(self) -> list[str]:
        return list(dict.fromkeys(r.patient_id for r in self.records))

    def subset(self, records) -> "CohortManifest":
        return CohortManifest(list(records), self.root)

    def most_recent_per_patient(self) -> "CohortManifest":
        """Latest ECG of each patient (ties and missing timestamps resolved by file order)."""
        latest: dict[str, EcgRecord] = {}
        for r in self.records:
            cur = latest.get(r.patient_id)
            if cur is None or (r.acquired_at or datetime.min) >= (cur.acquired_at or datetime.min):
                latest[r.patient_id] = r
        return self.subset(latest.values())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_manifest(manifest: CohortManifest, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in manifest.records:
            writer.writerow([_fmt(getattr(r, name)) for name in FIELDS])
    return path


def _parse_row(row: dict, line: int) -> EcgRecord:
    def text(name):
        v = row[name]
        return v if v != "" else None

    try:
        values = {name: (float(row[name]) if row[name] != "" else None) for name in _FLOAT_FIELDS}
        sample_rate = int(row["sample_rate"])
        acquired = datetime.fromisoformat(row["acquired_at"]) if row["acquired_at"] else None
    except (TypeError, ValueError) as exc:
        raise MalformedRowError(f"bad value ({exc})", line) from None
    if not row["ecg_id"] or not row["patient_id"]:
        raise MalformedRowError("ecg_id and patient_id are required", line)
    if text("sex") not in (None, "male", "female"):
        raise MalformedRowError(f"sex must be 'male' or 'female', got {row['sex']!r}", line)
    return EcgRecord(
        patient_id=row["patient_id"],
        ecg_id=row["ecg_id"],
        sample_rate=sample_rate,
        acquired_at=acquired,
        path=text("path"),
        sex=text("sex"),
        diagnosis_text=text("diagnosis_text"),
        **values,
    )


def load_manifest(path, check_files: bool = True) -> CohortManifest:
    """Parse and validate a manifest; relative waveform paths resolve against its directory.

    Raises ``MalformedRowError``, ``DuplicateIdError`` or ``MissingFileError``,
    each carrying the 1-based file line number.
    """
    path = Path(path)
    root = path.resolve().parent
    records: list[EcgRecord] = []
    seen: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRowError("empty manifest", 1) from None
        missing = [f for f in FIELDS if f not in header]
        if missing:
            raise MalformedRowError(f"header lacks columns {missing}", 1)
        for cells in reader:
            line = reader.line_num
            if not cells:
                continue
            if len(cells) != len(header):
                raise MalformedRowError(f"expected {len(header)} fields, got {len(cells)}", line)
            rec = _parse_row(dict(zip(header, cells)), line)
            if rec.ecg_id in seen:
                raise DuplicateIdError(
                    f"duplicate ecg_id {rec.ecg_id!r} (first seen on line {seen[rec.ecg_id]})", line
                )
            seen[rec.ecg_id] = line
            if rec.path is not None:
                rec.base_dir = str(root)
                resolved = rec.waveform_path()
                if check_files and not resolved.is_file():
                    raise MissingFileError(f"waveform file not found: {resolved}", line)
            records.append(rec)
    return CohortManifest(records, root)


def load_prepared(manifest: CohortManifest) -> tuple[list[str], np.ndarray]:
    """Prepare every ECG in the manifest; returns ids and a ``[N, 4096, 12]`` array."""
    ids = [r.ecg_id for r in manifest.records]
    arr = np.stack([prepare_ecg(r) for r in manifest.records]) if ids else np.zeros((0, 4096, 12), np.float32)
    return ids, arr
