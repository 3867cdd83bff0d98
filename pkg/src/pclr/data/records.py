"""ECG records and preprocessing to the fixed ``4096 x 12`` millivolt encoder input."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

LEADS = ("I", "II", "III", "AVR", "AVL", "AVF", "V1", "V2", "V3", "V4", "V5", "V6")
PRECORDIAL = LEADS[6:]
TARGET_SAMPLES = 4096
RECORD_SECONDS = 10

# Optional scalar metadata, in manifest column order.
MEASUREMENTS = ("hr", "pr", "qrs", "qt", "p_axis", "r_axis", "t_axis")


@dataclass
class EcgRecord:
    """One 12-lead ECG.

    ``leads`` maps lead name to integer microvolts; it may be ``None`` for a
    record read from a manifest, in which case the waveform is loaded from
    ``path`` on demand.
    """

    patient_id: str
    ecg_id: str
    sample_rate: int
    acquired_at: datetime | None = None
    leads: dict[str, np.ndarray] | None = field(default=None, repr=False, compare=False)
    path: str | None = None
    base_dir: str | None = field(default=None, repr=False, compare=False)
    age: float | None = None
    sex: str | None = None  # "male" | "female"
    diagnosis_text: str | None = None
    hr: float | None = None
    pr: float | None = None
    qrs: float | None = None
    qt: float | None = None
    p_axis: float | None = None
    r_axis: float | None = None
    t_axis: float | None = None

    def waveform(self) -> dict[str, np.ndarray]:
        if self.leads is None:
            if self.path is None:
                raise DataError(f"ECG {self.ecg_id}: no waveform and no path")
            self.leads = read_waveform(self.waveform_path())
        return self.leads

    def waveform_path(self) -> Path:
        p = Path(self.path)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def metadata(self) -> dict:
        skip = {"leads", "base_dir"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}


def resample_lead(signal, target: int = TARGET_SAMPLES) -> np.ndarray:
    """Linear interpolation of ``signal`` onto ``target`` endpoint-inclusive points.

    Output sample ``k`` is the signal evaluated at fractional index
    ``k * (L - 1) / (target - 1)``, so the first and last samples are kept exactly.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or len(signal) < 2:
        raise DataError(f"resampling needs a 1-D signal of length >= 2, got shape {signal.shape}")
    if target < 2:
        raise DataError(f"resampling target must be >= 2, got {target}")
    n = len(signal)
    pos = np.arange(target) * (n - 1) / (target - 1)
    return np.interp(pos, np.arange(n), signal)


def prepare_ecg(record: EcgRecord | Mapping[str, np.ndarray], target: int = TARGET_SAMPLES) -> np.ndarray:
    """Microvolt leads -> ``[target, 12]`` float32 millivolts in canonical lead order."""
    leads = record.waveform() if isinstance(record, EcgRecord) else record
    length = None
    cols = []
    for name in LEADS:
        if name not in leads:
            raise DataError(f"missing lead {name}")
        mv = np.asarray(leads[name], dtype=np.float64) / 1000.0
        if length is None:
            length = len(mv)
        elif len(mv) != length:
            raise DataError(f"lead {name} has {len(mv)} samples, expected {length}")
        cols.append(resample_lead(mv, target))
    out = np.stack(cols, axis=1).astype(np.float32)  # the only rounding to float32
    if not np.all(np.isfinite(out)):
        raise DataError("non-finite samples after preprocessing")
    return out


def max_abs_mv(record: EcgRecord) -> float:
    leads = record.waveform()
    return max(float(np.max(np.abs(np.asarray(v, dtype=np.float64)))) for v in leads.values()) / 1000.0


def write_waveform(path, leads: Mapping[str, np.ndarray]) -> None:
    """One CSV per ECG: header of the 12 lead names, one integer-microvolt row per sample."""
    missing = [l for l in LEADS if l not in leads]
    if missing:
        raise DataError(f"cannot write waveform without leads {missing}")
    mat = np.stack([np.asarray(leads[l]) for l in LEADS], axis=1).astype(np.int64)
    lines = [",".join(LEADS)]
    lines.extend(",".join(map(str, row)) for row in mat.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_waveform(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
            body = np.loadtxt(fh, delimiter=",", dtype=np.int32, ndmin=2)
    except FileNotFoundError:
        raise DataError(f"waveform file not found: {path}") from None
    except (StopIteration, ValueError) as exc:
        raise DataError(f"malformed waveform file {path}: {exc}") from None
    header = [h.strip().upper() for h in header]
    if body.shape[1] != len(header):
        raise DataError(f"{path}: {len(header)} header columns but {body.shape[1]} data columns")
    return {name: body[:, i].copy() for i, name in enumerate(header)}
