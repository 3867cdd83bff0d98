"""Cohort quality filters for the labelled evaluation sets."""
from __future__ import annotations

from typing import Iterable, NamedTuple

from .records import EcgRecord, max_abs_mv

AGE_RANGE = (20.0, 90.0)
MAX_AMPLITUDE_MV = 100.0
P_AXIS_SENTINEL = -1

REQUIRED_FIELDS = {
    "non-af": ("age", "sex", "diagnosis_text", "hr", "pr", "qt", "qrs", "p_axis", "r_axis", "t_axis"),
    "af": ("age", "sex", "hr", "diagnosis_text"),
}


class Verdict(NamedTuple):
    passed: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.passed


PASS = Verdict(True)


def quality_filter(record: EcgRecord, profile: str = "non-af") -> Verdict:
    """Check one record; the first failing criterion is reported.

    Order: age range, amplitude cap (raw millivolts, all leads), required
    fields for the profile, then the P-axis missingness sentinel (non-af only).
    A missing age skips the range check and is reported as a missing field.
    """
    if profile not in REQUIRED_FIELDS:
        raise ValueError(f"unknown quality profile {profile!r}")
    if record.age is not None and not AGE_RANGE[0] <= record.age <= AGE_RANGE[1]:
        return Verdict(False, "age")
    if max_abs_mv(record) > MAX_AMPLITUDE_MV:
        return Verdict(False, "amplitude")
    for name in REQUIRED_FIELDS[profile]:
        value = getattr(record, name)
        if value is None or value == "":
            return Verdict(False, f"missing:{name}")
    if profile == "non-af" and record.p_axis == P_AXIS_SENTINEL:
        return Verdict(False, "p-axis sentinel")
    return PASS


def filter_records(records: Iterable[EcgRecord], profile: str = "non-af") -> list[EcgRecord]:
    return [r for r in records if quality_filter(r, profile)]
