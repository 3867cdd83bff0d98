"""Seeded synthetic 12-lead ECG cohorts.

Each beat is a sum of five Gaussian bumps (P, Q, R, S, T). Limb leads are
projections of a per-wave frontal-plane axis (III, aVR, aVL and aVF follow from
I and II by Einthoven/Goldberger relations); precordial leads use an R/S
progression across V1..V6. Patient-level traits persist across that patient's
ECGs, which is what makes patient identity learnable:

* per-lead gain and R/T/P amplitudes (log-normal around population means)
* age lowers QRS and T amplitude and lengthens PR/QRS/QTc
* male sex raises QRS and T amplitude
* hypertrophy multiplies precordial R and S amplitudes
* heart rate and axes

Atrial fibrillation is drawn per ECG: irregular RR intervals, no P wave,
low-amplitude fibrillatory waves and an AF keyword in the diagnosis text.
The machine-style measurements written to the manifest are the true values
plus measurement noise; P-axis is reported as -1 when no P wave exists.

All randomness derives from ``numpy.random.default_rng`` seeded with
``(seed, patient, ecg, stream)`` tuples, so any single ECG can be regenerated
in isolation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .labels import AF_KEYWORDS, label_lvh
from .manifest import CohortManifest, write_manifest
from .records import LEADS, RECORD_SECONDS, EcgRecord, write_waveform

_LIMB_ANGLES = {"I": 0.0, "II": 60.0}
_PRECORDIAL_R = np.array([0.25, 0.45, 0.75, 1.05, 1.10, 0.90])
_PRECORDIAL_S = np.array([1.10, 1.30, 1.00, 0.60, 0.35, 0.20])
_PRECORDIAL_T = np.array([0.15, 0.60, 0.90, 1.00, 0.90, 0.70])
_PRECORDIAL_P = np.array([0.50, 0.50, 0.45, 0.40, 0.40, 0.40])
_LVH_PHRASES = (
    "left ventricular hypertrophy",
    "leftventricular hypertrophy",
    "biventricular hypertrophy",
    "combined ventricular hypertrophy",
)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 64
    ecgs_per_patient: tuple[int, int] = (2, 6)
    seed: int = 0
    id_prefix: str | None = None  # defaults to "s<seed>"
    noise_uv: float = 15.0
    wander_uv: float = 40.0
    age_range: tuple[float, float] = (20.0, 90.0)
    female_rate: float = 0.5
    lvh_rate: float = 0.1
    af_rate: float = 0.05
    missing_rate: float = 0.0
    sample_rates: tuple[int, ...] = (250, 500)
    start_date: str = "2000-01-01"
    span_days: int = 3650
    # amplitudes (mV) and their patient-level log-normal spread
    r_amp_mv: float = 1.2
    t_amp_mv: float = 0.3
    p_amp_mv: float = 0.12
    amp_log_sd: float = 0.2
    lead_gain_log_sd: float = 0.15
    male_qrs_factor: float = 1.15
    female_t_factor: float = 0.65
    lvh_factor: float = 1.8
    age_amp_per_year: float = -0.008  # relative change per year away from age 55
    # rhythm and intervals (ms)
    hr_mean: float = 70.0
    hr_sd: float = 10.0
    hr_jitter: float = 4.0
    pr_ms: float = 160.0
    pr_sd: float = 20.0
    age_pr_per_year: float = 0.25
    qrs_ms: float = 92.0
    qrs_sd: float = 9.0
    age_qrs_per_year: float = 0.08
    qtc_ms: float = 410.0
    qtc_sd: float = 18.0
    age_qtc_per_year: float = 0.2
    # frontal axes (degrees)
    p_axis_mean: float = 50.0
    r_axis_mean: float = 45.0
    t_axis_mean: float = 40.0
    axis_sd: float = 20.0
    age_r_axis_per_year: float = -0.3
    # measurement noise on the reported scalar features
    measure_hr_sd: float = 1.0
    measure_interval_sd: float = 6.0
    measure_axis_sd: float = 8.0

    def __post_init__(self):
        lo, hi = self.ecgs_per_patient
        if not 1 <= lo <= hi:
            raise ValueError(f"ecgs_per_patient must satisfy 1 <= min <= max, got {self.ecgs_per_patient}")
        if self.n_patients < 0:
            raise ValueError("n_patients must be non-negative")

    @property
    def prefix(self) -> str:
        return self.id_prefix if self.id_prefix is not None else f"s{self.seed}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PatientTraits:
    index: int
    patient_id: str
    age: float
    sex: str
    lvh: bool
    hr: float
    pr: float
    qrs: float
    qtc: float
    p_axis: float
    r_axis: float
    t_axis: float
    r_amp: float
    t_amp: float
    p_amp: float
    lead_gain: np.ndarray = field(repr=False)
    transition: float
    n_ecgs: int
    first_date: datetime


@dataclass
class EcgPlan:
    patient: int
    index: int
    ecg_id: str
    sample_rate: int
    acquired_at: datetime
    age: float
    af: bool
    hr: float


def draw_patient(config: SynthConfig, index: int) -> PatientTraits:
    rng = np.random.default_rng([config.seed, index, 0])
    c = config
    age = rng.uniform(*c.age_range)
    female = rng.random() < c.female_rate
    lvh = rng.random() < c.lvh_rate
    d_age = age - 55.0
    age_amp = max(0.2, 1.0 + c.age_amp_per_year * d_age)
    lognorm = lambda: math.exp(rng.normal(0.0, c.amp_log_sd))  # noqa: E731
    r_amp = c.r_amp_mv * lognorm() * age_amp * (1.0 if female else c.male_qrs_factor)
    t_amp = c.t_amp_mv * lognorm() * age_amp * (c.female_t_factor if female else 1.0)
    p_amp = c.p_amp_mv * lognorm()
    hr = float(np.clip(rng.normal(c.hr_mean, c.hr_sd), 45, 110))
    pr = float(np.clip(rng.normal(c.pr_ms + c.age_pr_per_year * d_age, c.pr_sd), 100, 280))
    qrs = float(np.clip(rng.normal(c.qrs_ms + c.age_qrs_per_year * d_age, c.qrs_sd), 60, 160))
    qtc = float(np.clip(rng.normal(c.qtc_ms + c.age_qtc_per_year * d_age, c.qtc_sd), 340, 500))
    p_axis = rng.normal(c.p_axis_mean, c.axis_sd)
    r_axis = rng.normal(c.r_axis_mean + c.age_r_axis_per_year * d_age, c.axis_sd)
    t_axis = rng.normal(c.t_axis_mean, c.axis_sd)
    gain = np.exp(rng.normal(0.0, c.lead_gain_log_sd, size=len(LEADS)))
    transition = rng.normal(0.0, 0.7)
    n_ecgs = int(rng.integers(c.ecgs_per_patient[0], c.ecgs_per_patient[1] + 1))
    first = datetime.fromisoformat(c.start_date) + timedelta(days=int(rng.integers(0, max(1, c.span_days // 2))))
    return PatientTraits(
        index, f"{c.prefix}p{index:05d}", age, "female" if female else "male", lvh, hr, pr, qrs, qtc,
        p_axis, r_axis, t_axis, r_amp, t_amp, p_amp, gain, transition, n_ecgs, first,
    )


def plan_ecgs(config: SynthConfig, traits: PatientTraits) -> list[EcgPlan]:
    rng = np.random.default_rng([config.seed, traits.index, 1])
    offsets = np.sort(rng.integers(0, max(1, config.span_days // 2), size=traits.n_ecgs))
    plans = []
    for k, days in enumerate(offsets):
        when = traits.first_date + timedelta(days=int(days), minutes=int(rng.integers(0, 24 * 60)))
        af = bool(rng.random() < config.af_rate)
        hr = float(np.clip(traits.hr + rng.normal(0.0, config.hr_jitter) + (25.0 if af else 0.0), 40, 160))
        plans.append(EcgPlan(
            traits.index, k, f"{traits.patient_id}e{k}", int(rng.choice(config.sample_rates)), when,
            round(float(traits.age) + int(days) / 365.25, 1), af, hr,
        ))
    return plans


def _limb_projection(amplitude: float, axis_deg: float) -> np.ndarray:
    """Amplitude of a wave with the given frontal axis on the six limb leads."""
    lead_i = amplitude * math.cos(math.radians(axis_deg - _LIMB_ANGLES["I"]))
    lead_ii = amplitude * math.cos(math.radians(axis_deg - _LIMB_ANGLES["II"]))
    return np.array([
        lead_i,
        lead_ii,
        lead_ii - lead_i,
        -(lead_i + lead_ii) / 2,
        lead_i - lead_ii / 2,
        lead_ii - lead_i / 2,
    ])


def _precordial(weights: np.ndarray, shift: float) -> np.ndarray:
    pos = np.clip(np.arange(6) + shift, 0, 5)
    return np.interp(pos, np.arange(6), weights)


def _bumps(t: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    out = np.zeros_like(t)
    for c in centers:
        lo, hi = np.searchsorted(t, [c - 5 * sigma, c + 5 * sigma])
        if hi > lo:
            out[lo:hi] += np.exp(-0.5 * ((t[lo:hi] - c) / sigma) ** 2)
    return out


def synthesize(config: SynthConfig, traits: PatientTraits, plan: EcgPlan) -> dict[str, np.ndarray]:
    """Integer-microvolt leads for one planned ECG."""
    rng = np.random.default_rng([config.seed, traits.index, 2, plan.index])
    fs = plan.sample_rate
    n = fs * RECORD_SECONDS
    t = np.arange(n) / fs
    rr = 60.0 / plan.hr
    beats, tb = [], rng.uniform(0, rr) - rr
    while tb < RECORD_SECONDS + rr:
        beats.append(tb)
        tb += rr * (math.exp(rng.normal(0, 0.18)) if plan.af else (1 + rng.normal(0, 0.02)))
    beats = np.array(beats)

    qrs = traits.qrs / 1000
    onset = beats - qrs / 2
    qt = traits.qtc / 1000 * math.sqrt(rr)
    lvh = config.lvh_factor if traits.lvh else 1.0
    waves = {
        "P": (onset - traits.pr / 1000 + 0.05, 0.02),
        "Q": (beats - 0.3 * qrs, 0.08 * qrs),
        "R": (beats, 0.1 * qrs),
        "S": (beats + 0.3 * qrs, 0.08 * qrs),
        "T": (onset + qt - 0.1, 0.045),
    }
    amps = {
        "P": np.concatenate([_limb_projection(traits.p_amp, traits.p_axis), traits.p_amp * _PRECORDIAL_P]),
        "Q": np.concatenate([
            _limb_projection(-0.12 * traits.r_amp, traits.r_axis),
            -0.05 * traits.r_amp * _precordial(_PRECORDIAL_R, traits.transition),
        ]),
        "R": np.concatenate([
            _limb_projection(traits.r_amp, traits.r_axis),
            lvh * traits.r_amp * _precordial(_PRECORDIAL_R, traits.transition),
        ]),
        "S": np.concatenate([
            _limb_projection(-0.25 * traits.r_amp, traits.r_axis + 30),
            -lvh * traits.r_amp * _precordial(_PRECORDIAL_S, traits.transition),
        ]),
        "T": np.concatenate([_limb_projection(traits.t_amp, traits.t_axis), traits.t_amp * _PRECORDIAL_T]),
    }
    signal = np.zeros((n, len(LEADS)))
    for wave, (centers, sigma) in waves.items():
        if wave == "P" and plan.af:
            continue
        signal += np.outer(_bumps(t, centers, sigma), amps[wave])
    if plan.af:
        for _ in range(3):
            f = rng.uniform(4.5, 7.5)
            signal += np.outer(
                0.04 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)),
                rng.uniform(0.2, 1.0, size=len(LEADS)),
            )
    signal *= traits.lead_gain[None, :]
    signal *= 1000.0  # mV -> uV
    if config.wander_uv:
        f = rng.uniform(0.1, 0.4)
        signal += config.wander_uv * np.sin(2 * np.pi * f * t[:, None] + rng.uniform(0, 2 * np.pi, size=len(LEADS)))
    if config.noise_uv:
        signal += rng.normal(0.0, config.noise_uv, size=signal.shape)
    ints = np.clip(np.rint(signal), -32768, 32767).astype(np.int16)
    return {lead: ints[:, i] for i, lead in enumerate(LEADS)}


def _diagnosis(rng: np.random.Generator, traits: PatientTraits, plan: EcgPlan) -> str:
    parts = []
    if plan.af:
        parts.append(str(rng.choice(sorted(AF_KEYWORDS))))
    elif plan.hr < 60:
        parts.append("sinus bradycardia")
    elif plan.hr > 100:
        parts.append("sinus tachycardia")
    else:
        parts.append(str(rng.choice(["normal sinus rhythm", "sinus rhythm"])))
    if traits.lvh:
        parts.append(str(rng.choice(_LVH_PHRASES)))
    if len(parts) == 1 and not plan.af:
        parts.append("normal ecg")
    text = "; ".join(parts)
    return text.upper() if rng.random() < 0.5 else text


def measure(config: SynthConfig, traits: PatientTraits, plan: EcgPlan) -> EcgRecord:
    """Metadata-only record: reported measurements, demographics and diagnosis text."""
    rng = np.random.default_rng([config.seed, traits.index, 3, plan.index])
    rr = 60.0 / plan.hr
    noisy = lambda value, sd: float(round(value + rng.normal(0.0, sd)))  # noqa: E731
    values = {
        "hr": noisy(plan.hr, config.measure_hr_sd),
        "pr": None if plan.af else noisy(traits.pr, config.measure_interval_sd),
        "qrs": noisy(traits.qrs, config.measure_interval_sd),
        "qt": noisy(traits.qtc * math.sqrt(rr), config.measure_interval_sd),
        "p_axis": -1.0 if plan.af else noisy(traits.p_axis, config.measure_axis_sd),
        "r_axis": noisy(traits.r_axis, config.measure_axis_sd),
        "t_axis": noisy(traits.t_axis, config.measure_axis_sd),
    }
    diagnosis = _diagnosis(rng, traits, plan)
    if config.missing_rate and rng.random() < config.missing_rate:
        values[str(rng.choice(sorted(values)))] = None
    return EcgRecord(
        patient_id=traits.patient_id,
        ecg_id=plan.ecg_id,
        sample_rate=plan.sample_rate,
        acquired_at=plan.acquired_at,
        age=plan.age,
        sex=traits.sex,
        diagnosis_text=diagnosis,
        **values,
    )


def generate_metadata(config: SynthConfig) -> list[tuple[PatientTraits, EcgPlan, EcgRecord]]:
    """Every planned ECG with its patient traits and metadata record (no waveforms)."""
    out = []
    for i in range(config.n_patients):
        traits = draw_patient(config, i)
        for plan in plan_ecgs(config, traits):
            out.append((traits, plan, measure(config, traits, plan)))
    return out


def generate_synthetic_cohort(config: SynthConfig, out_dir) -> CohortManifest:
    """Write ``waveforms/<ecg_id>.csv`` files and ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    wave_dir = out_dir / "waveforms"
    wave_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for traits, plan, rec in generate_metadata(config):
        rel = f"waveforms/{plan.ecg_id}.csv"
        write_waveform(out_dir / rel, synthesize(config, traits, plan))
        rec.path = rel
        rec.base_dir = str(out_dir.resolve())
        records.append(rec)
    manifest = CohortManifest(records, out_dir.resolve())
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


assert all(label_lvh(p) for p in _LVH_PHRASES)


def with_flag(traits: PatientTraits, **changes) -> PatientTraits:
    """Copy of ``traits`` with fields replaced (used for paired what-if generation)."""
    return replace(traits, **changes)
