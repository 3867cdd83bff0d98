"""Patient-pair batches and the normalized temperature-scaled cross-entropy loss.

A batch of ``N`` patients has ``2N`` rows: row ``p`` and row ``p + N`` are two
ECGs (drawn with replacement) of patient ``p``. Every other row in the batch is
a negative for that pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Sequence

import numpy as np

from .autodiff.tensor import Tensor, record
from .errors import ConfigError, DataError, DimensionError, NumericDegeneracyError


@dataclass(frozen=True)
class EcgRef:
    ecg_id: str
    acquired_at: datetime | None = None


@dataclass
class PatientIndex:
    """``patient_id -> ECG references``; patient order is insertion order."""

    patients: dict[str, list[EcgRef]] = field(default_factory=dict)

    def add(self, patient_id: str, ref: EcgRef) -> None:
        self.patients.setdefault(patient_id, []).append(ref)

    def ids(self) -> list[str]:
        return list(self.patients)

    def __len__(self) -> int:
        return len(self.patients)

    def __getitem__(self, patient_id: str) -> list[EcgRef]:
        return self.patients[patient_id]

    def with_min_ecgs(self, n: int = 2) -> "PatientIndex":
        return PatientIndex({p: refs for p, refs in self.patients.items() if len(refs) >= n})

    def subset(self, patient_ids: Sequence[str]) -> "PatientIndex":
        return PatientIndex({p: self.patients[p] for p in patient_ids})


def build_batch(index: PatientIndex, patient_sample: Sequence[str], rng: np.random.Generator) -> list[str]:
    """ECG ids for a contrastive batch: first draws of every patient, then second draws.

    Both draws are uniform with replacement, so a patient with a single ECG
    contributes it twice.
    """
    first, second = [], []
    for pid in patient_sample:
        try:
            refs = index[pid]
        except KeyError:
            raise DataError(f"patient {pid!r} is not in the index") from None
        if not refs:
            raise DataError(f"patient {pid!r} has no ECGs")
        first.append(refs[rng.integers(len(refs))].ecg_id)
        second.append(refs[rng.integers(len(refs))].ecg_id)
    return first + second


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise NumericDegeneracyError("cosine similarity of a zero vector")
    return float(u @ v / (nu * nv))


def _unit_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise NumericDegeneracyError(f"projection row {bad} has zero norm")
    return z / norms[:, None], norms


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")


def ntxent_pair_loss(i: int, j: int, z, tau: float = 0.1) -> float:
    """``-log(exp(sim(z_i, z_j)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau))``."""
    _check_tau(tau)
    z = np.asarray(z, dtype=np.float64)
    if i == j:
        raise ConfigError("anchor and positive must be distinct rows")
    u, _ = _unit_rows(z)
    logits = u @ u[i] / tau
    others = np.delete(logits, i)
    top = others.max()
    return float(top + np.log(np.exp(others - top).sum()) - logits[j])


def _pairs(two_n: int, symmetric: bool) -> tuple[np.ndarray, np.ndarray]:
    if two_n % 2:
        raise DimensionError(f"contrastive batch needs an even row count, got {two_n}")
    n = two_n // 2
    anchors = np.arange(n)
    positives = anchors + n
    if symmetric:
        anchors, positives = np.concatenate([anchors, positives]), np.concatenate([positives, anchors])
    return anchors, positives


def _ntxent_terms(z: np.ndarray, tau: float, symmetric: bool):
    u, norms = _unit_rows(z)
    anchors, positives = _pairs(len(z), symmetric)
    logits = (u[anchors] @ u.T) / tau
    rows = np.arange(len(anchors))
    logits[rows, anchors] = -np.inf
    top = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - top)
    denom = expd.sum(axis=1)
    losses = top[:, 0] + np.log(denom) - logits[rows, positives]
    return losses, (u, norms, anchors, positives, expd / denom[:, None])


def batch_loss(z, tau: float = 0.1, symmetric: bool = False) -> float:
    """Sum over patients of the pair loss from first draw to second draw.

    ``symmetric=True`` adds the reverse direction for every pair.
    """
    _check_tau(tau)
    losses, _ = _ntxent_terms(np.asarray(z, dtype=np.float64), tau, symmetric)
    return float(losses.sum())


def ntxent_loss(z: Tensor, tau: float = 0.1, symmetric: bool = False) -> Tensor:
    """Differentiable ``batch_loss`` on a projection tensor ``[2N, D]``."""
    _check_tau(tau)
    data = z.data
    losses, (u, norms, anchors, positives, soft) = _ntxent_terms(data, tau, symmetric)

    def _backward(g):
        two_n = len(data)
        # dL/dlogits for each anchor row, scattered into a full similarity gradient.
        gs = soft.copy()
        gs[np.arange(len(anchors)), positives] -= 1
        full = np.zeros((two_n, two_n), dtype=data.dtype)
        np.add.at(full, anchors, gs)
        du = (full + full.T) @ u * (g / tau)
        dz = (du - u * (du * u).sum(axis=1, keepdims=True)) / norms[:, None]
        return (dz.astype(data.dtype, copy=False),)

    return record(np.asarray(losses.sum(), dtype=data.dtype), (z,), _backward)
