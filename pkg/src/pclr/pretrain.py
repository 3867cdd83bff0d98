"""Contrastive pre-training loop with cosine-decayed Adam and validation checkpointing."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import AdamConfig, adam_step, backward, cosine_lr
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import PatientIndex, batch_loss, build_batch, ntxent_loss
from .encoder import DESK_ENCODER, PAPER_ENCODER, EncoderConfig, ModelState, build_model, encode, project
from .errors import ConfigError

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_loss")

# Stream ids mixed into the seed so that every random consumer is independent.
_SPLIT, _VAL_BATCHES, _EPOCH = 0, 1, 2


@dataclass(frozen=True)
class PretrainConfig:
    patients_per_batch: int = 512
    epochs: int = 50
    base_lr: float = 0.1
    temperature: float = 0.1
    seed: int = 0
    val_fraction: float = 0.1
    symmetric: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig.from_dict(self.encoder))
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.patients_per_batch < 1:
            raise ConfigError("patients_per_batch must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")

    @property
    def batch_size(self) -> int:
        return 2 * self.patients_per_batch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d


PAPER_PRETRAIN = PretrainConfig(encoder=PAPER_ENCODER)
DESK_PRETRAIN = PretrainConfig(
    patients_per_batch=8, epochs=10, base_lr=1e-3, val_fraction=0.25, encoder=DESK_ENCODER,
)


@dataclass
class PretrainResult:
    history: list[dict]
    best_checkpoint: Path
    last_checkpoint: Path
    initial_val_loss: float
    best_val_loss: float
    best_epoch: int
    train_patients: list[str]
    val_patients: list[str]
    pair_means: list[dict] = field(default_factory=list)


def split_patients(index: PatientIndex, val_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Patient-disjoint (train, validation) split; validation gets ``round(fraction * P)`` patients."""
    ids = sorted(index.ids())
    order = np.random.default_rng([seed, _SPLIT]).permutation(len(ids))
    n_val = int(round(val_fraction * len(ids)))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val


class EcgCache:
    """Memoizing ``ecg_id -> prepared array`` lookup over a loader callable."""

    def __init__(self, loader: Callable[[str], np.ndarray]):
        self._loader = loader
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, ecg_id: str) -> np.ndarray:
        arr = self._cache.get(ecg_id)
        if arr is None:
            arr = self._cache[ecg_id] = self._loader(ecg_id)
        return arr

    def stack(self, ids) -> np.ndarray:
        return np.stack([self(i) for i in ids])


def validation_batches(index: PatientIndex, val_ids: list[str], n: int, seed: int) -> list[list[str]]:
    """Fixed validation batches, drawn once so losses are comparable across epochs.

    When there are fewer validation patients than ``n`` they form one smaller batch.
    """
    rng = np.random.default_rng([seed, _VAL_BATCHES])
    size = min(n, len(val_ids))
    if size < 2:
        raise ConfigError(f"need at least 2 validation patients, have {len(val_ids)}")
    return [
        build_batch(index, val_ids[i:i + size], rng)
        for i in range(0, len(val_ids) - size + 1, size)
    ]


def evaluate_loss(model: ModelState, batches: list[list[str]], ecgs: EcgCache, tau: float,
                  symmetric: bool = False) -> float:
    """Mean infer-mode batch loss."""
    losses = []
    for ids in batches:
        z = project(model, encode(model, ecgs.stack(ids), training=False)).data
        losses.append(batch_loss(z, tau, symmetric))
    return float(np.mean(losses))


def train_step(model: ModelState, x: np.ndarray, adam: AdamConfig, tau: float, symmetric: bool = False) -> float:
    z = project(model, encode(model, x, training=True))
    loss = ntxent_loss(z, tau, symmetric)
    backward(loss)
    adam_step(model.trainable(), adam)
    return float(loss.data)


def _write_history(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in HISTORY_FIELDS[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"epoch": int(r["epoch"]), **{k: float(r[k]) for k in HISTORY_FIELDS[1:]}}
            for r in csv.DictReader(fh)
        ]


def pretrain(
    config: PretrainConfig,
    cohort: PatientIndex,
    loader: Callable[[str], np.ndarray],
    out_dir,
    resume: bool = False,
    halt_after: int | None = None,
) -> PretrainResult:
    """Run contrastive pre-training; writes ``best.ckpt``, ``last.ckpt`` and ``history.csv``.

    Each epoch visits every training patient once in a seeded shuffled order,
    ``patients_per_batch`` at a time, dropping the final partial batch. The
    learning rate for epoch ``e`` (0-based) is ``cosine_lr(base_lr, e, epochs)``.
    All randomness is keyed on ``(seed, stream, epoch)`` so a run resumed from
    ``last.ckpt`` continues exactly as an uninterrupted one would.

    ``halt_after`` stops after that many epochs in this call (used to simulate
    an interruption).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path, last_path, hist_path = out_dir / "best.ckpt", out_dir / "last.ckpt", out_dir / "history.csv"
    n = config.patients_per_batch
    eligible = cohort.with_min_ecgs(2)
    train_ids, val_ids = split_patients(eligible, config.val_fraction, config.seed)
    if len(train_ids) < n:
        raise ConfigError(
            f"{len(train_ids)} training patients (of {len(eligible)} with >= 2 ECGs, "
            f"{len(cohort)} total) is fewer than patients_per_batch={n}"
        )
    ecgs = loader if isinstance(loader, EcgCache) else EcgCache(loader)
    val_batches = validation_batches(eligible, val_ids, n, config.seed)

    if resume and last_path.exists():
        model = load_checkpoint(last_path, config.encoder)
        history = read_history(hist_path)[: model.epoch]
        initial_val = float(model.extra["initial_val_loss"])
        best_val = float(model.extra["best_val_loss"])
        best_epoch = int(model.extra["best_epoch"])
        pair_means = list(model.extra.get("pair_means", []))
    else:
        model = build_model(config.encoder, config.seed)
        history, pair_means = [], []
        initial_val = evaluate_loss(model, val_batches, ecgs, config.temperature, config.symmetric)
        best_val, best_epoch = float("inf"), -1
        log.info("initial validation loss %.6f", initial_val)
    adam = AdamConfig(config.base_lr, config.adam_beta1, config.adam_beta2, config.adam_epsilon, model.step_count)

    ran = 0
    for epoch in range(model.epoch, config.epochs):
        if halt_after is not None and ran >= halt_after:
            break
        adam.learning_rate = cosine_lr(config.base_lr, epoch, config.epochs)
        rng = np.random.default_rng([config.seed, _EPOCH, epoch])
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        losses = []
        for start in range(0, len(order) - n + 1, n):
            ids = build_batch(eligible, order[start:start + n], rng)
            losses.append(train_step(model, ecgs.stack(ids), adam, config.temperature, config.symmetric))
        val = evaluate_loss(model, val_batches, ecgs, config.temperature, config.symmetric)
        train_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "lr": adam.learning_rate, "train_loss": train_loss, "val_loss": val})
        pair_means.append({
            "epoch": epoch,
            "train_pair_mean": train_loss / n,
            "val_pair_mean": val / (len(val_batches[0]) // 2),
        })
        log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, adam.learning_rate, train_loss, val)
        model.epoch = epoch + 1
        model.step_count = adam.step_count
        if val < best_val:
            best_val, best_epoch = val, epoch
        model.extra = {
            "initial_val_loss": initial_val,
            "best_val_loss": best_val,
            "best_epoch": best_epoch,
            "pair_means": pair_means,
        }
        if best_epoch == epoch:
            save_checkpoint(model, best_path)
        save_checkpoint(model, last_path)
        _write_history(hist_path, history)
        ran += 1

    return PretrainResult(
        history, best_path, last_path, initial_val, best_val, best_epoch, train_ids, val_ids, pair_means,
    )


def alignment(model: ModelState, index: PatientIndex, ecgs: Callable[[str], np.ndarray]) -> tuple[float, float]:
    """Mean cosine similarity of embeddings for same-patient vs cross-patient ECG pairs (infer mode)."""
    ids, owners = [], []
    for pid, refs in index.patients.items():
        for ref in refs:
            ids.append(ref.ecg_id)
            owners.append(pid)
    cache = ecgs if isinstance(ecgs, EcgCache) else EcgCache(ecgs)
    h = np.concatenate([
        encode(model, cache.stack(ids[i:i + 32]), training=False).data for i in range(0, len(ids), 32)
    ]).astype(np.float64)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    u = h / np.where(norms == 0, 1, norms)
    sim = u @ u.T
    owners = np.array(owners)
    same = owners[:, None] == owners[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    return float(sim[same & off_diag].mean()), float(sim[~same].mean())


def with_overrides(config: PretrainConfig, **changes) -> PretrainConfig:
    return replace(config, **changes)
