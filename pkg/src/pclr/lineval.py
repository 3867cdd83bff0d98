"""Linear evaluation of frozen ECG features.

Features are column-standardized with training statistics, a ridge (regression)
or logistic ridge (classification) model is fitted with its penalty chosen by
4-fold cross-validation over a fixed log-spaced grid, and the refitted model is
scored on held-out rows. Regression targets are normalized with the training
mean and standard deviation before fitting; the intercept is never penalized.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import rankdata

from .errors import DataError

log = logging.getLogger(__name__)

REGRESSION = "regression"
CLASSIFICATION = "binary-classification"
TASK_KINDS = {"age": REGRESSION, "sex": CLASSIFICATION, "lvh": CLASSIFICATION, "af": CLASSIFICATION}

GRID_SIZE = 10
GRID_LOW_EXP, GRID_HIGH_EXP = -6, 5


def penalty_grid() -> np.ndarray:
    """Ten penalties ``10**(-6 + 11 i / 9)``, ascending, endpoints exactly 1e-6 and 1e5."""
    exps = GRID_LOW_EXP + (GRID_HIGH_EXP - GRID_LOW_EXP) * np.arange(GRID_SIZE) / (GRID_SIZE - 1)
    grid = 10.0 ** exps
    grid[0], grid[-1] = 10.0 ** GRID_LOW_EXP, 10.0 ** GRID_HIGH_EXP
    return grid


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # columns with zero variance, passed through unscaled

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.mean):
            raise DataError(f"expected {len(self.mean)} feature columns, got shape {x.shape}")
        return (x - self.mean) / self.std


def _check_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"feature matrix must be non-empty 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("feature matrix contains non-finite values")
    return x


def standardize_fit(train) -> Standardizer:
    x = _check_matrix(train)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    degenerate = std == 0
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} constant feature column(s) left unscaled", RuntimeWarning,
                      stacklevel=2)
    return Standardizer(mean, np.where(degenerate, 1.0, std), degenerate)


def standardize_apply(s: Standardizer, x) -> np.ndarray:
    return s.apply(x)


@dataclass
class LinearProbe:
    task: str
    weights: np.ndarray
    intercept: float
    lam: float
    standardizer: Standardizer | None = None
    target_mean: float = 0.0
    target_std: float = 1.0
    iterations: int = 0

    def decision(self, x) -> np.ndarray:
        """Linear score on raw features (standardized internally when fitted with a standardizer)."""
        z = self.standardizer.apply(x) if self.standardizer is not None else np.asarray(x, dtype=np.float64)
        return z @ self.weights + self.intercept

    def predict(self, x) -> np.ndarray:
        """Regression: target-unit predictions. Classification: positive-class probabilities."""
        s = self.decision(x)
        if self.task == REGRESSION:
            return s * self.target_std + self.target_mean
        return _sigmoid(s)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -s))


def ridge_fit(x, y, lam: float) -> LinearProbe:
    """Solve ``(X'X + lam I) beta = X'y``.

    Inputs are expected standardized/normalized; the intercept is the
    residual mean ``mean(y) - mean(X) @ beta`` and is not penalized.
    """
    x = _check_matrix(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != len(x) or not np.all(np.isfinite(y)):
        raise DataError("target must be finite with one value per row")
    if lam < 0:
        raise DataError(f"penalty must be non-negative, got {lam}")
    gram = x.T @ x + lam * np.eye(x.shape[1])
    rhs = x.T @ y
    try:
        beta = linalg.solve(gram, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        beta = linalg.lstsq(gram, rhs)[0]
    intercept = float(y.mean() - x.mean(axis=0) @ beta)
    return LinearProbe(REGRESSION, beta, intercept, lam)


def _logistic_objective(x, y, beta, b, lam):
    s = x @ beta + b
    return float(np.mean(np.logaddexp(0.0, s) - y * s) + 0.5 * lam * beta @ beta)


def logistic_ridge_fit(x, y, lam: float, tol: float = 1e-8, max_iter: int = 100) -> LinearProbe:
    """Minimize mean log-loss + ``lam * |beta|^2 / 2`` by damped Newton iterations.

    Stops when the gradient max-norm drops below ``tol`` or after ``max_iter``
    iterations; each Newton step is halved until the objective decreases.
    """
    x = _check_matrix(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != len(x):
        raise DataError("target must have one value per row")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("binary targets must be 0 or 1")
    if y.min() == y.max():
        raise DataError("logistic fit needs both classes in the training rows")
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    reg = np.full(d + 1, lam)
    reg[-1] = 0.0
    w = np.zeros(d + 1)
    obj = _logistic_objective(x, y, w[:-1], w[-1], lam)
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(xa @ w)
        grad = xa.T @ (p - y) / n + reg * w
        if np.max(np.abs(grad)) < tol:
            break
        hess = (xa * (p * (1 - p))[:, None]).T @ xa / n + np.diag(reg)
        try:
            step = linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(hess, grad)[0]
        t = 1.0
        while t > 1e-10:
            cand = w - t * step
            new_obj = _logistic_objective(x, y, cand[:-1], cand[-1], lam)
            if new_obj <= obj:
                break
            t *= 0.5
        w, obj = cand, new_obj
    return LinearProbe(CLASSIFICATION, w[:-1], float(w[-1]), lam, iterations=it)


def _fit_standardized(x, y, task: str, lam: float) -> LinearProbe:
    """Standardize features (and regression targets) on these rows, then fit."""
    s = standardize_fit(x) if not _quiet_degenerate(x) else _standardize_quiet(x)
    z = s.apply(x)
    if task == REGRESSION:
        y = np.asarray(y, dtype=np.float64)
        mu, sd = float(y.mean()), float(y.std())
        sd = sd if sd > 0 else 1.0
        probe = ridge_fit(z, (y - mu) / sd, lam)
        probe.target_mean, probe.target_std = mu, sd
    else:
        probe = logistic_ridge_fit(z, y, lam)
    probe.standardizer = s
    return probe


def _quiet_degenerate(x) -> bool:
    return bool(np.any(np.asarray(x).std(axis=0) == 0))


def _standardize_quiet(x) -> Standardizer:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return standardize_fit(x)


fit_probe = _fit_standardized


def log_loss(y, p) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def auroc(y, scores) -> float | None:
    """Mann-Whitney AUROC with midranks for ties; ``None`` when only one class is present."""
    y = np.asarray(y).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def regression_metrics(y, pred) -> dict:
    y = np.asarray(y, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    err = pred - y
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float((err ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else None)
    return {"mse": float((err ** 2).mean()), "mae": float(np.abs(err).mean()), "r2": r2}


def evaluate(probe: LinearProbe, x_test, y_test, task: str | None = None) -> dict:
    task = task or probe.task
    pred = probe.predict(x_test)
    if task == REGRESSION:
        return regression_metrics(y_test, pred)
    return {"auroc": auroc(y_test, pred), "log_loss": log_loss(y_test, pred)}


def _fold_loss(probe: LinearProbe, x, y, task: str) -> float:
    pred = probe.predict(x)
    if task == REGRESSION:
        return float(((pred - np.asarray(y, dtype=np.float64)) ** 2).mean())
    return log_loss(y, pred)


@dataclass
class CVResult:
    lam: float
    fold_losses: np.ndarray  # [folds, grid]
    folds: list[np.ndarray]
    grid: np.ndarray = field(default_factory=penalty_grid)

    @property
    def mean_losses(self) -> np.ndarray:
        return self.fold_losses.mean(axis=0)


def assign_folds(n: int, folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded row shuffle cut into contiguous folds."""
    return np.array_split(rng.permutation(n), folds)


def cv_select(x, y, task: str, folds: int = 4, grid=None, seed: int = 0,
              fold_indices: list[np.ndarray] | None = None) -> CVResult:
    """Pick the penalty with the lowest mean validation loss (ties go to the larger penalty).

    Validation loss is MSE in target units for regression and log-loss for
    classification. Standardization and target normalization are refitted
    inside every training fold.
    """
    x = _check_matrix(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    grid = penalty_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    n = len(x)
    if n < folds:
        raise DataError(f"{n} rows cannot be split into {folds} folds")
    if fold_indices is None:
        rng = np.random.default_rng(seed)
        fold_indices = assign_folds(n, folds, rng)
        if task == CLASSIFICATION:
            for attempt in range(2):
                if all(np.unique(np.delete(y, f)).size == 2 for f in fold_indices):
                    break
                if attempt == 1:
                    raise DataError("a training fold contains a single class even after re-drawing folds")
                fold_indices = assign_folds(n, folds, rng)
    losses = np.empty((len(fold_indices), len(grid)))
    for i, val_idx in enumerate(fold_indices):
        train_mask = np.ones(n, dtype=bool)
        train_mask[val_idx] = False
        for j, lam in enumerate(grid):
            probe = _fit_standardized(x[train_mask], y[train_mask], task, lam)
            losses[i, j] = _fold_loss(probe, x[val_idx], y[val_idx], task)
    mean = losses.mean(axis=0)
    best = int(np.flatnonzero(mean == mean.min())[-1])
    return CVResult(float(grid[best]), losses, list(fold_indices), grid)


@dataclass
class ProbeReport:
    task: str
    kind: str
    lam: float
    fold_losses: np.ndarray
    test_metrics: dict
    train_metrics: dict
    probe: LinearProbe
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "kind": self.kind,
            "lambda": self.lam,
            "fold_losses": self.fold_losses.tolist(),
            "test_metrics": self.test_metrics,
            "train_metrics": self.train_metrics,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def evaluate_features(x_train, y_train, x_test, y_test, task: str, seed: int = 0, folds: int = 4) -> ProbeReport:
    """Cross-validate the penalty on training rows, refit on all of them, score the test rows."""
    kind = TASK_KINDS.get(task, task)
    if kind not in (REGRESSION, CLASSIFICATION):
        raise DataError(f"unknown task {task!r}")
    x_train = _check_matrix(x_train)
    x_test = _check_matrix(x_test)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.float64)
    cv = cv_select(x_train, y_train, kind, folds=folds, seed=seed)
    probe = _fit_standardized(x_train, y_train, kind, cv.lam)
    return ProbeReport(
        task, kind, cv.lam, cv.fold_losses,
        evaluate(probe, x_test, y_test, kind),
        evaluate(probe, x_train, y_train, kind),
        probe, len(x_train), len(x_test),
    )


STANDARD_FEATURES = ("hr", "pr", "qrs", "qt", "p_axis", "r_axis", "t_axis")


def quality_profile(task: str) -> str:
    return "af" if task == "af" else "non-af"


def task_target(record, task: str) -> float:
    """Label of one record: age in years, or 1.0 for female / LVH / AF."""
    from .data.labels import label_af, label_lvh

    if task == "age":
        if record.age is None:
            raise DataError(f"ECG {record.ecg_id}: no age")
        return float(record.age)
    if task == "sex":
        if record.sex is None:
            raise DataError(f"ECG {record.ecg_id}: no sex")
        return 1.0 if record.sex == "female" else 0.0
    if task == "lvh":
        return float(label_lvh(record.diagnosis_text))
    if task == "af":
        return float(label_af(record.diagnosis_text))
    raise DataError(f"unknown task {task!r}")


def standard_features(records, task: str | None = None) -> np.ndarray:
    """Seven machine measurements per record as an ``[N, 7]`` matrix."""
    if task == "af":
        raise DataError("standard features refused for the AF task: PR interval undefined under AF")
    rows = []
    for r in records:
        values = [getattr(r, name) for name in STANDARD_FEATURES]
        missing = [n for n, v in zip(STANDARD_FEATURES, values) if v is None]
        if missing:
            raise DataError(f"ECG {r.ecg_id}: missing standard features {missing}")
        rows.append(values)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), len(STANDARD_FEATURES))


def write_embeddings(path, ids, matrix) -> None:
    """CSV ``ecg_id,e0..e{D-1}``; values written with full float32 round-trip precision."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ecg_id"] + [f"e{i}" for i in range(matrix.shape[1])])
        for ecg_id, row in zip(ids, matrix):
            w.writerow([ecg_id] + [repr(float(v)) for v in row])


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "ecg_id":
            raise DataError(f"{path}: embedding file must start with an 'ecg_id' column")
        ids, rows = [], []
        for cells in reader:
            if len(cells) != len(header):
                raise DataError(f"{path} line {reader.line_num}: expected {len(header)} fields")
            ids.append(cells[0])
            rows.append([float(c) for c in cells[1:]])
    return ids, np.asarray(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)


def write_labels(path, ids, targets) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ecg_id", "target"])
        for ecg_id, t in zip(ids, targets):
            w.writerow([ecg_id, repr(float(t))])


def read_labels(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["ecg_id", "target"]:
            raise DataError(f"{path}: label file header must be 'ecg_id,target'")
        return {r["ecg_id"]: float(r["target"]) for r in reader}


def align_rows(wanted: list[str], ids: list[str], matrix: np.ndarray, what: str = "features") -> np.ndarray:
    """Rows of ``matrix`` reordered to ``wanted``; lists up to 10 absent ids on mismatch."""
    pos = {i: k for k, i in enumerate(ids)}
    missing = [i for i in wanted if i not in pos]
    if missing:
        more = f" (and {len(missing) - 10} more)" if len(missing) > 10 else ""
        raise DataError(f"{len(missing)} ECG id(s) have no {what}: {', '.join(missing[:10])}{more}")
    return matrix[[pos[i] for i in wanted]]


def select_records(manifest, task: str) -> list:
    """Records passing the task's quality profile, latest ECG per patient, in manifest order."""
    from .data.quality import filter_records

    kept = filter_records(manifest.records, quality_profile(task))
    latest = {r.ecg_id for r in manifest.subset(kept).most_recent_per_patient().records}
    return [r for r in kept if r.ecg_id in latest]


def training_subset(n_rows: int, size: int, seed: int) -> np.ndarray:
    """Indices of the first ``size`` rows of a seeded shuffle; smaller sizes are prefixes of larger ones."""
    if size > n_rows:
        raise DataError(f"training size {size} exceeds the {n_rows} eligible rows")
    return np.sort(np.random.default_rng([seed, 7]).permutation(n_rows)[:size])


def linear_evaluate(checkpoint, train_manifest, test_manifest, task: str, seed: int = 0) -> ProbeReport:
    """Embed both manifests with a checkpoint's encoder, then run the probe protocol."""
    from .checkpoint import load_checkpoint
    from .data.records import prepare_ecg
    from .encoder import ModelState, embed_numpy

    model = checkpoint if isinstance(checkpoint, ModelState) else load_checkpoint(checkpoint)
    parts = []
    for manifest in (train_manifest, test_manifest):
        recs = select_records(manifest, task)
        if not recs:
            raise DataError(f"no {task} records pass the quality filters")
        x = embed_numpy(model, np.stack([prepare_ecg(r) for r in recs]))
        parts.append((x, np.array([task_target(r, task) for r in recs])))
    (xa, ya), (xb, yb) = parts
    return evaluate_features(xa, ya, xb, yb, task, seed)
