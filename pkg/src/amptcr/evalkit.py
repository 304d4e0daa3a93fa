"""Post hoc calibration, fold protocols, MIC binarization, and metrics.

Calibration fits yhat = p*y + q on training predictions by ordinary
least squares and applies the inverse map y' = (yhat - q)/p to both
training and validation predictions, so validation labels are never
consulted. The slope convention throughout is prediction regressed on
label; the reverse convention gives different numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

HIT = 1
NON_HIT = 0
EXCLUDED = -1

_MIC_HIT_MAX = 1.0  # uM; median MIC <= 1 is a hit
_MIC_NON_HIT_MIN = 10.0  # uM; median MIC > 10 is a non-hit
_SLOPE_MIN = 1e-8

FOLD_MODES = ("kfold_partition", "random_split")


class CalibrationError(ValueError):
    """Calibration line is undefined or uninvertible."""


class FoldError(ValueError):
    """Fold protocol misconfiguration."""


@dataclass(frozen=True)
class CalibrationParams:
    p: float
    q: float

    def __post_init__(self):
        if abs(self.p) <= _SLOPE_MIN:
            raise CalibrationError(f"uncalibratable: slope {self.p} too close to zero")


def ols_fit(yhat: np.ndarray, y: np.ndarray) -> CalibrationParams:
    """Least squares fit of yhat = p*y + q.

    p = cov(y, yhat)/var(y), q = mean(yhat) - p*mean(y).
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape or yhat.ndim != 1:
        raise ValueError("yhat and y must be equal-length 1D arrays")
    if len(y) < 2:
        raise CalibrationError("need at least two points to fit a line")
    ybar = y.mean()
    var = float(np.mean((y - ybar) ** 2))
    if var == 0.0:
        raise CalibrationError("labels have zero variance")
    cov = float(np.mean((y - ybar) * (yhat - yhat.mean())))
    p = cov / var
    q = float(yhat.mean() - p * ybar)
    return CalibrationParams(p=p, q=q)


def calibrate(preds: np.ndarray, params: CalibrationParams) -> np.ndarray:
    """Inverse map (yhat - q)/p; strictly monotone for p > 0."""
    return (np.asarray(preds, dtype=np.float64) - params.q) / params.p


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == HIT
    neg = labels == NON_HIT
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(fpr, tpr) pairs from (0,0) to (1,1), one step per distinct score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == HIT
    neg = labels == NON_HIT
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_points needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    tps = np.cumsum(pos[order])
    fps = np.cumsum(neg[order])
    distinct = np.append(np.flatnonzero(np.diff(scores[order])), len(scores) - 1)
    pts = [(0.0, 0.0)]
    pts += [(fps[i] / n_neg, tps[i] / n_pos) for i in distinct]
    return np.array(pts, dtype=np.float64)


def metrics(preds: np.ndarray, labels: np.ndarray, task: str) -> dict[str, float]:
    """Regression: r2, slope, rmse. Binary: roc_auc, precision, recall at 0.5."""
    preds = np.asarray(preds, dtype=np.float64)
    labels_arr = np.asarray(labels)
    if len(preds) != len(labels_arr) or len(preds) < 2:
        raise ValueError("need at least two aligned predictions and labels")
    if task == "regression":
        y = labels_arr.astype(np.float64)
        ss_res = float(np.sum((y - preds) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot == 0.0:
            raise ValueError("labels have zero variance")
        return {
            "r2": 1.0 - ss_res / ss_tot,
            "slope": ols_fit(preds, y).p,
            "rmse": float(np.sqrt(np.mean((preds - y) ** 2))),
        }
    if task == "binary":
        pred_hit = preds >= 0.5
        actual_hit = labels_arr == HIT
        tp = int(np.sum(pred_hit & actual_hit))
        fp = int(np.sum(pred_hit & ~actual_hit))
        fn = int(np.sum(~pred_hit & actual_hit))
        return {
            "roc_auc": roc_auc(preds, labels_arr),
            "precision": tp / (tp + fp) if tp + fp else 0.0,
            "recall": tp / (tp + fn) if tp + fn else 0.0,
        }
    raise ValueError(f"unknown task {task!r}")


def binarize_mic(median_um: Sequence[float]) -> np.ndarray:
    """MIC rule: <= 1 uM hit, > 10 uM non-hit, (1, 10] excluded."""
    values = np.asarray(median_um, dtype=np.float64)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValueError("MIC values must be positive and finite")
    out = np.full(values.shape, EXCLUDED, dtype=np.int8)
    out[values <= _MIC_HIT_MAX] = HIT
    out[values > _MIC_NON_HIT_MIN] = NON_HIT
    return out


def log10_transform(values: Sequence[float]) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValueError("log10 requires positive finite values")
    return np.log10(values)


@dataclass(frozen=True)
class FoldPlan:
    mode: str
    folds: int
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.mode not in FOLD_MODES:
            raise FoldError(f"mode must be one of {FOLD_MODES}, got {self.mode!r}")
        if self.folds < 2:
            raise FoldError("folds must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise FoldError("train_fraction must be in (0, 1)")


def kfold_partition(n: int, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled partition; every sample lands in validation exactly once."""
    if n < folds:
        raise FoldError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, folds)
    out = []
    for f in range(folds):
        val = np.sort(parts[f])
        train = np.sort(np.concatenate([parts[g] for g in range(folds) if g != f]))
        out.append((train, val))
    return out


def random_splits(n: int, folds: int, train_fraction: float,
                  seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Independent shuffles per fold; validation size is ceil((1 - fraction) n)."""
    if n < folds:
        raise FoldError(f"cannot make {folds} folds from {n} samples")
    n_val = int(np.ceil((1.0 - train_fraction) * n))
    if n_val == 0 or n_val >= n:
        raise FoldError("train_fraction leaves an empty split")
    out = []
    for f in range(folds):
        perm = np.random.default_rng(seed + f).permutation(n)
        out.append((np.sort(perm[n_val:]), np.sort(perm[:n_val])))
    return out


def plan_splits(plan: FoldPlan, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if plan.mode == "kfold_partition":
        return kfold_partition(n, plan.folds, plan.seed)
    return random_splits(n, plan.folds, plan.train_fraction, plan.seed)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    params: CalibrationParams | None
    val_preds_raw: np.ndarray
    val_preds: np.ndarray  # calibrated when calibration is on
    fold_metrics: dict[str, float]
    error: str | None = None


@dataclass(frozen=True)
class FoldRunSummary:
    task: str
    calibrated: bool
    folds: tuple[FoldResult, ...]
    pooled_metrics: dict[str, float]
    metric_means: dict[str, float]
    metric_ses: dict[str, float]
    skipped: int
    pooled_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    pooled_preds: np.ndarray = field(default_factory=lambda: np.array([]))


def fold_runner(labels, plan: FoldPlan, train_fn: Callable, task: str = "regression",
                use_calibration: bool = True) -> FoldRunSummary:
    """Run the fold protocol around a user training function.

    train_fn(train_idx, train_labels, fold_seed) must return a callable
    predict(indices) -> raw predictions. Labels are read one index at a
    time: training labels during the fold phase, validation labels only
    afterwards in the metrics phase, so a wrapper around `labels` can
    audit for leakage. Per-fold seeds are plan.seed + fold index.
    """
    n = len(labels)
    splits = plan_splits(plan, n)
    results: list[FoldResult] = []
    skipped = 0
    # fold phase: train and predict; only training labels are read
    staged = []
    for f, (train_idx, val_idx) in enumerate(splits):
        train_labels = np.array([labels[int(i)] for i in train_idx])
        if task == "binary" and len(np.unique(train_labels)) < 2:
            staged.append((f, train_idx, val_idx, None, None, None,
                           "single-class training labels"))
            skipped += 1
            continue
        predict = train_fn(train_idx, train_labels, plan.seed + f)
        train_preds = np.asarray(predict(train_idx), dtype=np.float64)
        val_raw = np.asarray(predict(val_idx), dtype=np.float64)
        params = None
        val_preds = val_raw
        if use_calibration:
            params = ols_fit(train_preds, train_labels.astype(np.float64))
            val_preds = calibrate(val_raw, params)
        staged.append((f, train_idx, val_idx, params, val_raw, val_preds, None))

    # metrics phase: validation labels are read here and nowhere earlier
    pooled_preds, pooled_labels, pooled_idx = [], [], []
    for f, train_idx, val_idx, params, val_raw, val_preds, err in staged:
        if err is not None:
            results.append(FoldResult(
                fold=f, train_idx=train_idx, val_idx=val_idx, params=None,
                val_preds_raw=np.array([]), val_preds=np.array([]),
                fold_metrics={}, error=err))
            continue
        val_labels = np.array([labels[int(i)] for i in val_idx])
        fm = metrics(val_preds, val_labels, task)
        results.append(FoldResult(
            fold=f, train_idx=train_idx, val_idx=val_idx, params=params,
            val_preds_raw=val_raw, val_preds=val_preds, fold_metrics=fm))
        pooled_preds.append(val_preds)
        pooled_labels.append(val_labels)
        pooled_idx.append(val_idx)

    if not pooled_preds:
        raise FoldError("every fold failed; nothing to aggregate")
    pooled_preds_arr = np.concatenate(pooled_preds)
    pooled_labels_arr = np.concatenate(pooled_labels)
    pooled_idx_arr = np.concatenate(pooled_idx).astype(np.int64)
    pooled = metrics(pooled_preds_arr, pooled_labels_arr, task)

    names = sorted(pooled)
    ok = [r for r in results if r.error is None]
    means = {m: float(np.mean([r.fold_metrics[m] for r in ok])) for m in names}
    ses = {
        m: (float(np.std([r.fold_metrics[m] for r in ok], ddof=1) / np.sqrt(len(ok)))
            if len(ok) > 1 else 0.0)
        for m in names
    }
    return FoldRunSummary(task=task, calibrated=use_calibration,
                          folds=tuple(results), pooled_metrics=pooled,
                          metric_means=means, metric_ses=ses, skipped=skipped,
                          pooled_indices=pooled_idx_arr,
                          pooled_preds=pooled_preds_arr)


def summary_json_dict(summary: FoldRunSummary) -> dict:
    return {
        "task": summary.task,
        "calibrated": summary.calibrated,
        "skipped_folds": summary.skipped,
        "pooled": summary.pooled_metrics,
        "per_fold_mean": summary.metric_means,
        "per_fold_se": summary.metric_ses,
        "folds": [
            {
                "fold": r.fold,
                "n_train": int(len(r.train_idx)),
                "n_val": int(len(r.val_idx)),
                "p": None if r.params is None else r.params.p,
                "q": None if r.params is None else r.params.q,
                "error": r.error,
                **{k: v for k, v in r.fold_metrics.items()},
            }
            for r in summary.folds
        ],
    }


def per_fold_csv(summary: FoldRunSummary) -> str:
    """CSV with one row per fold; floats via repr for exact round-trips."""
    metric_names = sorted(summary.pooled_metrics)
    header = ["fold", "n_train", "n_val", "p", "q", "error"] + metric_names
    lines = [",".join(header)]
    for r in summary.folds:
        row = [str(r.fold), str(len(r.train_idx)), str(len(r.val_idx)),
               "" if r.params is None else repr(r.params.p),
               "" if r.params is None else repr(r.params.q),
               "" if r.error is None else r.error]
        row += ["" if m not in r.fold_metrics else repr(r.fold_metrics[m])
                for m in metric_names]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
