"""Accuracy, bias and driver metrics for wealth predictions.

Group arrays are boolean ``urban`` flags throughout: ``True`` marks an urban
region, ``False`` a rural one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ClassError, DegenerateError

SCOPES = ("overall", "urban", "rural")


def _arrays(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"expected two 1-d arrays of equal length, got {y.shape} and {yhat.shape}")
    if len(y) < 2:
        raise DegenerateError(f"need at least 2 observations, got {len(y)}")
    return y, yhat


def r2_score(y, yhat) -> float:
    y, yhat = _arrays(y, yhat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateError("R² undefined: true values have zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def pearson(y, yhat) -> float:
    y, yhat = _arrays(y, yhat)
    a = y - y.mean()
    b = yhat - yhat.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0:
        raise DegenerateError("correlation undefined for constant input")
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def fractional_ranks(x) -> np.ndarray:
    """1-based ranks, ties sharing the average of the ranks they span."""
    return rankdata(np.asarray(x, dtype=float), method="average")


def spearman(y, yhat) -> float:
    y, yhat = _arrays(y, yhat)
    return pearson(fractional_ranks(y), fractional_ranks(yhat))


def auc(u, scores) -> float:
    """Area under the ROC curve in Mann-Whitney form; tied pairs count one half."""
    u = np.asarray(u, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(u.sum())
    n_neg = len(u) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ClassError("AUC needs both classes present")
    ranks = fractional_ranks(scores)
    u_stat = ranks[u].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricSet:
    scope: str
    n: int
    r2: float = math.nan
    pearson: float = math.nan
    spearman: float = math.nan
    flag: str | None = None

    def as_dict(self) -> dict[str, float]:
        return {"r2": self.r2, "pearson": self.pearson, "spearman": self.spearman, "n": float(self.n)}


def metric_set(y, yhat, scope: str = "overall") -> MetricSet:
    """R², Pearson and Spearman for one scope, flagged rather than raised when degenerate."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    n = len(y)
    if n < 2:
        return MetricSet(scope, n, flag="undersized")
    if np.ptp(y) == 0:
        return MetricSet(scope, n, flag="constant-truth")
    r2 = r2_score(y, yhat)
    if np.ptp(yhat) == 0:
        return MetricSet(scope, n, r2=r2, flag="constant-prediction")
    return MetricSet(scope, n, r2, pearson(y, yhat), spearman(y, yhat))


def group_metrics(y, yhat, urban) -> dict[str, MetricSet]:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    urban = np.asarray(urban, dtype=bool)
    return {
        "overall": metric_set(y, yhat, "overall"),
        "urban": metric_set(y[urban], yhat[urban], "urban"),
        "rural": metric_set(y[~urban], yhat[~urban], "rural"),
    }


@dataclass(frozen=True)
class BiasMetrics:
    mean_signed_error_urban: float = math.nan
    mean_signed_error_rural: float = math.nan
    mean_rank_error_urban: float = math.nan
    mean_rank_error_rural: float = math.nan

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def _group_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else math.nan


def signed_errors(y, yhat, urban) -> BiasMetrics:
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    urban = np.asarray(urban, dtype=bool)
    err = yhat - y
    return BiasMetrics(_group_mean(err, urban), _group_mean(err, ~urban))


def rank_errors(y, yhat, urban) -> BiasMetrics:
    """Per-group mean of (rank of prediction - rank of truth) / n.

    Ranks are taken over the whole set in ascending wealth, so a positive
    value means the group is ranked richer by the prediction than by truth.
    """
    y, yhat = _arrays(y, yhat)
    urban = np.asarray(urban, dtype=bool)
    err = (fractional_ranks(yhat) - fractional_ranks(y)) / len(y)
    return BiasMetrics(mean_rank_error_urban=_group_mean(err, urban), mean_rank_error_rural=_group_mean(err, ~urban))


def bias_metrics(y, yhat, urban) -> BiasMetrics:
    s = signed_errors(y, yhat, urban)
    r = rank_errors(y, yhat, urban)
    return BiasMetrics(
        s.mean_signed_error_urban, s.mean_signed_error_rural, r.mean_rank_error_urban, r.mean_rank_error_rural
    )


@dataclass(frozen=True)
class DriverStats:
    p1: float
    p2: float
    flag: str | None = None

    @property
    def abs_p1(self) -> float:
        return abs(self.p1)


def driver_stats(y, yhat, urban_scores) -> DriverStats:
    """p1: spread gap of predictions vs truth; p2: rank agreement of wealth and urban scores."""
    y, yhat = _arrays(y, yhat)
    p1 = float(np.std(yhat) - np.std(y))
    try:
        p2 = spearman(yhat, urban_scores)
    except DegenerateError:
        return DriverStats(p1, math.nan, flag="degenerate-p2")
    return DriverStats(p1, p2)


@dataclass(frozen=True)
class DriverCorrelations:
    allocation_stat: str
    n_runs: int
    r_p1: float
    r_p2: float
    flag: str | None = None


def driver_correlations(runs: Sequence, allocation_stat: str = "threshold20") -> DriverCorrelations:
    """Pearson correlation across runs between the allocation gap and each driver statistic.

    Each run must expose ``allocation_gap(stat)`` returning b_hat - b and a
    ``drivers`` attribute holding :class:`DriverStats`.
    """
    if allocation_stat not in ("threshold20", "curve_auc"):
        raise ValueError(f"unknown allocation statistic {allocation_stat!r}")
    if len(runs) < 3:
        raise ValueError(f"need at least 3 runs, got {len(runs)}")
    delta = np.array([run.allocation_gap(allocation_stat) for run in runs], dtype=float)
    p1 = np.array([run.drivers.p1 for run in runs], dtype=float)
    p2 = np.array([run.drivers.p2 for run in runs], dtype=float)
    if np.ptp(delta) == 0:
        return DriverCorrelations(allocation_stat, len(runs), math.nan, math.nan, flag="constant-allocation-gap")
    r = []
    for p in (p1, p2):
        try:
            r.append(pearson(delta, p))
        except DegenerateError:
            r.append(math.nan)
    return DriverCorrelations(allocation_stat, len(runs), r[0], r[1])


def urban_prediction_metrics(w, u, urban_scores) -> dict[str, float]:
    """The urbanization battery: AUC(u, û) and correlations of wealth with u and û."""
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=bool)
    s = np.asarray(urban_scores, dtype=float)
    out = {"auc": auc(u, s)}
    for name, fn in (("pearson", pearson), ("spearman", spearman)):
        out[f"{name}_w_u"] = fn(w, u.astype(float))
        try:
            out[f"{name}_w_uhat"] = fn(w, s)
        except DegenerateError:
            out[f"{name}_w_uhat"] = math.nan
    return out
