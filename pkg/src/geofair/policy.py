"""Targeting simulations, allocation accounting and group recalibration.

Scores are wealth-like: lower means poorer, and a program selects the
lowest-scoring regions. Ties are broken by ascending region id everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import round_half_up
from .rng import stream
from .errors import FeasibilityError, UnknownGroupError

DEFAULT_BUDGET = 0.2
DEFAULT_THRESHOLDS = tuple(round(0.01 * i, 2) for i in range(1, 101))
GROUPS = ("urban", "rural")


def _group_names(urban) -> np.ndarray:
    return np.where(np.asarray(urban, dtype=bool), "urban", "rural")


def noised_baseline(w, target_mse: float, seed: int) -> np.ndarray:
    """Truth plus i.i.d. Gaussian noise whose variance is ``target_mse``."""
    if target_mse < 0:
        raise ValueError(f"target_mse must be nonnegative, got {target_mse}")
    w = np.asarray(w, dtype=float)
    noise = stream(seed, "noise").standard_normal(len(w))
    return w + math.sqrt(target_mse) * noise


def lowest(scores, ids, k: int) -> np.ndarray:
    """Positions of the ``k`` lowest scores, ties broken by ascending id."""
    order = np.lexsort((np.asarray(ids), np.asarray(scores, dtype=float)))
    return order[:k]


def budget_count(budget_fraction: float, n: int) -> int:
    if not 0 < budget_fraction <= 1:
        raise ValueError(f"budget_fraction must lie in (0, 1], got {budget_fraction}")
    return round_half_up(budget_fraction * n)


def select_poorest(scores: Mapping[str, float], scope_ids, budget_fraction: float = DEFAULT_BUDGET) -> frozenset[str]:
    scope = sorted(scope_ids)
    if not scope:
        raise ValueError("cannot select from an empty scope")
    k = budget_count(budget_fraction, len(scope))
    values = [scores[i] for i in scope]
    return frozenset(scope[j] for j in lowest(values, scope, k))


def targeting_accuracy(pred_selected, truth_selected) -> float:
    """Share of the truly poorest that the prediction-based program reaches.

    With equal budgets this is both precision and recall.
    """
    pred, truth = set(pred_selected), set(truth_selected)
    if len(pred) != len(truth):
        raise ValueError(f"selections differ in size ({len(pred)} vs {len(truth)}); budgets must match")
    if not truth:
        return math.nan
    return len(pred & truth) / len(truth)


def allocation_share(selected, rural_ids) -> float:
    """Percent of selected regions that are rural."""
    selected = set(selected)
    if not selected:
        raise ValueError("allocation share of an empty selection is undefined")
    return 100.0 * len(selected & set(rural_ids)) / len(selected)


def _rural_percent(positions: np.ndarray, urban: np.ndarray) -> float:
    return 100.0 * float(np.count_nonzero(~urban[positions])) / len(positions)


@dataclass(frozen=True)
class TargetingCurve:
    thresholds: np.ndarray
    share_pred: np.ndarray
    share_truth: np.ndarray

    @property
    def auc_pred(self) -> float:
        return curve_area(self.thresholds, self.share_pred)

    @property
    def auc_truth(self) -> float:
        return curve_area(self.thresholds, self.share_truth)

    @property
    def delta_auc(self) -> float:
        return self.auc_pred - self.auc_truth


def curve_area(thresholds, shares) -> float:
    """Trapezoid area under rural share (as a fraction) over the threshold grid."""
    return float(np.trapezoid(np.asarray(shares) / 100.0, np.asarray(thresholds, dtype=float)))


def targeting_curve(pred, truth, urban, ids, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> TargetingCurve:
    """Rural share of the poorest-t selection for each threshold t, by prediction and by truth.

    At least one region is selected at every threshold.
    """
    t = np.asarray(thresholds, dtype=float)
    if t.size == 0:
        raise ValueError("threshold grid is empty")
    if np.any(t <= 0) or np.any(t > 1) or np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be ascending within (0, 1]")
    urban = np.asarray(urban, dtype=bool)
    n = len(urban)
    order_pred = lowest(pred, ids, n)
    order_truth = lowest(truth, ids, n)
    rural_pred = np.cumsum(~urban[order_pred])
    rural_truth = np.cumsum(~urban[order_truth])
    ks = np.array([max(1, round_half_up(v * n)) for v in t])
    return TargetingCurve(t, 100.0 * rural_pred[ks - 1] / ks, 100.0 * rural_truth[ks - 1] / ks)


# --- calibration -------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationParams:
    kind: str
    learned_on: tuple[str, ...] = ()
    group_source: str = "truth"
    offsets: dict[str, float] = field(default_factory=dict)
    quotas: dict[str, float] = field(default_factory=dict)
    budget_fraction: float = DEFAULT_BUDGET

    def with_group_source(self, group_source: str) -> "CalibrationParams":
        return CalibrationParams(
            self.kind, self.learned_on, group_source, dict(self.offsets), dict(self.quotas), self.budget_fraction
        )


def learn_mean_calibration(train_pred, train_w, train_urban, train_ids: Sequence[str] = ()) -> CalibrationParams:
    """Per-group additive offsets that match predicted and true group means on training data."""
    pred = np.asarray(train_pred, dtype=float)
    w = np.asarray(train_w, dtype=float)
    urban = np.asarray(train_urban, dtype=bool)
    offsets = {}
    for name, mask in (("urban", urban), ("rural", ~urban)):
        if not mask.any():
            raise UnknownGroupError(f"no {name} regions in training data")
        offsets[name] = float(w[mask].mean() - pred[mask].mean())
    return CalibrationParams("mean", tuple(train_ids), offsets=offsets)


def apply_mean_calibration(params: CalibrationParams, pred, urban) -> np.ndarray:
    if params.kind != "mean":
        raise ValueError(f"expected mean calibration parameters, got {params.kind!r}")
    pred = np.asarray(pred, dtype=float)
    names = _group_names(urban)
    missing = set(names) - set(params.offsets)
    if missing:
        raise UnknownGroupError(f"no calibration offset for group(s) {sorted(missing)}")
    return pred + np.array([params.offsets[g] for g in names], dtype=float)


def largest_remainder(total: int, shares: Mapping[str, float]) -> dict[str, int]:
    """Integer counts summing to ``total`` in proportion to ``shares``."""
    raw = {g: total * s for g, s in shares.items()}
    counts = {g: int(math.floor(v)) for g, v in raw.items()}
    left = total - sum(counts.values())
    for g in sorted(raw, key=lambda g: (-(raw[g] - counts[g]), g))[:left]:
        counts[g] += 1
    return counts


def learn_threshold_calibration(
    train_w, train_urban, budget_fraction: float = DEFAULT_BUDGET, train_ids: Sequence[str] | None = None
) -> CalibrationParams:
    """Group shares of the truth-based selection on training data."""
    w = np.asarray(train_w, dtype=float)
    urban = np.asarray(train_urban, dtype=bool)
    ids = np.asarray(train_ids if train_ids is not None else [f"{i:09d}" for i in range(len(w))])
    k = budget_count(budget_fraction, len(w))
    chosen = lowest(w, ids, k)
    n_urban = int(np.count_nonzero(urban[chosen]))
    quotas = {"urban": n_urban / k, "rural": (k - n_urban) / k} if k else {"urban": 0.5, "rural": 0.5}
    return CalibrationParams("threshold", tuple(ids.tolist()), quotas=quotas, budget_fraction=budget_fraction)


def apply_threshold_calibration(params: CalibrationParams, pred, urban, ids) -> np.ndarray:
    """Per-group poorest-by-prediction selection with group quotas; returns positions."""
    if params.kind != "threshold":
        raise ValueError(f"expected threshold calibration parameters, got {params.kind!r}")
    pred = np.asarray(pred, dtype=float)
    urban = np.asarray(urban, dtype=bool)
    ids = np.asarray(ids)
    n = len(pred)
    k = budget_count(params.budget_fraction, n)
    if k == n:
        return np.arange(n)
    counts = largest_remainder(k, params.quotas)
    chosen = []
    for name, mask in (("urban", urban), ("rural", ~urban)):
        members = np.flatnonzero(mask)
        if counts[name] > len(members):
            raise FeasibilityError(
                f"{name} quota {counts[name]} exceeds {len(members)} regions (shortfall {counts[name] - len(members)})"
            )
        chosen.append(members[lowest(pred[members], ids[members], counts[name])])
    return np.sort(np.concatenate(chosen))


def predicted_group_labels(urban_scores, train_rural_share: float, ids) -> np.ndarray:
    """Urban flags from scores, matching the training rural share.

    The lowest-scoring ``round(train_rural_share * n)`` regions are labelled rural.
    """
    scores = np.asarray(urban_scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("urban scores must be finite")
    n = len(scores)
    n_rural = round_half_up(train_rural_share * n)
    urban = np.ones(n, dtype=bool)
    urban[lowest(scores, ids, n_rural)] = False
    return urban


@dataclass(frozen=True)
class PolicyOutcome:
    scope: str
    budget_fraction: float
    score_source: str
    group_source: str
    selected_ids: tuple[str, ...]
    precision: float
    rural_share: float
    truth_rural_share: float
    curve_auc: float = math.nan
    truth_curve_auc: float = math.nan
    flag: str | None = None

    @property
    def delta_b(self) -> float:
        return self.rural_share - self.truth_rural_share

    @property
    def delta_auc(self) -> float:
        return self.curve_auc - self.truth_curve_auc
