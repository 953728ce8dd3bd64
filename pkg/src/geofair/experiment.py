"""Seeded train/test experiments and their repetition.

One run: split, cross-validate and fit the wealth and urban ridge models,
predict the test set, then audit predictions, a noised-truth baseline and
the recalibrated variants. Runs are independent given their seed, so
``repeat_experiments`` may fan them out over processes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import audit, policy
from .data import RegionDataset, Split, split_dataset
from .errors import DimensionError, FeasibilityError, GeofairError
from .features import FeatureMatrix
from .model import DEFAULT_LAMBDA_GRID, fit_ridge_cv, fit_urban_scorer, predict

log = logging.getLogger(__name__)

# offsets added to the run seed for each derived stream
_CV_WEALTH, _CV_URBAN, _NOISE = 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    train_fraction: float = 0.75
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    k: int = 3
    budget_fraction: float = policy.DEFAULT_BUDGET
    thresholds: tuple[float, ...] = policy.DEFAULT_THRESHOLDS
    seed: int = 0


class RunError(GeofairError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass
class RunResult:
    seed: int
    split: Split
    lambda_wealth: float
    lambda_urban: float
    test_ids: tuple[str, ...]
    w: np.ndarray
    u: np.ndarray
    w_hat: np.ndarray
    u_hat: np.ndarray
    w_noised: np.ndarray
    w_calibrated: np.ndarray
    noise_mse: float
    metrics: dict[str, audit.MetricSet]
    calibrated_metrics: dict[str, audit.MetricSet]
    urban_metrics: dict[str, float]
    bias: dict[str, audit.BiasMetrics]
    policies: list[policy.PolicyOutcome]
    curves: dict[str, policy.TargetingCurve]
    drivers: audit.DriverStats
    calibration: dict[str, policy.CalibrationParams] = field(default_factory=dict)

    def outcome(self, score_source: str, group_source: str = "truth", scope: str = "overall") -> policy.PolicyOutcome:
        for o in self.policies:
            if (o.score_source, o.group_source, o.scope) == (score_source, group_source, scope):
                return o
        raise KeyError((score_source, group_source, scope))

    def allocation_gap(self, stat: str = "threshold20") -> float:
        """b_hat - b for the uncalibrated prediction-based national program."""
        o = self.outcome("prediction")
        if stat == "threshold20":
            return o.delta_b
        if stat == "curve_auc":
            return o.delta_auc
        raise ValueError(f"unknown allocation statistic {stat!r}")


def _check_inputs(dataset: RegionDataset, features: FeatureMatrix):
    if not dataset.standardized:
        raise ValueError(f"dataset {dataset.name!r} must be standardized before running experiments")
    if tuple(features.region_ids) != dataset.ids:
        raise DimensionError("feature rows are not aligned with dataset regions")
    dataset.check_auditable()


def _outcome(scope, cfg, source, group_source, ids, positions, truth_positions, urban, curve=None, flag=None):
    if positions is None:
        nan = math.nan
        return policy.PolicyOutcome(scope, cfg.budget_fraction, source, group_source, (), nan, nan, nan, flag=flag)
    precision = policy.targeting_accuracy(ids[positions], ids[truth_positions]) if len(positions) else math.nan
    share = policy._rural_percent(positions, urban) if len(positions) else math.nan
    truth_share = policy._rural_percent(truth_positions, urban) if len(truth_positions) else math.nan
    return policy.PolicyOutcome(
        scope,
        cfg.budget_fraction,
        source,
        group_source,
        tuple(sorted(ids[positions].tolist())),
        precision,
        share,
        truth_share,
        curve.auc_pred if curve is not None else math.nan,
        curve.auc_truth if curve is not None else math.nan,
        flag,
    )


def run_experiment(dataset: RegionDataset, features: FeatureMatrix, cfg: ExperimentConfig = ExperimentConfig()) -> RunResult:
    try:
        return _run(dataset, features, cfg)
    except Exception as exc:  # attach the run seed, keep the original as cause
        raise RunError(cfg.seed, exc) from exc


def _run(dataset: RegionDataset, features: FeatureMatrix, cfg: ExperimentConfig) -> RunResult:
    _check_inputs(dataset, features)
    seed = cfg.seed
    split = split_dataset(dataset, cfg.train_fraction, seed)
    tr = dataset.positions(split.train_ids)
    te = dataset.positions(split.test_ids)
    X, w_all, u_all = features.X, dataset.wealth, dataset.urban
    ids = np.asarray(split.test_ids)
    train_ids = np.asarray(split.train_ids)
    w, u = w_all[te], u_all[te]

    wealth_fit, _ = fit_ridge_cv(X[tr], w_all[tr], cfg.lambda_grid, cfg.k, seed + _CV_WEALTH)
    urban_fit = fit_urban_scorer(X[tr], u_all[tr], cfg.lambda_grid, cfg.k, seed + _CV_URBAN)
    w_hat = predict(wealth_fit, X[te])
    w_hat_train = predict(wealth_fit, X[tr])
    u_hat = predict(urban_fit, X[te])

    noise_mse = float(np.mean((w_hat - w) ** 2))
    w_noised = policy.noised_baseline(w, noise_mse, seed + _NOISE)

    train_rural_share = float(np.mean(~u_all[tr]))
    u_pred = policy.predicted_group_labels(u_hat, train_rural_share, ids)
    mean_params = policy.learn_mean_calibration(w_hat_train, w_all[tr], u_all[tr], split.train_ids)
    w_cal = policy.apply_mean_calibration(mean_params, w_hat, u)
    w_cal_pred = policy.apply_mean_calibration(mean_params.with_group_source("predicted"), w_hat, u_pred)
    thr_params = policy.learn_threshold_calibration(w_all[tr], u_all[tr], cfg.budget_fraction, train_ids)

    metrics = audit.group_metrics(w, w_hat, u)
    calibrated_metrics = audit.group_metrics(w, w_cal, u)
    urban_metrics = audit.urban_prediction_metrics(w, u, u_hat)
    bias = {
        "prediction": audit.bias_metrics(w, w_hat, u),
        "noised": audit.bias_metrics(w, w_noised, u),
        "calibrated-mean": audit.bias_metrics(w, w_cal, u),
        "calibrated-mean-predicted": audit.bias_metrics(w, w_cal_pred, u),
    }
    drivers = audit.driver_stats(w, w_hat, u_hat)

    thresholds = cfg.thresholds
    curves = {
        "prediction": policy.targeting_curve(w_hat, w, u, ids, thresholds),
        "noised": policy.targeting_curve(w_noised, w, u, ids, thresholds),
        "calibrated-mean": policy.targeting_curve(w_cal, w, u, ids, thresholds),
        "calibrated-mean-predicted": policy.targeting_curve(w_cal_pred, w, u, ids, thresholds),
    }

    policies = []
    scopes = {"overall": np.arange(len(te)), "urban": np.flatnonzero(u), "rural": np.flatnonzero(~u)}
    for scope, members in scopes.items():
        k = policy.budget_count(cfg.budget_fraction, len(members))
        truth_sel = members[policy.lowest(w[members], ids[members], k)]
        for source, scores in (("prediction", w_hat), ("noised", w_noised)):
            sel = members[policy.lowest(scores[members], ids[members], k)]
            curve = curves[source] if scope == "overall" else None
            policies.append(_outcome(scope, cfg, source, "truth", ids, sel, truth_sel, u, curve))

    k = policy.budget_count(cfg.budget_fraction, len(te))
    truth_sel = policy.lowest(w, ids, k)
    policies.append(_outcome("overall", cfg, "truth", "truth", ids, truth_sel, truth_sel, u))
    for group_source, scores in (("truth", w_cal), ("predicted", w_cal_pred)):
        sel = policy.lowest(scores, ids, k)
        curve = curves["calibrated-mean" if group_source == "truth" else "calibrated-mean-predicted"]
        policies.append(_outcome("overall", cfg, "calibrated-mean", group_source, ids, sel, truth_sel, u, curve))
    for group_source, groups in (("truth", u), ("predicted", u_pred)):
        try:
            sel = policy.apply_threshold_calibration(thr_params, w_hat, groups, ids)
            flag = None
        except FeasibilityError as exc:
            sel, flag = None, f"infeasible: {exc}"
        policies.append(_outcome("overall", cfg, "calibrated-threshold", group_source, ids, sel, truth_sel, u, flag=flag))

    return RunResult(
        seed=seed,
        split=split,
        lambda_wealth=wealth_fit.lam,
        lambda_urban=urban_fit.lam,
        test_ids=split.test_ids,
        w=w,
        u=u,
        w_hat=w_hat,
        u_hat=u_hat,
        w_noised=w_noised,
        w_calibrated=w_cal,
        noise_mse=noise_mse,
        metrics=metrics,
        calibrated_metrics=calibrated_metrics,
        urban_metrics=urban_metrics,
        bias=bias,
        policies=policies,
        curves=curves,
        drivers=drivers,
        calibration={"mean": mean_params, "threshold": thr_params},
    )


def run_seeds(base_seed: int, n_runs: int) -> list[int]:
    return [base_seed + i for i in range(n_runs)]


def _run_one(args):
    dataset, features, cfg = args
    return run_experiment(dataset, features, cfg)


def iter_runs(dataset: RegionDataset, features: FeatureMatrix, cfg: ExperimentConfig, n_runs: int, jobs: int = 1):
    """Yield ``(seed, RunResult | RunError)`` in seed order."""
    configs = [ExperimentConfig(**{**cfg.__dict__, "seed": s}) for s in run_seeds(cfg.seed, n_runs)]
    if jobs <= 1:
        for c in configs:
            try:
                yield c.seed, run_experiment(dataset, features, c)
            except RunError as exc:
                yield c.seed, exc
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_one, (dataset, features, c)) for c in configs]
        for c, fut in zip(configs, futures):
            try:
                yield c.seed, fut.result()
            except RunError as exc:
                yield c.seed, exc


# --- summaries ---------------------------------------------------------------

def mean_and_2se(values: Sequence[float]) -> tuple[float, float, int]:
    """Mean and two standard errors (sample stddev / sqrt(n)) over finite values."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if len(v) == 0:
        return math.nan, math.nan, 0
    if len(v) == 1:
        return float(v[0]), math.nan, 1
    return float(v.mean()), float(2 * v.std(ddof=1) / math.sqrt(len(v))), len(v)


def run_records(run: RunResult) -> dict[str, list[dict]]:
    """Flatten one run into long-format table rows, keyed by table name."""
    s = run.seed
    metrics = []
    for scope in audit.SCOPES:
        for name, value in run.metrics[scope].as_dict().items():
            metrics.append({"run": s, "scope": scope, "metric": name, "value": value})
        for name in ("r2", "pearson", "spearman"):
            value = getattr(run.calibrated_metrics[scope], name)
            metrics.append({"run": s, "scope": scope, "metric": f"{name}_calibrated", "value": value})
    for name, value in run.urban_metrics.items():
        metrics.append({"run": s, "scope": "overall", "metric": name, "value": value})
    metrics.append({"run": s, "scope": "overall", "metric": "lambda_wealth", "value": run.lambda_wealth})
    metrics.append({"run": s, "scope": "overall", "metric": "lambda_urban", "value": run.lambda_urban})

    bias = [
        {"run": s, "source": source, "metric": name, "value": value}
        for source, b in run.bias.items()
        for name, value in b.as_dict().items()
    ]
    policies = [
        {
            "run": s,
            "scope": o.scope,
            "budget_fraction": o.budget_fraction,
            "score_source": o.score_source,
            "group_source": o.group_source,
            "precision": o.precision,
            "b_hat": o.rural_share,
            "b": o.truth_rural_share,
            "delta_b": o.delta_b,
            "curve_auc": o.curve_auc,
            "truth_curve_auc": o.truth_curve_auc,
            "delta_auc": o.delta_auc,
            "flag": o.flag or "",
        }
        for o in run.policies
    ]
    curves = []
    for source, c in run.curves.items():
        for t, share in zip(c.thresholds, c.share_pred):
            curves.append({"run": s, "score_source": source, "threshold": t, "rural_share": share})
    c = run.curves["prediction"]
    for t, share in zip(c.thresholds, c.share_truth):
        curves.append({"run": s, "score_source": "truth", "threshold": t, "rural_share": share})
    drivers = [
        {
            "run": s,
            "p1": run.drivers.p1,
            "abs_p1": run.drivers.abs_p1,
            "p2": run.drivers.p2,
            "delta_b_threshold20": run.allocation_gap("threshold20"),
            "delta_auc": run.allocation_gap("curve_auc"),
            "noise_mse": run.noise_mse,
        }
    ]
    predictions = [
        {"run": s, "region_id": rid, "w": a, "w_hat": b, "u": int(c_), "u_hat": d, "w_noised": e, "w_calibrated": f}
        for rid, a, b, c_, d, e, f in zip(run.test_ids, run.w, run.w_hat, run.u, run.u_hat, run.w_noised, run.w_calibrated)
    ]
    return {
        "metrics": metrics,
        "bias": bias,
        "policy": policies,
        "curves": curves,
        "drivers": drivers,
        "predictions": predictions,
    }


def summarize(rows: list[dict], keys: Sequence[str], value_columns: Sequence[str]) -> list[dict]:
    """Group rows by ``keys`` and report mean and 2 SE of each value column."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        for col in value_columns:
            mean, se2, n = mean_and_2se([float(r[col]) for r in members])
            out.append({**dict(zip(keys, key)), "statistic": col, "mean": mean, "se2": se2, "n_runs": n})
    return out


def summary_tables(runs: Sequence[RunResult]) -> dict[str, list[dict]]:
    records = [run_records(r) for r in runs]
    merged = {name: [row for rec in records for row in rec[name]] for name in records[0]} if records else {}
    if not merged:
        return {}
    return {
        "metrics": summarize(merged["metrics"], ("scope", "metric"), ("value",)),
        "bias": summarize(merged["bias"], ("source", "metric"), ("value",)),
        "policy": summarize(
            merged["policy"],
            ("scope", "budget_fraction", "score_source", "group_source"),
            ("precision", "b_hat", "b", "delta_b", "curve_auc", "truth_curve_auc", "delta_auc"),
        ),
        "drivers": summarize(
            merged["drivers"],
            (),
            ("p1", "abs_p1", "p2", "delta_b_threshold20", "delta_auc", "noise_mse"),
        ),
    }


def repeat_experiments(
    dataset: RegionDataset,
    features: FeatureMatrix,
    cfg: ExperimentConfig = ExperimentConfig(),
    n_runs: int = 100,
    jobs: int = 1,
) -> tuple[list[RunResult], dict[str, list[dict]]]:
    """Run seeds ``cfg.seed .. cfg.seed + n_runs - 1``; return runs and summaries.

    Failed runs raise the first :class:`RunError` after all runs finish.
    """
    if n_runs < 2:
        raise ValueError(f"n_runs must be >= 2, got {n_runs}")
    runs, errors = [], []
    for _, result in iter_runs(dataset, features, cfg, n_runs, jobs):
        (errors if isinstance(result, RunError) else runs).append(result)
    if errors:
        raise errors[0]
    return runs, summary_tables(runs)
