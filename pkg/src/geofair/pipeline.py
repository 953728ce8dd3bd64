"""Dataset preparation and the audit writer used by the command line."""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import audit, geoprep
from .config import PipelineConfig, synth_config
from .data import RegionDataset, load_dataset, standardize_labels, write_dataset
from .errors import DimensionError, MissingInputError
from .experiment import ExperimentConfig, RunError, iter_runs, mean_and_2se, run_records, summary_tables
from .features import (
    FeatureMatrix,
    aggregate_region_features,
    featurize_tiles,
    make_filter_bank,
    read_features,
    write_features,
)
from .synth import describe_config_suite, generate_country, read_raster, write_raster
from .tables import write_json, write_table

log = logging.getLogger(__name__)

RUN_TABLES = ("metrics", "bias", "policy", "curves", "drivers", "predictions")
SUMMARY_TABLES = ("metrics", "bias", "policy", "drivers")


@dataclass
class Inputs:
    dataset: RegionDataset
    features: FeatureMatrix
    tile_features: dict | None = None


def dataset_key(name: str) -> str:
    return name if name in describe_config_suite() else Path(name).stem


def experiment_config(cfg: PipelineConfig) -> ExperimentConfig:
    return ExperimentConfig(
        train_fraction=cfg.train_fraction,
        lambda_grid=cfg.lambda_grid,
        k=cfg.cv_folds,
        budget_fraction=cfg.budget_fraction,
        thresholds=cfg.thresholds,
        seed=cfg.base_seed,
    )


def _featurize(cfg: PipelineConfig, dataset: RegionDataset, tiles: dict) -> tuple[FeatureMatrix, dict]:
    bank = make_filter_bank(cfg.bank_seed, cfg.n_filters, cfg.patch_size)
    tile_features = featurize_tiles(tiles, bank)
    fm = aggregate_region_features(tile_features, dataset, cfg.max_tiles, cfg.aggregation_seed, cfg.bank_seed)
    return fm, tile_features


def load_source(cfg: PipelineConfig, name: str):
    """The standardized dataset and, when available, its tile raster."""
    if name in describe_config_suite():
        return generate_country(synth_config(cfg, name))
    path = Path(name)
    dataset = load_dataset(path)
    if not dataset.standardized:
        dataset = standardize_labels(dataset, cfg.apply_log)
    raster_path = path.with_suffix(".gfrt")
    return dataset, (read_raster(raster_path) if raster_path.exists() else None)


def prepare(cfg: PipelineConfig, name: str) -> Inputs:
    dataset, raster = load_source(cfg, name)
    if raster is not None:
        fm, tile_features = _featurize(cfg, dataset, raster.tiles)
        return Inputs(dataset, fm, tile_features)
    features_path = Path(name).with_name(Path(name).stem + "_features.csv")
    if not features_path.exists():
        raise MissingInputError(f"{name}: no raster ({Path(name).with_suffix('.gfrt')}) or features ({features_path})")
    fm = read_features(features_path)
    if set(fm.region_ids) != set(dataset.ids):
        raise DimensionError(f"{features_path}: feature rows do not match dataset regions")
    return Inputs(dataset, FeatureMatrix(dataset.ids, fm.rows(dataset.ids), fm.bank_seed))


def write_synth(cfg: PipelineConfig, name: str, out: Path) -> list[Path]:
    dataset, raster = generate_country(synth_config(cfg, name))
    return write_dataset(dataset, out / f"{name}.csv") + write_raster(raster, out / f"{name}.gfrt")


def write_featurized(cfg: PipelineConfig, name: str, out: Path) -> list[Path]:
    inputs = prepare(cfg, name)
    bank = make_filter_bank(cfg.bank_seed, cfg.n_filters, cfg.patch_size)
    return write_features(inputs.features, out / f"{dataset_key(name)}_features.csv", bank)


# --- audit -------------------------------------------------------------------

def _write_run(run_dir: Path, records: dict, exp_cfg: ExperimentConfig):
    tmp = run_dir.with_name("." + run_dir.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    for name in RUN_TABLES:
        write_table(tmp / f"{name}.csv", records[name])
    write_json(tmp / "config.json", _jsonable(asdict(exp_cfg)))
    if run_dir.exists():
        shutil.rmtree(run_dir)
    tmp.rename(run_dir)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def table3_rows(runs) -> list[dict]:
    """Allocation gaps, their t-test and the driver correlations, per allocation statistic."""
    rows = []
    for stat in ("threshold20", "curve_auc"):
        outcomes = [r.outcome("prediction") for r in runs]
        if stat == "threshold20":
            b_hat = [o.rural_share for o in outcomes]
            b = [o.truth_rural_share for o in outcomes]
        else:
            b_hat = [o.curve_auc for o in outcomes]
            b = [o.truth_curve_auc for o in outcomes]
        delta = np.array(b_hat) - np.array(b)
        d_mean, d_se2, n = mean_and_2se(delta)
        t_stat = p_value = math.nan
        if n >= 2 and np.ptp(delta) > 0:
            res = stats.ttest_1samp(delta, 0.0)
            t_stat, p_value = float(res.statistic), float(res.pvalue)
        row = {
            "allocation_stat": stat,
            "n_runs": n,
            "b_hat_mean": mean_and_2se(b_hat)[0],
            "b_mean": mean_and_2se(b)[0],
            "delta_mean": d_mean,
            "delta_2se": d_se2,
            "t_stat": t_stat,
            "p_value": p_value,
            "r_p1": math.nan,
            "r_p2": math.nan,
            "flag": "",
        }
        if len(runs) >= 3:
            corr = audit.driver_correlations(runs, stat)
            row.update(r_p1=corr.r_p1, r_p2=corr.r_p2, flag=corr.flag or "")
        else:
            row["flag"] = "fewer-than-3-runs"
        rows.append(row)
    return rows


def representation_tables(cfg: PipelineConfig, inputs: Inputs) -> tuple[list[dict], list[dict]]:
    ds = inputs.dataset
    seed = cfg.representation_seed
    reports = [("aggregated", geoprep.feature_distance_report(inputs.features, ds.urban, cfg.max_per_group, seed))]
    if inputs.tile_features is not None:
        single = geoprep.single_tile_distance_report(inputs.tile_features, ds, None, cfg.max_per_group, seed)
        reports.append(("single-tile", single))
    rep = [
        dict(kind=kind, **row, n_rural=r.n_rural, n_urban=r.n_urban) for kind, r in reports for row in r.distance_rows()
    ]
    pca = geoprep.pca_project_2d(inputs.features)
    pca_rows = [
        {
            "region_id": rid,
            "urban": bool(u),
            "pc1": xy[0],
            "pc2": xy[1],
            "explained_share": pca.explained_variance_share,
        }
        for rid, u, xy in zip(ds.ids, ds.urban, pca.pca_projections)
    ]
    return rep, pca_rows


def audit_dataset(cfg: PipelineConfig, inputs: Inputs, out: Path) -> tuple[dict, list[RunError]]:
    """Run every seed, write per-run and pooled tables under ``out``.

    Completed runs are written even if others fail; the failures are returned.
    """
    exp_cfg = experiment_config(cfg)
    runs_dir = out / "runs"
    if runs_dir.exists():
        shutil.rmtree(runs_dir)
    runs, errors = [], []
    pooled: dict[str, list[dict]] = {name: [] for name in RUN_TABLES}
    for seed, result in iter_runs(inputs.dataset, inputs.features, exp_cfg, cfg.n_runs, cfg.jobs):
        if isinstance(result, RunError):
            log.error("%s", result)
            errors.append(result)
            continue
        records = run_records(result)
        _write_run(runs_dir / f"run_{seed:04d}", records, ExperimentConfig(**{**exp_cfg.__dict__, "seed": seed}))
        for name in RUN_TABLES:
            pooled[name].extend(records[name])
        runs.append(result)

    for name in RUN_TABLES:
        write_table(out / f"{name}.csv", pooled[name], _columns(name, pooled[name]))
    summaries = summary_tables(runs)
    for name in SUMMARY_TABLES:
        write_table(out / f"summary_{name}.csv", summaries.get(name, []), _summary_columns(name))
    write_table(out / "driver_correlations.csv", table3_rows(runs) if runs else [], _TABLE3_COLUMNS)
    rep, pca_rows = representation_tables(cfg, inputs)
    write_table(out / "representation.csv", rep, ["kind", "pair", "mean_distance", "n_rural", "n_urban"])
    write_table(out / "pca.csv", pca_rows, ["region_id", "urban", "pc1", "pc2", "explained_share"])
    rho_wu = audit.spearman(inputs.dataset.wealth, inputs.dataset.urban.astype(float))
    return {"rho_wu": rho_wu, "summaries": summaries, "n_completed": len(runs)}, errors


_TABLE3_COLUMNS = [
    "allocation_stat", "n_runs", "b_hat_mean", "b_mean", "delta_mean", "delta_2se",
    "t_stat", "p_value", "r_p1", "r_p2", "flag",
]
_KEYS = {
    "metrics": ["scope", "metric"],
    "bias": ["source", "metric"],
    "policy": ["scope", "budget_fraction", "score_source", "group_source"],
    "drivers": [],
}


def _summary_columns(name: str) -> list[str]:
    return _KEYS[name] + ["statistic", "mean", "se2", "n_runs"]


def _columns(name: str, rows: list[dict]) -> list[str] | None:
    return list(rows[0]) if rows else {"metrics": ["run", "scope", "metric", "value"]}.get(name, ["run"])


def summary_rows(name: str, summaries: dict) -> list[dict]:
    """Every summary family flattened into one table."""
    out = []
    for family in SUMMARY_TABLES:
        for row in summaries.get(family, []):
            out.append({"dataset": name, "table": family, **row})
    return out


SUMMARY_COLUMNS = [
    "dataset", "table", "scope", "source", "metric", "budget_fraction", "score_source", "group_source",
    "statistic", "mean", "se2", "n_runs",
]


def rho_rows(name: str, info: dict) -> list[dict]:
    rows = []
    index = {(r["scope"], r["metric"]): r for r in info["summaries"].get("metrics", [])}
    for scope in audit.SCOPES:
        row = {"dataset": name, "rho_wu": info["rho_wu"], "scope": scope}
        for metric in ("r2", "spearman"):
            entry = index.get((scope, metric), {})
            row[f"{metric}_mean"] = entry.get("mean", math.nan)
            row[f"{metric}_2se"] = entry.get("se2", math.nan)
        rows.append(row)
    return rows


RHO_COLUMNS = ["dataset", "rho_wu", "scope", "r2_mean", "r2_2se", "spearman_mean", "spearman_2se"]
