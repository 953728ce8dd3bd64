"""Plot-data tables, one long-format CSV per figure panel, built from audit outputs.

Nothing is rendered. Columns per file:

* ``fig1a.csv``  config, scope, rho_mean, rho_2se
* ``fig1b.csv``  config, scope, precision_mean, precision_2se (poorest-20% program by prediction)
* ``fig2a.csv``  config, pair, mean_distance (region-averaged features)
* ``fig2b.csv``  config, region_id, urban, pc1, pc2, explained_share
* ``fig3a.csv``  config, calibration, group_source, delta_b_mean, delta_b_2se (mean calibration vs none)
* ``fig3b.csv``  as fig3a, for selection-threshold calibration
* ``figS1.csv``  config, pair, single_tile_distance, aggregated_distance
* ``figS3a.csv`` config, group, score_source, signed_error_mean, signed_error_2se
* ``figS3b.csv`` config, group, score_source, rank_error_mean, rank_error_2se
* ``figS3c.csv`` config, score_source, rural_share_mean, rural_share_2se
* ``figS3d.csv`` config, run, score_source, threshold, rural_share (targeting curves as audited)
* ``figS4.csv``  config, rho_wu, scope, metric, mean, se2
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import MissingInputError
from .tables import read_table, write_table

DATASET_TABLES = (
    "summary_metrics.csv",
    "summary_bias.csv",
    "summary_policy.csv",
    "representation.csv",
    "pca.csv",
    "curves.csv",
)
TOP_TABLES = ("manifest.json", "rho_vs_performance.csv")


def _f(text: str) -> float:
    return float(text) if text not in ("", None) else math.nan


def _find(rows: list[dict], **match) -> dict | None:
    for row in rows:
        if all(row.get(k) == v for k, v in match.items()):
            return row
    return None


def _stat(rows, **match) -> tuple[float, float]:
    row = _find(rows, **match)
    return (_f(row["mean"]), _f(row["se2"])) if row else (math.nan, math.nan)


def check_inputs(result_dir: Path) -> list[str]:
    """Datasets named in the manifest; raises listing every absent table."""
    missing = [name for name in TOP_TABLES if not (result_dir / name).exists()]
    if "manifest.json" in missing:
        raise MissingInputError(f"{result_dir}: missing tables: {', '.join(missing)}")
    datasets = json.loads((result_dir / "manifest.json").read_text()).get("dataset_dirs", [])
    for name in datasets:
        missing += [f"{name}/{t}" for t in DATASET_TABLES if not (result_dir / name / t).exists()]
    if missing:
        raise MissingInputError(f"{result_dir}: missing tables: {', '.join(missing)}")
    return datasets


def build_report(result_dir: str | Path, out: str | Path | None = None) -> list[Path]:
    result_dir = Path(result_dir)
    out = Path(out) if out else result_dir
    datasets = check_inputs(result_dir)
    panels: dict[str, list[dict]] = {k: [] for k in _COLUMNS}
    for name in datasets:
        d = result_dir / name
        metrics = read_table(d / "summary_metrics.csv")
        bias = read_table(d / "summary_bias.csv")
        policy = read_table(d / "summary_policy.csv")
        rep = read_table(d / "representation.csv")

        for scope in ("overall", "urban", "rural"):
            m, s = _stat(metrics, scope=scope, metric="spearman")
            panels["fig1a"].append({"config": name, "scope": scope, "rho_mean": m, "rho_2se": s})
            m, s = _stat(policy, scope=scope, score_source="prediction", group_source="truth", statistic="precision")
            panels["fig1b"].append({"config": name, "scope": scope, "precision_mean": m, "precision_2se": s})

        agg = {r["pair"]: _f(r["mean_distance"]) for r in rep if r["kind"] == "aggregated"}
        tile = {r["pair"]: _f(r["mean_distance"]) for r in rep if r["kind"] == "single-tile"}
        for pair, value in agg.items():
            panels["fig2a"].append({"config": name, "pair": pair, "mean_distance": value})
            panels["figS1"].append(
                {"config": name, "pair": pair, "single_tile_distance": tile.get(pair, math.nan), "aggregated_distance": value}
            )
        for row in read_table(d / "pca.csv"):
            panels["fig2b"].append({"config": name, **row})

        none = _stat(policy, scope="overall", score_source="prediction", group_source="truth", statistic="delta_b")
        for panel, source in (("fig3a", "calibrated-mean"), ("fig3b", "calibrated-threshold")):
            panels[panel].append(
                {"config": name, "calibration": "none", "group_source": "none", "delta_b_mean": none[0], "delta_b_2se": none[1]}
            )
            for group_source in ("truth", "predicted"):
                m, s = _stat(policy, scope="overall", score_source=source, group_source=group_source, statistic="delta_b")
                panels[panel].append(
                    {"config": name, "calibration": source, "group_source": group_source, "delta_b_mean": m, "delta_b_2se": s}
                )

        for group in ("urban", "rural"):
            for source in ("prediction", "noised"):
                m, s = _stat(bias, source=source, metric=f"mean_signed_error_{group}")
                panels["figS3a"].append(
                    {"config": name, "group": group, "score_source": source, "signed_error_mean": m, "signed_error_2se": s}
                )
                m, s = _stat(bias, source=source, metric=f"mean_rank_error_{group}")
                panels["figS3b"].append(
                    {"config": name, "group": group, "score_source": source, "rank_error_mean": m, "rank_error_2se": s}
                )
        truth = _stat(policy, scope="overall", score_source="prediction", group_source="truth", statistic="b")
        panels["figS3c"].append({"config": name, "score_source": "truth", "rural_share_mean": truth[0], "rural_share_2se": truth[1]})
        for source in ("prediction", "noised"):
            m, s = _stat(policy, scope="overall", score_source=source, group_source="truth", statistic="b_hat")
            panels["figS3c"].append({"config": name, "score_source": source, "rural_share_mean": m, "rural_share_2se": s})
        for row in read_table(d / "curves.csv"):
            panels["figS3d"].append({"config": name, **row})

    for row in read_table(result_dir / "rho_vs_performance.csv"):
        for metric in ("r2", "spearman"):
            panels["figS4"].append(
                {
                    "config": row["dataset"],
                    "rho_wu": row["rho_wu"],
                    "scope": row["scope"],
                    "metric": metric,
                    "mean": row[f"{metric}_mean"],
                    "se2": row[f"{metric}_2se"],
                }
            )
    return [write_table(out / f"{panel}.csv", rows, _COLUMNS[panel]) for panel, rows in panels.items()]


_COLUMNS = {
    "fig1a": ["config", "scope", "rho_mean", "rho_2se"],
    "fig1b": ["config", "scope", "precision_mean", "precision_2se"],
    "fig2a": ["config", "pair", "mean_distance"],
    "fig2b": ["config", "region_id", "urban", "pc1", "pc2", "explained_share"],
    "fig3a": ["config", "calibration", "group_source", "delta_b_mean", "delta_b_2se"],
    "fig3b": ["config", "calibration", "group_source", "delta_b_mean", "delta_b_2se"],
    "figS1": ["config", "pair", "single_tile_distance", "aggregated_distance"],
    "figS3a": ["config", "group", "score_source", "signed_error_mean", "signed_error_2se"],
    "figS3b": ["config", "group", "score_source", "rank_error_mean", "rank_error_2se"],
    "figS3c": ["config", "score_source", "rural_share_mean", "rural_share_2se"],
    "figS3d": ["config", "run", "score_source", "threshold", "rural_share"],
    "figS4": ["config", "rho_wu", "scope", "metric", "mean", "se2"],
}
