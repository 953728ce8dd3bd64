import math
from dataclasses import replace

import numpy as np
import pytest

from geofair import experiment
from geofair.audit import spearman
from geofair.experiment import ExperimentConfig, RunError, run_experiment
from geofair.synth import SynthConfig, describe_config_suite

from helpers import build_inputs


@pytest.fixture(scope="module")
def small():
    cfg = SynthConfig(n_regions=160, rural_share=0.5, target_rho=0.5, tile_grid=(40, 40), seed=3)
    dataset, fm, _ = build_inputs(cfg, n_filters=16)
    return dataset, fm


def test_same_seed_identical(small):
    a = run_experiment(*small, ExperimentConfig(seed=5))
    b = run_experiment(*small, ExperimentConfig(seed=5))
    # repr comparison treats NaN cells as equal
    assert repr(experiment.run_records(a)) == repr(experiment.run_records(b))


def test_different_seed_differs(small):
    a = run_experiment(*small, ExperimentConfig(seed=5))
    b = run_experiment(*small, ExperimentConfig(seed=6))
    assert a.split.test_ids != b.split.test_ids


def test_run_contents(small):
    run = run_experiment(*small, ExperimentConfig(seed=1))
    assert len(run.test_ids) == len(run.w_hat) == 40
    assert run.lambda_wealth in ExperimentConfig().lambda_grid
    sources = {(o.score_source, o.group_source) for o in run.policies}
    assert ("calibrated-threshold", "predicted") in sources
    assert ("calibrated-mean", "truth") in sources
    truth = run.outcome("truth")
    assert truth.precision == 1.0 and truth.delta_b == 0.0
    assert len(run.outcome("prediction").selected_ids) == 8


def test_noiseless_full_visibility_ranks_well():
    cfg = SynthConfig(
        n_regions=400, within_visibility=1.0, pixel_noise=0.0, texture_noise=0.0, tile_grid=(60, 60), seed=2
    )
    dataset, fm, _ = build_inputs(cfg, n_filters=64)
    run = run_experiment(dataset, fm, ExperimentConfig(seed=0))
    assert run.metrics["overall"].spearman >= 0.9


def test_errors_carry_seed(small):
    dataset, fm = small
    with pytest.raises(RunError, match="seed 9"):
        run_experiment(dataset, replace(fm, region_ids=fm.region_ids[::-1]), ExperimentConfig(seed=9))


def test_mean_and_2se():
    assert experiment.mean_and_2se([1.0, 3.0]) == (2.0, pytest.approx(2 * math.sqrt(2) / math.sqrt(2)), 2)
    mean, se2, n = experiment.mean_and_2se([4.0, math.nan])
    assert mean == 4.0 and math.isnan(se2) and n == 1


def test_repeat_summaries(small):
    runs, summary = experiment.repeat_experiments(*small, ExperimentConfig(seed=20), n_runs=3)
    assert [r.seed for r in runs] == [20, 21, 22]
    rows = {(r["scope"], r["metric"]): r for r in summary["metrics"]}
    r2 = rows[("overall", "r2")]
    assert r2["mean"] == pytest.approx(np.mean([r.metrics["overall"].r2 for r in runs]), abs=1e-12)
    assert r2["se2"] >= 0 and r2["n_runs"] == 3
    assert {"metrics", "bias", "policy", "drivers"} <= set(summary)


def test_repeat_needs_two_runs(small):
    with pytest.raises(ValueError):
        experiment.repeat_experiments(*small, n_runs=1)


def test_parallel_matches_sequential(small):
    cfg = ExperimentConfig(seed=30)
    seq = [experiment.run_records(r) for _, r in experiment.iter_runs(*small, cfg, 2, jobs=1)]
    par = [experiment.run_records(r) for _, r in experiment.iter_runs(*small, cfg, 2, jobs=2)]
    assert repr(seq) == repr(par)


def test_monotone_transform_keeps_spearman(small):
    run = run_experiment(*small, ExperimentConfig(seed=1))
    assert spearman(np.exp(run.w), run.w_hat) == pytest.approx(spearman(run.w, run.w_hat), abs=1e-12)


def test_rural_poverty_gap():
    dataset, fm, _ = build_inputs(describe_config_suite()["rural-poverty"], n_filters=64)
    rhos = [run_experiment(dataset, fm, ExperimentConfig(seed=s)).metrics for s in range(10)]
    overall = np.mean([m["overall"].spearman for m in rhos])
    assert overall - np.mean([m["urban"].spearman for m in rhos]) >= 0.1
    assert overall - np.mean([m["rural"].spearman for m in rhos]) >= 0.1
