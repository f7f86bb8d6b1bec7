from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kubesdqn.cluster import PodSpec, UsageModelParams, cluster_avg_cpu, place_pod
from kubesdqn.harness import (
    ALL_POLICIES,
    CALIBRATED_USAGE,
    ExperimentReport,
    NodeConfig,
    Scenario,
    coefficient_of_variation,
    compare_all,
    overload_scenario,
    run_experiment,
    run_trial,
)
from kubesdqn.schedulers import PolicyKind, make_policy

QUIET = replace(CALIBRATED_USAGE, noise_sigma=0.0)
DEFAULT_ROWS = (29.97, 31.82, 30.95, 29.71, 31.91)
SDQN_ROWS = (25.21, 27.69, 26.39, 27.93, 28.84)


def closed_form(count, d, model):
    keep = 1 - model.colocation_discount
    load = sum(d * keep ** min(k, model.discount_cap) for k in range(count))
    u = model.idle_pct + (model.activation_pct if count else 0.0) + load
    u += model.contention_gain * max(0.0, u - model.contention_threshold) ** 2 / 100
    return min(100.0, max(0.0, u))


def test_scripted_plan_matches_closed_form():
    sc = Scenario(usage_model=QUIET)
    cluster = sc.build_cluster(0)
    for i, pod in enumerate(sc.make_pods()):
        place_pod(cluster, 0 if i < 25 else 1, pod)
    d = 100.0 * sc.cpu_demand / 4000
    expected = np.mean([closed_form(c, d, QUIET) for c in (25, 25, 0, 0)])
    assert cluster_avg_cpu(cluster) == pytest.approx(expected, abs=1e-9)


def test_empty_batch_gives_idle_mean():
    model = UsageModelParams(noise_sigma=0.0)
    sc = Scenario(usage_model=model)
    result = run_trial(sc, make_policy(PolicyKind.DEFAULT), seed=0, pods=[])
    assert result.avg_cpu_pct == pytest.approx(model.idle_pct)
    assert result.pod_counts == [0, 0, 0, 0]


def test_same_seed_identical_trial():
    sc = Scenario()
    policy = make_policy(PolicyKind.SDQN, seed=1)
    a, b = run_trial(sc, policy, 7), run_trial(sc, policy, 7)
    assert (a.pod_counts, a.node_cpu_pct, a.avg_cpu_pct) == (b.pod_counts, b.node_cpu_pct, b.avg_cpu_pct)


def test_report_reproducible_and_parallel_safe():
    sc = Scenario()
    policy = make_policy(PolicyKind.RANDOM)
    a = run_experiment(sc, policy)
    b = run_experiment(sc, policy, workers=4)
    assert a.averages == b.averages
    assert [t.seed for t in a.trials] == [0, 1, 2, 3, 4]


def test_single_trial_cv_zero():
    report = run_experiment(Scenario(trials=1), make_policy(PolicyKind.DEFAULT))
    assert report.cv_pct == 0.0


def test_default_uses_four_nodes_every_trial():
    report = run_experiment(Scenario(), make_policy(PolicyKind.DEFAULT))
    assert all(t.active_nodes == 4 for t in report.trials)
    assert report.active_node_stats == {"mean": 4.0, "min": 4, "max": 4}


def test_cv_reference_values():
    assert coefficient_of_variation(list(DEFAULT_ROWS)) == pytest.approx(2.95, abs=0.01)
    assert coefficient_of_variation(list(SDQN_ROWS)) == pytest.approx(4.67, abs=0.01)
    assert coefficient_of_variation([3.0] * 4) == 0.0
    with pytest.raises(ValueError):
        coefficient_of_variation([])
    with pytest.raises(ValueError):
        coefficient_of_variation([1.0, -1.0])


def test_sample_form_would_disagree():
    sample = 100 * np.std(DEFAULT_ROWS, ddof=1) / np.mean(DEFAULT_ROWS)
    assert abs(sample - 2.95) > 0.3


def test_report_mean_recomputable():
    report = run_experiment(Scenario(), make_policy(PolicyKind.RANDOM))
    assert abs(report.mean_avg_cpu - sum(report.averages) / len(report.averages)) < 1e-9
    with pytest.raises(ValueError):
        ExperimentReport("x", [])


@settings(max_examples=10, deadline=None)
@given(st.text(alphabet="abcxyz", min_size=1, max_size=5), st.integers(0, 50))
def test_pod_renaming_invariance(prefix, seed):
    sc = Scenario()
    policy = make_policy(PolicyKind.DEFAULT)
    renamed = [PodSpec(f"{prefix}-{i}", p.cpu_demand, p.mem_demand, p.batch_id) for i, p in enumerate(sc.make_pods())]
    a = run_trial(sc, policy, seed)
    b = run_trial(sc, policy, seed, pods=renamed)
    assert (a.pod_counts, a.node_cpu_pct) == (b.pod_counts, b.node_cpu_pct)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(trials=0)
    with pytest.raises(ValueError):
        Scenario(batch_count=0)
    with pytest.raises(ValueError):
        Scenario(nodes=[NodeConfig("a"), NodeConfig("a")])
    with pytest.raises(ValueError):
        NodeConfig("a", cpu_capacity=0)


def test_compare_all_rows_and_determinism(scenario, trained):
    policies = {k: p for k, (p, _) in trained.items()}
    first = compare_all(scenario, policies)
    second = compare_all(scenario, policies, workers=3)
    assert [r.scheduler for r in first.reports] == [k.value for k in ALL_POLICIES]
    assert first.chart_data() == second.chart_data()
    assert [name for name, _ in first.ranking] == sorted(
        (r.scheduler for r in first.reports), key=lambda n: first.report(n).mean_avg_cpu)


def test_overload_forces_overflow(trained):
    policy, _ = trained["sdqn-n"]
    sc = overload_scenario()
    result = run_trial(sc, policy, 0)
    assert sum(result.pod_counts) == 50
    assert result.active_nodes >= 3
    quiet = replace(sc, usage_model=replace(sc.usage_model, noise_sigma=0.0))
    assert max(run_trial(quiet, policy, 0).node_cpu_pct) <= 95.0
