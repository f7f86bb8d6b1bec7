import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kubesdqn.cluster import ClusterState, NodeSpec, NodeState, PodSpec, UsageModelParams
from kubesdqn.features import (
    DistributionContext,
    NodeFeatures,
    RewardConfig,
    extract_features,
    normalize,
    reward_bounds,
    reward_sdqn,
    reward_sdqn_n,
    top_n_nodes,
)

CFG = RewardConfig()
ZERO_USAGE = UsageModelParams(idle_pct=0.0, activation_pct=0.0, noise_sigma=0.0)


def node(node_id=0, n_pods=0, ready=True, uptime=36.0, batch="b", max_pods=110):
    pods = [PodSpec(f"{batch}-{node_id}-{i}", 80, 64, batch) for i in range(n_pods)]
    return NodeState(NodeSpec(node_id, f"n{node_id}", 4000, 8192, max_pods), ready, pods, uptime)


def feats(cpu=50.0, mem=50.0, util=70.0, health=1, uptime=30.0, running=77):
    return NodeFeatures(cpu, mem, util, health, uptime, running)


def ctx(batch_nodes=1, candidates=4, top=(0, 1), running=5, target=0):
    return DistributionContext(batch_nodes, candidates, frozenset(top), running, target)


def test_extract_empty_node():
    f = extract_features(node(), ZERO_USAGE)
    assert (f.cpu_pct, f.mem_pct, f.pod_util_pct, f.health, f.uptime_hours, f.running_pods) == (0, 0, 0, 1, 36, 0)


def test_extract_pod_utilisation():
    assert extract_features(node(n_pods=55), ZERO_USAGE).pod_util_pct == 50.0


def test_extract_unhealthy_node():
    assert extract_features(node(n_pods=40, ready=False), ZERO_USAGE).health == 0


def test_normalize_examples():
    f = NodeFeatures(50, 50, 50, 1, 36, 55, 110)
    np.testing.assert_allclose(normalize(f), [0.5, 0.5, 0.5, 1.0, 36 / 168, 0.5])
    np.testing.assert_array_equal(normalize(NodeFeatures(0, 0, 0, 1, 0, 0)), [0, 0, 0, 1, 0, 0])
    assert normalize(NodeFeatures(0, 0, 0, 0, 400, 0))[4] == 1.0


@given(st.floats(0, 100), st.floats(0, 100), st.integers(0, 110), st.integers(0, 1), st.floats(0, 1e4))
def test_normalize_in_unit_box(cpu, mem, running, health, uptime):
    f = NodeFeatures(cpu, mem, 100.0 * running / 110, health, uptime, running)
    x = normalize(f)
    assert x.shape == (6,) and np.all((x >= 0) & (x <= 1))


def test_reward_examples():
    assert reward_sdqn(feats(), ctx(batch_nodes=1), CFG) == 145
    assert reward_sdqn(feats(health=0), ctx(batch_nodes=1), CFG) == 45
    assert reward_sdqn(feats(cpu=80, util=50, uptime=10), ctx(batch_nodes=3), CFG) == 85


def test_reward_n_examples():
    assert reward_sdqn_n(feats(), ctx(top=(0, 1), target=0), CFG) == 165
    assert reward_sdqn_n(feats(), ctx(top=(0, 1), target=2), CFG) == 95
    one = ctx(candidates=1, top=(0,), running=3, target=0)
    assert reward_sdqn_n(feats(), one, CFG) - reward_sdqn(feats(), ctx(batch_nodes=1), CFG) == 20
    empty = ctx(candidates=1, top=(0,), running=0, target=0)
    assert reward_sdqn_n(feats(), empty, CFG) == 135


@given(st.floats(70.0, 100.0, exclude_min=True), st.floats(70.0, 100.0, exclude_min=True))
def test_slope_above_threshold(a, b):
    ra = reward_sdqn(feats(cpu=a), ctx(), CFG)
    rb = reward_sdqn(feats(cpu=b), ctx(), CFG)
    assert ra - rb == pytest.approx(-2.0 * (a - b), abs=1e-9)


def test_boundaries_inclusive():
    base = reward_sdqn(feats(), ctx(), CFG)
    for cpu in (40.0, 70.0):
        assert reward_sdqn(feats(cpu=cpu), ctx(), CFG) == base
    for util in (60.0, 90.0):
        assert reward_sdqn(feats(util=util), ctx(), CFG) == base
    assert reward_sdqn(feats(uptime=24.0), ctx(), CFG) == base


@given(
    st.floats(0, 100), st.floats(0, 100), st.floats(0, 100), st.integers(0, 1),
    st.floats(0, 1000), st.integers(1, 8), st.integers(1, 8),
)
def test_reward_within_static_bounds(cpu, mem, util, health, uptime, hosting, n_nodes):
    hosting = min(hosting, n_nodes)
    lo, hi = reward_bounds(CFG, n_nodes)
    # the documented envelope contains the tighter computed one
    assert lo >= CFG.base - 100 - 10 * 4 - 2 * 60 and hi <= CFG.base + 10 + 10 + 20 + 5 + 5 * (n_nodes - 1)
    r = reward_sdqn(NodeFeatures(cpu, mem, util, health, uptime, 0), ctx(batch_nodes=hosting), CFG)
    assert lo <= r <= hi


@given(st.floats(0, 100), st.floats(0, 100), st.integers(0, 1))
def test_rewards_agree_when_terms_coincide(cpu, mem, health):
    # spread term for 5 hosting nodes is +20, the Top-n hit is +20
    f = NodeFeatures(cpu, mem, 70.0, health, 30.0, 77)
    c = DistributionContext(5, 4, frozenset({0, 1}), 3, 0)
    assert reward_sdqn(f, c, CFG) == reward_sdqn_n(f, c, CFG)


def test_top_n_examples():
    counts = (13, 13, 21, 3)
    cluster = ClusterState([node(i, c) for i, c in enumerate(counts)])
    assert top_n_nodes(cluster, "b", 2) == [2, 0]
    empty = ClusterState([node(i) for i in range(4)])
    assert top_n_nodes(empty, "b", 2) == [0, 1]
    assert top_n_nodes(empty, "b", 2, lambda n: n.node_id == 3) == [3]
    assert top_n_nodes(cluster, "other", 2) == [0, 1]
    with pytest.raises(ValueError):
        top_n_nodes(cluster, "b", 0)


@given(st.lists(st.integers(0, 20), min_size=1, max_size=6), st.integers(1, 4))
def test_top_n_deterministic_and_ranked(counts, n):
    cluster = ClusterState([node(i, c) for i, c in enumerate(counts)])
    first = top_n_nodes(cluster, "b", n)
    assert first == top_n_nodes(cluster, "b", n)
    assert len(first) == min(n, len(counts))
    chosen = [counts[i] for i in first]
    rest = [c for i, c in enumerate(counts) if i not in first]
    assert not rest or min(chosen) >= max(rest)


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(cpu_lo=80)
    with pytest.raises(ValueError):
        RewardConfig(podutil_lo=0.95)
    with pytest.raises(ValueError):
        NodeFeatures(101, 0, 0, 1, 0, 0)
    assert RewardConfig().to_dict()["top_n_miss"] == -50
