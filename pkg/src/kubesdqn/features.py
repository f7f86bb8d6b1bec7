"""Six-feature node state vector and the SDQN / SDQN-n reward rules."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .cluster import ClusterState, NodeState, UsageModelParams, node_cpu_percent, node_mem_percent

UPTIME_NORM_HOURS = 168.0


@dataclass(frozen=True)
class NodeFeatures:
    cpu_pct: float
    mem_pct: float
    pod_util_pct: float
    health: int
    uptime_hours: float
    running_pods: int
    max_pods: int = 110

    def __post_init__(self):
        for name in ("cpu_pct", "mem_pct", "pod_util_pct"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"{name} must lie in [0, 100], got {value}")
        if self.health not in (0, 1):
            raise ValueError("health must be 0 or 1")
        if self.uptime_hours < 0 or self.running_pods < 0:
            raise ValueError("uptime and running pods must be non-negative")


@dataclass(frozen=True)
class RewardConfig:
    base: float = 100.0
    unhealthy_penalty: float = -100.0
    cpu_hi: float = 70.0
    cpu_lo: float = 40.0
    over_slope: float = -2.0
    band_bonus: float = 10.0
    band_miss: float = -10.0
    podutil_lo: float = 0.6
    podutil_hi: float = 0.9
    podutil_bonus: float = 20.0
    podutil_miss: float = -10.0
    uptime_threshold: float = 24.0
    uptime_bonus: float = 5.0
    uptime_miss: float = -5.0
    spread_bonus_per_node: float = 5.0
    n_target: int = 2
    top_n_hit: float = 20.0
    top_n_miss: float = -50.0
    fallback_nonempty: float = 20.0
    fallback_empty: float = -10.0

    def __post_init__(self):
        if not self.cpu_lo < self.cpu_hi:
            raise ValueError("cpu_lo must be below cpu_hi")
        if not self.podutil_lo < self.podutil_hi:
            raise ValueError("podutil_lo must be below podutil_hi")
        if self.n_target < 1:
            raise ValueError("n_target must be a positive integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DistributionContext:
    nodes_with_batch_pods: int
    candidate_count: int
    top_n_ids: frozenset[int] = field(default_factory=frozenset)
    target_running_pods: int = 0
    target_node_id: Optional[int] = None


def extract_features(node: NodeState, model: UsageModelParams, noise: Optional[np.random.Generator] = None) -> NodeFeatures:
    running = node.pod_count
    return NodeFeatures(
        cpu_pct=node_cpu_percent(node, model, noise),
        mem_pct=node_mem_percent(node),
        pod_util_pct=100.0 * running / node.spec.max_pods,
        health=1 if node.ready else 0,
        uptime_hours=node.uptime_hours,
        running_pods=running,
        max_pods=node.spec.max_pods,
    )


def normalize(f: NodeFeatures) -> np.ndarray:
    return np.array(
        [
            f.cpu_pct / 100.0,
            f.mem_pct / 100.0,
            f.pod_util_pct / 100.0,
            float(f.health),
            min(f.uptime_hours, UPTIME_NORM_HOURS) / UPTIME_NORM_HOURS,
            f.running_pods / f.max_pods,
        ]
    )


def _band_term(pct: float, cfg: RewardConfig) -> float:
    if pct > cfg.cpu_hi:
        return cfg.over_slope * (pct - cfg.cpu_hi)
    if cfg.cpu_lo <= pct <= cfg.cpu_hi:
        return cfg.band_bonus
    return cfg.band_miss


def _shared_terms(f: NodeFeatures, cfg: RewardConfig) -> float:
    total = cfg.base
    if f.health == 0:
        total += cfg.unhealthy_penalty
    total += _band_term(f.cpu_pct, cfg)
    total += _band_term(f.mem_pct, cfg)
    ratio = f.pod_util_pct / 100.0
    total += cfg.podutil_bonus if cfg.podutil_lo <= ratio <= cfg.podutil_hi else cfg.podutil_miss
    total += cfg.uptime_bonus if f.uptime_hours >= cfg.uptime_threshold else cfg.uptime_miss
    return total


def spread_term(ctx: DistributionContext, cfg: RewardConfig) -> float:
    return cfg.spread_bonus_per_node * max(0, ctx.nodes_with_batch_pods - 1)


def top_n_term(ctx: DistributionContext, cfg: RewardConfig) -> float:
    if ctx.candidate_count >= cfg.n_target:
        return cfg.top_n_hit if ctx.target_node_id in ctx.top_n_ids else cfg.top_n_miss
    return cfg.fallback_nonempty if ctx.target_running_pods > 0 else cfg.fallback_empty


def reward_sdqn(f: NodeFeatures, ctx: DistributionContext, cfg: RewardConfig = RewardConfig()) -> float:
    return _shared_terms(f, cfg) + spread_term(ctx, cfg)


def reward_sdqn_n(f: NodeFeatures, ctx: DistributionContext, cfg: RewardConfig = RewardConfig()) -> float:
    return _shared_terms(f, cfg) + top_n_term(ctx, cfg)


def reward_bounds(cfg: RewardConfig, n_nodes: int) -> tuple[float, float]:
    """Static range of reward_sdqn for percent features in [0, 100]."""
    worst_band = min(cfg.band_miss, cfg.over_slope * (100.0 - cfg.cpu_hi), cfg.band_bonus)
    best_band = max(cfg.band_miss, cfg.band_bonus)
    lo = (
        cfg.base
        + min(0.0, cfg.unhealthy_penalty)
        + 2 * worst_band
        + min(cfg.podutil_bonus, cfg.podutil_miss)
        + min(cfg.uptime_bonus, cfg.uptime_miss)
    )
    hi = (
        cfg.base
        + 2 * best_band
        + max(cfg.podutil_bonus, cfg.podutil_miss)
        + max(cfg.uptime_bonus, cfg.uptime_miss)
        + cfg.spread_bonus_per_node * max(0, n_nodes - 1)
    )
    return lo, hi


def top_n_nodes(
    cluster: ClusterState,
    batch_id: str,
    n: int,
    feasible: Optional[Callable[[NodeState], bool]] = None,
) -> list[int]:
    """The ``n`` feasible nodes hosting the most pods of ``batch_id``.

    Ties go to the lower node id, which also orders the result when no batch
    pods exist yet.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    candidates = [node for node in cluster.nodes if feasible is None or feasible(node)]
    ranked = sorted(candidates, key=lambda node: (-node.batch_pod_count(batch_id), node.node_id))
    return [node.node_id for node in ranked[:n]]


def batch_node_count(nodes: Iterable[NodeState], batch_id: str) -> int:
    return sum(1 for node in nodes if node.batch_pod_count(batch_id) > 0)
