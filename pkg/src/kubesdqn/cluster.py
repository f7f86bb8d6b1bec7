"""Nodes, pods, placements and the parametric CPU usage model.

The simulator never runs real workloads. A node's CPU percentage is a
deterministic function of the pods it hosts (in placement order) plus an
optional seeded Gaussian observation noise:

    u_raw = idle + activation*[p >= 1] + sum_k d_k * (1 - discount)**min(k-1, cap)
    u     = u_raw + gain * max(0, u_raw - threshold)**2 / 100

where ``d_k`` is the k-th pod's demand as a percent of node capacity.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

# Noise-free CPU a node may reach after a placement before the filter rejects it.
CPU_HEADROOM_PCT = 95.0


class PlacementError(ValueError):
    """Raised when a pod cannot be bound to the requested node."""


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    name: str
    cpu_capacity: int  # millicores
    mem_capacity: int  # MiB
    max_pods: int = 110
    start_time: float = 0.0  # hours

    def __post_init__(self):
        if self.node_id < 0:
            raise ValueError(f"node_id must be non-negative, got {self.node_id}")
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            raise ValueError(f"node {self.name}: capacities must be positive")
        if self.max_pods < 1:
            raise ValueError(f"node {self.name}: max_pods must be >= 1")
        if self.start_time < 0:
            raise ValueError(f"node {self.name}: start_time must be >= 0")


@dataclass(frozen=True)
class PodSpec:
    pod_id: str
    cpu_demand: int  # millicores
    mem_demand: int  # MiB
    batch_id: str = "batch-0"

    def __post_init__(self):
        if self.cpu_demand <= 0 or self.mem_demand <= 0:
            raise ValueError(f"pod {self.pod_id}: demands must be positive")


@dataclass
class NodeState:
    spec: NodeSpec
    ready: bool = True
    resident_pods: list[PodSpec] = field(default_factory=list)
    uptime_hours: float = 0.0

    @property
    def node_id(self) -> int:
        return self.spec.node_id

    @property
    def pod_count(self) -> int:
        return len(self.resident_pods)

    def with_pod(self, pod: PodSpec) -> "NodeState":
        """Shallow copy with ``pod`` appended; the original is untouched."""
        return replace(self, resident_pods=[*self.resident_pods, pod])

    def batch_pod_count(self, batch_id: str) -> int:
        return sum(1 for p in self.resident_pods if p.batch_id == batch_id)


@dataclass(frozen=True)
class UsageModelParams:
    idle_pct: float = 5.0
    activation_pct: float = 12.0
    colocation_discount: float = 0.02
    discount_cap: int = 25
    contention_threshold: float = 70.0
    contention_gain: float = 0.5
    noise_sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.colocation_discount < 1.0:
            raise ValueError("colocation_discount must lie in [0, 1)")
        if not 0.0 < self.contention_threshold <= 100.0:
            raise ValueError("contention_threshold must lie in (0, 100]")
        if self.discount_cap < 1:
            raise ValueError("discount_cap must be a positive integer")
        for name in ("idle_pct", "activation_pct", "contention_gain", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class ClusterState:
    nodes: list[NodeState]
    rng_seed: int = 0
    usage_model: UsageModelParams = field(default_factory=UsageModelParams)

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("no nodes")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique within a cluster")

    def node(self, node_id: int) -> NodeState:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(f"no such node: {node_id}")

    def pod_counts(self) -> list[int]:
        return [n.pod_count for n in self.nodes]

    def snapshot(self) -> "ClusterState":
        return copy.deepcopy(self)


def pod_cpu_pct(pod: PodSpec, spec: NodeSpec) -> float:
    return 100.0 * pod.cpu_demand / spec.cpu_capacity


def raw_cpu_percent(demands_pct: Iterable[float], model: UsageModelParams) -> float:
    """Noise-free, unclamped CPU percent for per-pod demands given in placement order."""
    keep = 1.0 - model.colocation_discount
    u = model.idle_pct
    for k, d in enumerate(demands_pct):
        if k == 0:
            u += model.activation_pct
        u += d * keep ** min(k, model.discount_cap)
    excess = u - model.contention_threshold
    if excess > 0:
        u += model.contention_gain * excess * excess / 100.0
    return u


def marginal_cpu_percent(running: int, demand_pct: float, model: UsageModelParams) -> float:
    """Discounted cost of one more pod on a node already hosting ``running`` pods.

    Excludes the contention term, which is not additive.
    """
    cost = demand_pct * (1.0 - model.colocation_discount) ** min(running, model.discount_cap)
    if running == 0:
        cost += model.activation_pct
    return cost


def node_cpu_percent(
    node: NodeState,
    model: UsageModelParams,
    noise: Optional[np.random.Generator] = None,
) -> float:
    u = raw_cpu_percent((pod_cpu_pct(p, node.spec) for p in node.resident_pods), model)
    if noise is not None and model.noise_sigma > 0:
        u += noise.normal(0.0, model.noise_sigma)
    return min(100.0, max(0.0, u))


def node_mem_percent(node: NodeState) -> float:
    used = sum(p.mem_demand for p in node.resident_pods)
    return min(100.0, 100.0 * used / node.spec.mem_capacity)


def noise_generator(seed: int, node_id: int, measurement: int = 0) -> np.random.Generator:
    """Independent stream keyed by (seed, node, measurement) so draws never depend on call order."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, node_id, measurement])


def observed_cpu(cluster: ClusterState, measurement: int = 0) -> list[float]:
    """One noisy CPU reading per node, replayable from the cluster seed."""
    return [
        node_cpu_percent(n, cluster.usage_model, noise_generator(cluster.rng_seed, n.node_id, measurement))
        for n in cluster.nodes
    ]


def cluster_avg_cpu(cluster: ClusterState, noisy: bool = False, measurement: int = 0) -> float:
    if not cluster.nodes:
        raise ValueError("no nodes")
    if noisy:
        values = observed_cpu(cluster, measurement)
    else:
        values = [node_cpu_percent(n, cluster.usage_model) for n in cluster.nodes]
    return mean_of(values)


def mean_of(values: list[float]) -> float:
    if not values:
        raise ValueError("no nodes")
    return sum(values) / len(values)


def check_predicates(
    ready: bool,
    running: int,
    max_pods: int,
    mem_after_pct: float,
    cpu_after_pct: float,
) -> Optional[str]:
    """Return the first violated predicate tag, or None when all pass."""
    if not ready:
        return "unhealthy"
    if running >= max_pods:
        return "max pods"
    if mem_after_pct > 100.0 + 1e-9:
        return "memory"
    if cpu_after_pct > CPU_HEADROOM_PCT + 1e-9:
        return "cpu headroom"
    return None


def feasible(node: NodeState, pod: PodSpec, model: Optional[UsageModelParams] = None) -> tuple[bool, Optional[str]]:
    model = model or UsageModelParams()
    used = sum(p.mem_demand for p in node.resident_pods) + pod.mem_demand
    mem_after = 100.0 * used / node.spec.mem_capacity
    after = node.with_pod(pod)
    cpu_after = raw_cpu_percent((pod_cpu_pct(p, node.spec) for p in after.resident_pods), model)
    tag = check_predicates(node.ready, node.pod_count, node.spec.max_pods, mem_after, cpu_after)
    return tag is None, tag


def place_pod(cluster: ClusterState, node_id: int, pod: PodSpec) -> ClusterState:
    """Bind ``pod`` to ``node_id`` in place and return the cluster."""
    try:
        node = cluster.node(node_id)
    except KeyError:
        raise PlacementError(f"no such node: {node_id}") from None
    ok, tag = feasible(node, pod, cluster.usage_model)
    if not ok:
        raise PlacementError(f"placement rejected: {tag}")
    node.resident_pods.append(pod)
    return cluster


def remove_pod(cluster: ClusterState, pod_id: str) -> ClusterState:
    for node in cluster.nodes:
        for i, p in enumerate(node.resident_pods):
            if p.pod_id == pod_id:
                del node.resident_pods[i]
                return cluster
    raise KeyError(f"no such pod: {pod_id}")


def active_node_count(cluster: ClusterState) -> int:
    return sum(1 for n in cluster.nodes if n.resident_pods)
