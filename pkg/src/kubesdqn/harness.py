"""Seeded trials and multi-trial experiments over a batch of compute-intensive pods."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cluster import (
    ClusterState,
    NodeSpec,
    NodeState,
    PodSpec,
    UsageModelParams,
    active_node_count,
    mean_of,
    observed_cpu,
)
from .features import RewardConfig
from .schedulers import Decision, PolicyKind, SchedulerPolicy, TrainingConfig, make_policy, schedule_batch, train_policy

# Fitted by calibration.calibrate_usage_model on the bundled targets (suspect
# duplicate row excluded) for the homogeneous 4-node roster; the calibration
# tests check that a fresh fit reproduces these numbers.
CALIBRATED_USAGE = UsageModelParams(
    idle_pct=0.0,
    activation_pct=0.0,
    colocation_discount=0.1,
    discount_cap=25,
    contention_threshold=70.0,
    contention_gain=0.5,
    noise_sigma=1.0,
)
CALIBRATED_CPU_DEMAND = 190


@dataclass(frozen=True)
class NodeConfig:
    name: str
    cpu_capacity: int = 4000
    mem_capacity: int = 8192
    max_pods: int = 110
    ready: bool = True
    uptime_hours: float = 48.0

    def __post_init__(self):
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            raise ValueError(f"node {self.name}: capacities must be positive")
        if self.max_pods < 1:
            raise ValueError(f"node {self.name}: max_pods must be >= 1")
        if self.uptime_hours < 0:
            raise ValueError(f"node {self.name}: uptime_hours must be >= 0")


def default_roster() -> list[NodeConfig]:
    return [NodeConfig(f"slave{i}") for i in range(1, 5)]


@dataclass
class Scenario:
    nodes: list[NodeConfig] = field(default_factory=default_roster)
    batch_count: int = 50
    cpu_demand: int = CALIBRATED_CPU_DEMAND
    mem_demand: int = 64
    usage_model: UsageModelParams = CALIBRATED_USAGE
    reward: RewardConfig = field(default_factory=RewardConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    trials: int = 5
    base_seed: int = 0
    batch_id: str = "batch-0"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.batch_count < 1:
            raise ValueError("batch must be non-empty")
        if not self.nodes:
            raise ValueError("no nodes")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")

    def build_cluster(self, seed: int) -> ClusterState:
        nodes = [
            NodeState(
                NodeSpec(i, cfg.name, cfg.cpu_capacity, cfg.mem_capacity, cfg.max_pods),
                ready=cfg.ready,
                uptime_hours=cfg.uptime_hours,
            )
            for i, cfg in enumerate(self.nodes)
        ]
        return ClusterState(nodes, rng_seed=seed, usage_model=self.usage_model)

    def make_pods(self) -> list[PodSpec]:
        return [
            PodSpec(f"{self.batch_id}-pod-{i:03d}", self.cpu_demand, self.mem_demand, self.batch_id)
            for i in range(self.batch_count)
        ]

    @property
    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]


@dataclass
class TrialResult:
    scheduler: str
    trial: int
    seed: int
    pod_counts: list[int]
    node_cpu_pct: list[float]
    avg_cpu_pct: float
    decisions: list[Decision] = field(default_factory=list, repr=False)

    @property
    def active_nodes(self) -> int:
        return sum(1 for c in self.pod_counts if c > 0)

    @property
    def unschedulable(self) -> int:
        return sum(1 for d in self.decisions if d.unschedulable)


@dataclass
class ExperimentReport:
    scheduler: str
    trials: list[TrialResult]
    node_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.trials:
            raise ValueError("report has no trials")

    @property
    def averages(self) -> list[float]:
        return [t.avg_cpu_pct for t in self.trials]

    @property
    def mean_avg_cpu(self) -> float:
        return sum(self.averages) / len(self.trials)

    @property
    def cv_pct(self) -> float:
        return coefficient_of_variation(self.averages)

    @property
    def active_node_stats(self) -> dict[str, float]:
        counts = [t.active_nodes for t in self.trials]
        return {"mean": sum(counts) / len(counts), "min": min(counts), "max": max(counts)}


def coefficient_of_variation(values: list[float]) -> float:
    """100 * population standard deviation / mean."""
    if not values:
        raise ValueError("coefficient of variation of an empty list")
    mu = sum(values) / len(values)
    if mu == 0:
        raise ValueError("coefficient of variation undefined for zero mean")
    var = sum((v - mu) ** 2 for v in values) / len(values)
    return 100.0 * math.sqrt(var) / mu


def run_trial(
    scenario: Scenario,
    policy: SchedulerPolicy,
    seed: int,
    trial: int = 1,
    pods: Optional[list[PodSpec]] = None,
) -> TrialResult:
    cluster = scenario.build_cluster(seed)
    pods = scenario.make_pods() if pods is None else pods
    cluster, decisions = schedule_batch(policy, cluster, pods, rng=np.random.default_rng(seed), epsilon=0.0)
    cpu = observed_cpu(cluster)
    return TrialResult(policy.name, trial, seed, cluster.pod_counts(), cpu, mean_of(cpu), decisions)


def run_experiment(scenario: Scenario, policy: SchedulerPolicy, workers: int = 1) -> ExperimentReport:
    seeds = [(i + 1, scenario.base_seed + i) for i in range(scenario.trials)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(lambda ts: run_trial(scenario, policy, ts[1], ts[0]), seeds))
    else:
        trials = [run_trial(scenario, policy, seed, trial) for trial, seed in seeds]
    return ExperimentReport(policy.name, trials, scenario.node_names)


def trained_policy(kind: PolicyKind | str, scenario: Scenario, training: Optional[TrainingConfig] = None):
    """Initialise and train a learned policy (returns the curve too); static policies pass through."""
    training = training or scenario.training
    policy = make_policy(kind, seed=training.seed, reward_cfg=scenario.reward, training=training)
    if not policy.kind.learned:
        return policy, None
    return train_policy(policy, scenario, training)


@dataclass
class Comparison:
    reports: list[ExperimentReport]

    @property
    def ranking(self) -> list[tuple[str, float]]:
        return sorted(((r.scheduler, r.mean_avg_cpu) for r in self.reports), key=lambda x: (x[1], x[0]))

    def report(self, name: str) -> ExperimentReport:
        for r in self.reports:
            if r.scheduler == name:
                return r
        raise KeyError(name)

    def chart_data(self) -> list[tuple[str, float, float]]:
        return [(r.scheduler, r.mean_avg_cpu, r.cv_pct) for r in self.reports]


ALL_POLICIES = [PolicyKind.DEFAULT, PolicyKind.RANDOM, PolicyKind.SDQN, PolicyKind.SDQN_N, PolicyKind.LSTM, PolicyKind.TRANSFORMER]


def overload_scenario(**overrides) -> Scenario:
    """Per-pod demand high enough that two nodes cannot absorb the batch.

    Under the calibrated model a node takes at most 24 pods of 400 millicores
    before crossing the CPU headroom, so 50 pods need at least three nodes.
    """
    return Scenario(**{"cpu_demand": 400, **overrides})


def compare_all(
    scenario: Scenario,
    policies: Optional[dict[str, SchedulerPolicy]] = None,
    workers: int = 1,
) -> Comparison:
    """One report per policy; learned policies missing from ``policies`` are trained first."""
    policies = dict(policies or {})
    reports = []
    for kind in ALL_POLICIES:
        policy = policies.get(kind.value)
        if policy is None:
            policy, _ = trained_policy(kind, scenario)
        reports.append(run_experiment(scenario, policy, workers=workers))
    return Comparison(reports)
