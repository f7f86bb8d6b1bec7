"""Filter / score / choose pipeline shared by every policy, plus online training.

A learned policy values "bind this pod to node a" as

    Q(s, a) = q_scale * f(afterstate features of a) + distribution term

where f is the network applied to the node's noise-free features with the pod
hypothetically placed, and the distribution term (the spread bonus for SDQN,
the Top-n rule for SDQN-n) is computed exactly from the cluster. The network
only regresses the node-local part of the reward; node-local features cannot
tell which nodes are in the Top-n set or how many nodes already host the batch.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import nn
from .cluster import (
    ClusterState,
    NodeState,
    PodSpec,
    feasible,
    node_cpu_percent,
    node_mem_percent,
    place_pod,
)
from .features import (
    DistributionContext,
    NodeFeatures,
    RewardConfig,
    batch_node_count,
    extract_features,
    normalize,
    reward_sdqn,
    reward_sdqn_n,
    spread_term,
    top_n_nodes,
    top_n_term,
)

log = logging.getLogger(__name__)


class PolicyKind(str, Enum):
    DEFAULT = "default"
    RANDOM = "random"
    SDQN = "sdqn"
    SDQN_N = "sdqn-n"
    LSTM = "lstm"
    TRANSFORMER = "transformer"

    @property
    def learned(self) -> bool:
        return self in SCORER_FOR

    @property
    def scorer_kind(self) -> nn.ScorerKind:
        return SCORER_FOR[self]


SCORER_FOR = {
    PolicyKind.SDQN: nn.ScorerKind.MLP,
    PolicyKind.SDQN_N: nn.ScorerKind.MLP,
    PolicyKind.LSTM: nn.ScorerKind.LSTM,
    PolicyKind.TRANSFORMER: nn.ScorerKind.TRANSFORMER,
}


class Unschedulable(RuntimeError):
    """No node passed the filter for a pod."""


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 0.001
    epsilon_start: float = 0.3
    epsilon_end: float = 0.01
    epsilon_decay_episodes: int = 200
    episodes: int = 300
    train_online: bool = True
    seed: int = 0
    # Network output is multiplied by q_scale so rewards of O(100) points are
    # reachable with lr=0.001; loss is still measured in reward points.
    q_scale: float = 100.0
    replay_capacity: int = 0  # 0 disables the replay buffer
    replay_batch: int = 8

    def __post_init__(self):
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.episodes < 0 or self.epsilon_decay_episodes < 0:
            raise ValueError("episode counts must be non-negative")
        if self.q_scale <= 0:
            raise ValueError("q_scale must be positive")

    def epsilon(self, episode: int) -> float:
        if self.epsilon_decay_episodes == 0:
            return self.epsilon_end
        frac = min(1.0, episode / self.epsilon_decay_episodes)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass
class Decision:
    pod_id: str
    chosen_node_id: Optional[int]
    scores: dict[int, float]
    candidates: list[int]
    epsilon_used: bool = False
    reward_target: Optional[float] = None
    batch_id: str = ""
    state: Optional[np.ndarray] = None  # normalised afterstate features of the chosen node
    top_n_ids: frozenset = frozenset()
    target_running_pods: int = 0
    distribution_term: float = 0.0

    @property
    def unschedulable(self) -> bool:
        return self.chosen_node_id is None


@dataclass
class SchedulerPolicy:
    kind: PolicyKind
    params: Optional[nn.ParamStore] = None
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        self.kind = PolicyKind(self.kind)
        if self.params is not None:
            if not self.kind.learned:
                raise ValueError(f"{self.kind.value} policy carries no scorer")
            if self.params.kind is not self.kind.scorer_kind:
                raise ValueError(f"{self.kind.value} needs a {self.kind.scorer_kind.value} scorer")

    @property
    def name(self) -> str:
        return self.kind.value

    def reward(self, features: NodeFeatures, ctx: DistributionContext) -> float:
        if self.kind is PolicyKind.SDQN_N:
            return reward_sdqn_n(features, ctx, self.reward_cfg)
        return reward_sdqn(features, ctx, self.reward_cfg)


def make_policy(
    kind: PolicyKind | str,
    seed: int = 0,
    reward_cfg: Optional[RewardConfig] = None,
    training: Optional[TrainingConfig] = None,
) -> SchedulerPolicy:
    kind = PolicyKind(kind)
    params = nn.init_params(kind.scorer_kind, seed) if kind.learned else None
    return SchedulerPolicy(kind, params, reward_cfg or RewardConfig(), training or TrainingConfig(seed=seed))


def filter_nodes(cluster: ClusterState, pod: PodSpec) -> list[int]:
    ok = [n.node_id for n in cluster.nodes if feasible(n, pod, cluster.usage_model)[0]]
    return sorted(ok)


def least_allocated(cpu_after_pct: float, mem_after_pct: float) -> float:
    cpu_free = max(0.0, 1.0 - cpu_after_pct / 100.0)
    mem_free = max(0.0, 1.0 - mem_after_pct / 100.0)
    return 100.0 * (cpu_free + mem_free) / 2.0


def score_default(cluster: ClusterState, pod: PodSpec, node_id: int) -> float:
    after = cluster.node(node_id).with_pod(pod)
    return least_allocated(node_cpu_percent(after, cluster.usage_model), node_mem_percent(after))


def score_features(policy: SchedulerPolicy, x: np.ndarray) -> float:
    if policy.params is None:
        raise ValueError(f"{policy.name} policy has no initialised scorer")
    out, _ = nn.forward(policy.params, x)
    return policy.training.q_scale * out


def afterstate_vector(cluster: ClusterState, pod: PodSpec, node_id: int) -> np.ndarray:
    return normalize(extract_features(cluster.node(node_id).with_pod(pod), cluster.usage_model))


def score_learned(policy: SchedulerPolicy, cluster: ClusterState, pod: PodSpec, node_id: int) -> float:
    """Network part of Q: the scaled output on the node's afterstate features."""
    return score_features(policy, afterstate_vector(cluster, pod, node_id))


def distribution_context(
    policy: SchedulerPolicy,
    cluster: ClusterState,
    pod: PodSpec,
    node_id: int,
    candidates: list[int],
) -> DistributionContext:
    """Context for binding ``pod`` to ``node_id``, evaluated before the placement."""
    node = cluster.node(node_id)
    cand = set(candidates)
    top = top_n_nodes(cluster, pod.batch_id, policy.reward_cfg.n_target, lambda n: n.node_id in cand)
    hosting = batch_node_count(cluster.nodes, pod.batch_id) + (0 if node.batch_pod_count(pod.batch_id) else 1)
    return DistributionContext(
        nodes_with_batch_pods=hosting,
        candidate_count=len(candidates),
        top_n_ids=frozenset(top),
        target_running_pods=node.pod_count,
        target_node_id=node_id,
    )


def distribution_term(policy: SchedulerPolicy, ctx: DistributionContext) -> float:
    if policy.kind is PolicyKind.SDQN_N:
        return top_n_term(ctx, policy.reward_cfg)
    return spread_term(ctx, policy.reward_cfg)


def score_nodes(policy: SchedulerPolicy, cluster: ClusterState, pod: PodSpec, candidates: list[int]) -> dict[int, float]:
    if policy.kind is PolicyKind.DEFAULT:
        return {i: score_default(cluster, pod, i) for i in candidates}
    if policy.kind is PolicyKind.RANDOM:
        return {i: 0.0 for i in candidates}
    return {
        i: score_learned(policy, cluster, pod, i)
        + distribution_term(policy, distribution_context(policy, cluster, pod, i, candidates))
        for i in candidates
    }


def choose(scores: dict[int, float], epsilon: float, rng: np.random.Generator) -> tuple[int, bool]:
    """Pick a node id; returns (node_id, explored)."""
    if not scores:
        raise Unschedulable("no feasible node")
    ids = sorted(scores)
    if epsilon > 0 and rng.random() < epsilon:
        return ids[int(rng.integers(len(ids)))], True
    best = max(scores.values())
    tied = [i for i in ids if scores[i] == best]
    if len(tied) == 1:
        return tied[0], False
    return tied[int(rng.integers(len(tied)))], False


def reward_for(policy: SchedulerPolicy, decision: Decision, cluster_after: ClusterState) -> float:
    node = cluster_after.node(decision.chosen_node_id)
    ctx = DistributionContext(
        nodes_with_batch_pods=batch_node_count(cluster_after.nodes, decision.batch_id),
        candidate_count=len(decision.candidates),
        top_n_ids=decision.top_n_ids,
        target_running_pods=decision.target_running_pods,
        target_node_id=decision.chosen_node_id,
    )
    return policy.reward(extract_features(node, cluster_after.usage_model), ctx)


def schedule_pod(
    policy: SchedulerPolicy,
    cluster: ClusterState,
    pod: PodSpec,
    rng: np.random.Generator,
    epsilon: float = 0.0,
) -> Decision:
    candidates = filter_nodes(cluster, pod)
    if not candidates:
        return Decision(pod.pod_id, None, {}, [], batch_id=pod.batch_id)
    scores = score_nodes(policy, cluster, pod, candidates)
    node_id, explored = choose(scores, epsilon, rng)
    decision = Decision(pod.pod_id, node_id, scores, candidates, explored, batch_id=pod.batch_id)
    if policy.kind.learned:
        ctx = distribution_context(policy, cluster, pod, node_id, candidates)
        decision.state = afterstate_vector(cluster, pod, node_id)
        decision.top_n_ids = ctx.top_n_ids
        decision.target_running_pods = ctx.target_running_pods
        decision.distribution_term = distribution_term(policy, ctx)
    place_pod(cluster, node_id, pod)
    return decision


def schedule_batch(
    policy: SchedulerPolicy,
    cluster: ClusterState,
    pods: list[PodSpec],
    rng: Optional[np.random.Generator] = None,
    epsilon: float = 0.0,
    train: bool = False,
    replay: Optional[deque] = None,
) -> tuple[ClusterState, list[Decision]]:
    """Place ``pods`` one at a time, refreshing state between decisions."""
    rng = rng if rng is not None else np.random.default_rng(cluster.rng_seed)
    decisions = []
    for pod in pods:
        decision = schedule_pod(policy, cluster, pod, rng, epsilon)
        if not decision.unschedulable and policy.kind.learned:
            decision.reward_target = reward_for(policy, decision, cluster)
            if train:
                train_step(policy, decision, cluster, rng=rng, replay=replay)
        decisions.append(decision)
    return cluster, decisions


def train_step(
    policy: SchedulerPolicy,
    decision: Decision,
    cluster_after: ClusterState,
    rng: Optional[np.random.Generator] = None,
    replay: Optional[deque] = None,
) -> float:
    """One Adam step of mse(Q(chosen), reward); returns the loss before the step.

    The exact distribution term appears on both sides, so the network is
    fitted to ``reward - distribution_term``.
    """
    if not policy.kind.learned or policy.params is None:
        raise ValueError(f"{policy.name} policy is not trainable")
    cfg = policy.training
    if decision.reward_target is None:
        decision.reward_target = reward_for(policy, decision, cluster_after)
    target = decision.reward_target - decision.distribution_term
    loss = nn.fit_step(policy.params, decision.state, target, lr=cfg.lr, scale=cfg.q_scale)
    if replay is not None and cfg.replay_capacity > 0:
        replay.append((decision.state, target))
        if len(replay) >= cfg.replay_batch:
            _replay_step(policy, replay, rng or np.random.default_rng(cfg.seed))
    return loss


def _replay_step(policy: SchedulerPolicy, replay: deque, rng: np.random.Generator) -> None:
    cfg = policy.training
    picks = rng.choice(len(replay), size=cfg.replay_batch, replace=False)
    total = policy.params.zeros_like()
    for i in picks:
        x, target = replay[int(i)]
        out, cache = nn.forward(policy.params, x)
        _, dpred = nn.mse_loss(cfg.q_scale * out, target)
        for name, g in nn.backward(policy.params, cache, cfg.q_scale * dpred / cfg.replay_batch).items():
            total[name] += g
    nn.adam_step(policy.params, total, lr=cfg.lr)


@dataclass
class LearningCurve:
    epsilon: list[float] = field(default_factory=list)
    mean_reward: list[float] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)

    def rows(self):
        for i, (e, r, l) in enumerate(zip(self.epsilon, self.mean_reward, self.mean_loss)):
            yield i, e, r, l


def train_policy(policy: SchedulerPolicy, scenario, training: Optional[TrainingConfig] = None) -> tuple[SchedulerPolicy, LearningCurve]:
    """Episodic epsilon-greedy training on fresh copies of ``scenario``'s cluster.

    ``scenario`` needs ``build_cluster(seed)`` and ``make_pods()``.
    """
    if not policy.kind.learned:
        raise ValueError(f"{policy.name} policy is not trainable")
    cfg = training or policy.training
    policy.training = cfg
    rng = np.random.default_rng(cfg.seed)
    replay = deque(maxlen=cfg.replay_capacity) if cfg.replay_capacity > 0 else None
    curve = LearningCurve()
    pods = scenario.make_pods()
    for episode in range(cfg.episodes):
        eps = cfg.epsilon(episode)
        cluster = scenario.build_cluster(cfg.seed + episode)
        rewards, losses = [], []
        for pod in pods:
            decision = schedule_pod(policy, cluster, pod, rng, eps)
            if decision.unschedulable:
                continue
            decision.reward_target = reward_for(policy, decision, cluster)
            rewards.append(decision.reward_target)
            if cfg.train_online:
                losses.append(train_step(policy, decision, cluster, rng=rng, replay=replay))
        curve.epsilon.append(eps)
        curve.mean_reward.append(float(np.mean(rewards)) if rewards else 0.0)
        curve.mean_loss.append(float(np.mean(losses)) if losses else 0.0)
        log.debug("%s episode %d eps=%.3f reward=%.2f loss=%.2f", policy.name, episode, eps,
                  curve.mean_reward[-1], curve.mean_loss[-1])
    return policy, curve
