"""HTTP scheduler extender: /filter and /prioritize over caller-supplied node snapshots.

The service never measures the cluster itself. Each request carries the pod's
demand and a snapshot per node (capacities, liveness, running pods and current
CPU / memory percent); the frozen scorer ranks the nodes from that alone.
Weights are hot-reloaded when the file changes and swapped in atomically, so a
handler always sees one consistent model for the whole request.
"""
from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Optional

from . import nn
from .cluster import UsageModelParams, check_predicates, marginal_cpu_percent
from .features import DistributionContext, NodeFeatures, RewardConfig, normalize
from .harness import CALIBRATED_USAGE
from .schedulers import (
    PolicyKind,
    SchedulerPolicy,
    TrainingConfig,
    distribution_term,
    least_allocated,
    score_features,
)

log = logging.getLogger(__name__)

DEFAULT_LISTEN = "127.0.0.1:8878"
MAX_PRIORITY = 10


class BadRequest(ValueError):
    """Malformed request body (answered with 400)."""


class ModelNotLoaded(RuntimeError):
    """Prioritize called before any model was loaded (answered with 503)."""


@dataclass(frozen=True)
class PodRequest:
    name: str
    cpu_demand_millicores: int
    mem_demand_mib: int


@dataclass(frozen=True)
class NodeSnapshot:
    name: str
    cpu_capacity: int
    mem_capacity: int
    max_pods: int
    ready: bool
    uptime_hours: float
    running_pods: int
    cpu_pct: float
    mem_pct: float


@dataclass(frozen=True)
class ExtenderArgs:
    pod: PodRequest
    nodes: tuple[NodeSnapshot, ...]
    raw_nodes: tuple[dict, ...] = ()


def _field(obj: dict, name: str, kind, where: str):
    if name not in obj:
        raise BadRequest(f"{where}: missing field '{name}'")
    value = obj[name]
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise BadRequest(f"{where}: field '{name}' must be {kind.__name__}")
    return float(value) if kind is float else value


def parse_args(doc: Any) -> ExtenderArgs:
    if not isinstance(doc, dict):
        raise BadRequest("body must be a JSON object")
    pod_doc = doc.get("pod")
    if not isinstance(pod_doc, dict):
        raise BadRequest("missing object 'pod'")
    pod = PodRequest(
        _field(pod_doc, "name", str, "pod"),
        _field(pod_doc, "cpu_demand_millicores", int, "pod"),
        _field(pod_doc, "mem_demand_mib", int, "pod"),
    )
    if pod.cpu_demand_millicores <= 0 or pod.mem_demand_mib <= 0:
        raise BadRequest("pod: demands must be positive")
    raw = doc.get("nodes")
    if not isinstance(raw, list):
        raise BadRequest("missing list 'nodes'")
    nodes = []
    for i, item in enumerate(raw):
        where = f"nodes[{i}]"
        if not isinstance(item, dict):
            raise BadRequest(f"{where}: must be an object")
        node = NodeSnapshot(
            _field(item, "name", str, where),
            _field(item, "cpu_capacity", int, where),
            _field(item, "mem_capacity", int, where),
            _field(item, "max_pods", int, where),
            _field(item, "ready", bool, where),
            _field(item, "uptime_hours", float, where),
            _field(item, "running_pods", int, where),
            _field(item, "cpu_pct", float, where),
            _field(item, "mem_pct", float, where),
        )
        if node.cpu_capacity <= 0 or node.mem_capacity <= 0 or node.max_pods < 1:
            raise BadRequest(f"{where}: capacities must be positive")
        if node.running_pods < 0 or node.uptime_hours < 0:
            raise BadRequest(f"{where}: running_pods and uptime_hours must be non-negative")
        for name in ("cpu_pct", "mem_pct"):
            if not 0.0 <= getattr(node, name) <= 100.0:
                raise BadRequest(f"{where}: {name} must lie in [0, 100]")
        nodes.append(node)
    names = [n.name for n in nodes]
    if len(set(names)) != len(names):
        raise BadRequest("node names must be unique")
    return ExtenderArgs(pod, tuple(nodes), tuple(raw))


def _uncontended(u: float, model: UsageModelParams) -> float:
    """Invert the contention term: the raw percent whose contended value is ``u``."""
    excess = u - model.contention_threshold
    if excess <= 0:
        return u
    a = model.contention_gain / 100.0
    if a == 0:
        return u
    return model.contention_threshold + (-1.0 + math.sqrt(1.0 + 4.0 * a * excess)) / (2.0 * a)


def _contended(r: float, model: UsageModelParams) -> float:
    excess = max(0.0, r - model.contention_threshold)
    return r + model.contention_gain * excess * excess / 100.0


def predict_after(node: NodeSnapshot, pod: PodRequest, model: UsageModelParams) -> tuple[float, float]:
    """Noise-free CPU and memory percent of ``node`` once ``pod`` is added (unclamped)."""
    demand_pct = 100.0 * pod.cpu_demand_millicores / node.cpu_capacity
    raw = _uncontended(node.cpu_pct, model) + marginal_cpu_percent(node.running_pods, demand_pct, model)
    mem = node.mem_pct + 100.0 * pod.mem_demand_mib / node.mem_capacity
    return _contended(raw, model), mem


def filter_snapshot(args: ExtenderArgs, model: UsageModelParams) -> dict:
    survivors, failed = [], {}
    for node, raw in zip(args.nodes, args.raw_nodes or [None] * len(args.nodes)):
        cpu_after, mem_after = predict_after(node, args.pod, model)
        tag = check_predicates(node.ready, node.running_pods, node.max_pods, mem_after, cpu_after)
        if tag is None:
            survivors.append(raw if raw is not None else node.__dict__)
        else:
            failed[node.name] = tag
    return {"nodes": survivors, "failed": failed}


def afterstate_features(node: NodeSnapshot, pod: PodRequest, model: UsageModelParams) -> NodeFeatures:
    cpu_after, mem_after = predict_after(node, pod, model)
    running = node.running_pods + 1
    return NodeFeatures(
        cpu_pct=min(100.0, max(0.0, cpu_after)),
        mem_pct=min(100.0, mem_after),
        pod_util_pct=min(100.0, 100.0 * running / node.max_pods),
        health=1 if node.ready else 0,
        uptime_hours=node.uptime_hours,
        running_pods=running,
        max_pods=max(node.max_pods, running),
    )


def _snapshot_context(policy: SchedulerPolicy, nodes: tuple[NodeSnapshot, ...], i: int) -> DistributionContext:
    # A snapshot does not say which batch a resident pod belongs to, so the
    # running pods stand in for the current batch.
    n = policy.reward_cfg.n_target
    ranked = sorted(range(len(nodes)), key=lambda j: (-nodes[j].running_pods, j))
    hosting = sum(1 for node in nodes if node.running_pods > 0) + (0 if nodes[i].running_pods else 1)
    return DistributionContext(
        nodes_with_batch_pods=hosting,
        candidate_count=len(nodes),
        top_n_ids=frozenset(ranked[:n]),
        target_running_pods=nodes[i].running_pods,
        target_node_id=i,
    )


def raw_scores(policy: SchedulerPolicy, args: ExtenderArgs, model: UsageModelParams) -> list[float]:
    if policy.kind is PolicyKind.RANDOM:
        return [0.0] * len(args.nodes)
    if policy.kind is PolicyKind.DEFAULT:
        return [least_allocated(*predict_after(n, args.pod, model)) for n in args.nodes]
    return [
        score_features(policy, normalize(afterstate_features(node, args.pod, model)))
        + distribution_term(policy, _snapshot_context(policy, args.nodes, i))
        for i, node in enumerate(args.nodes)
    ]


def rescale(raw: list[float]) -> list[int]:
    """Affine map onto 0..10 (max -> 10, min -> 0); all-equal scores all get 10."""
    if not raw:
        return []
    if not all(math.isfinite(s) for s in raw):
        raise ValueError("non-finite raw score")
    lo, hi = min(raw), max(raw)
    if hi == lo:
        return [MAX_PRIORITY] * len(raw)
    return [int(round(MAX_PRIORITY * (s - lo) / (hi - lo))) for s in raw]


@dataclass(frozen=True)
class ModelSnapshot:
    policy: Optional[SchedulerPolicy]
    version: str
    mtime: Optional[float] = None

    @property
    def loaded(self) -> bool:
        return self.policy is not None


EMPTY = ModelSnapshot(None, "none")


class ExtenderService:
    """Request logic, independent of the HTTP transport."""

    def __init__(
        self,
        policy: Optional[str] = None,
        weights: Optional[str | Path] = None,
        usage_model: UsageModelParams = CALIBRATED_USAGE,
        reward_cfg: RewardConfig = RewardConfig(),
        training: TrainingConfig = TrainingConfig(),
    ):
        self.kind = PolicyKind(policy) if policy is not None else None
        self.weights = Path(weights) if weights is not None else None
        self.usage_model = usage_model
        self.reward_cfg = reward_cfg
        self.training = training
        self._snapshot = EMPTY
        self._reload_lock = threading.Lock()
        self._stop = threading.Event()

    @property
    def snapshot(self) -> ModelSnapshot:
        return self._snapshot

    def load(self) -> ModelSnapshot:
        """(Re)load the model; raises on a missing or invalid weights file."""
        with self._reload_lock:
            if self.kind is None:
                raise ValueError("no policy configured")
            if not self.kind.learned:
                snap = ModelSnapshot(SchedulerPolicy(self.kind, None, self.reward_cfg, self.training), "builtin")
            else:
                if self.weights is None:
                    raise FileNotFoundError(f"{self.kind.value} needs a weights file")
                mtime = self.weights.stat().st_mtime_ns
                store = nn.load_weights(self.weights)
                policy = SchedulerPolicy(self.kind, store, self.reward_cfg, self.training)
                snap = ModelSnapshot(policy, store.version(), mtime)
            self._snapshot = snap  # single reference assignment: the atomic swap
            return snap

    def maybe_reload(self) -> bool:
        """Reload if the weights file changed; a bad file keeps the old model."""
        if self.weights is None or self.kind is None or not self.kind.learned:
            return False
        try:
            mtime = self.weights.stat().st_mtime_ns
        except OSError:
            return False
        if mtime == self._snapshot.mtime:
            return False
        try:
            self.load()
        except (OSError, ValueError) as e:
            log.warning("weights reload failed, keeping version %s: %s", self._snapshot.version, e)
            return False
        log.info("reloaded weights version %s", self._snapshot.version)
        return True

    def watch(self, interval: float = 1.0) -> threading.Thread:
        def loop():
            while not self._stop.wait(interval):
                self.maybe_reload()

        t = threading.Thread(target=loop, name="weights-watcher", daemon=True)
        t.start()
        return t

    def stop(self) -> None:
        self._stop.set()

    def health(self) -> dict:
        snap = self._snapshot
        return {
            "status": "ok" if snap.loaded else "degraded",
            "policy": snap.policy.name if snap.loaded else "none",
            "weights_version": snap.version,
        }

    def filter(self, doc: Any) -> dict:
        return filter_snapshot(parse_args(doc), self.usage_model)

    def prioritize(self, doc: Any) -> list[dict]:
        snap = self._snapshot  # one consistent model for the whole request
        args = parse_args(doc)
        if not snap.loaded:
            raise ModelNotLoaded()
        raw = raw_scores(snap.policy, args, self.usage_model)
        return [{"host": n.name, "score": s} for n, s in zip(args.nodes, rescale(raw))]

    def handle(self, method: str, path: str, body: bytes = b"") -> tuple[int, Any]:
        """Dispatch one request; returns (status, JSON-serialisable body)."""
        route = path.split("?", 1)[0].rstrip("/") or "/"
        if method == "GET" and route == "/healthz":
            return HTTPStatus.OK, self.health()
        if method != "POST" or route not in ("/filter", "/prioritize"):
            return HTTPStatus.NOT_FOUND, {"error": f"no route for {method} {route}"}
        try:
            doc = json.loads(body.decode("utf-8")) if body else None
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            return HTTPStatus.BAD_REQUEST, {"error": f"invalid JSON: {e}"}
        try:
            if route == "/filter":
                return HTTPStatus.OK, self.filter(doc)
            return HTTPStatus.OK, self.prioritize(doc)
        except BadRequest as e:
            return HTTPStatus.BAD_REQUEST, {"error": str(e)}
        except ModelNotLoaded:
            return HTTPStatus.SERVICE_UNAVAILABLE, {"error": "no model loaded"}


def _top_host(payload: Any) -> str:
    if isinstance(payload, list) and payload:
        return max(payload, key=lambda p: p["score"])["host"]
    if isinstance(payload, dict) and isinstance(payload.get("nodes"), list) and payload["nodes"]:
        return payload["nodes"][0].get("name", "-")
    return "-"


def make_handler(service: ExtenderService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _serve(self, method: str) -> None:
            start = time.perf_counter()
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length > 0 else b""
            status, payload = service.handle(method, self.path, body)
            out = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)
            ms = 1000.0 * (time.perf_counter() - start)
            log.info("%s %s %d %.2fms top=%s", method, self.path, int(status), ms, _top_host(payload))

        def do_GET(self):
            self._serve("GET")

        def do_POST(self):
            self._serve("POST")

        def log_message(self, fmt, *args):  # replaced by the one-line log above
            pass

    return Handler


def parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {value!r}")
    return host or "127.0.0.1", int(port)


def listen_address(flag: Optional[str]) -> str:
    return flag or os.environ.get("SDQN_LISTEN") or DEFAULT_LISTEN


class ExtenderServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128  # the stdlib default of 5 resets bursts of concurrent clients


def make_server(service: ExtenderService, listen: str) -> ThreadingHTTPServer:
    """Bind the HTTP server (raises OSError if the port is taken)."""
    return ExtenderServer(parse_listen(listen), make_handler(service))
