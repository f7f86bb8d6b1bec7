"""Grid-search fit of the usage model to measured (pod distribution, average CPU) pairs."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cluster import UsageModelParams

DEFAULT_GRID = {
    "idle_pct": np.round(np.arange(0.0, 10.0 + 1e-9, 0.5), 6),
    "activation_pct": np.round(np.arange(0.0, 30.0 + 1e-9, 1.0), 6),
    "colocation_discount": np.round(np.arange(0.0, 0.2 + 1e-9, 0.01), 6),
    "cpu_demand": np.arange(20, 401, 10),
}


@dataclass(frozen=True)
class CalibrationTarget:
    distribution: tuple[int, ...]
    avg_cpu: float
    source: str = ""
    suspect: bool = False


@dataclass(frozen=True)
class CalibrationResult:
    params: UsageModelParams
    cpu_demand: int
    rmse: float
    predictions: tuple[float, ...]


def load_targets(path: Optional[str | Path] = None, include_suspect: bool = False) -> list[CalibrationTarget]:
    """Read a targets JSON file; defaults to the bundled measurements."""
    if path is None:
        text = resources.files("kubesdqn.data").joinpath("targets.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text) if text.strip() else {}
    targets = [
        CalibrationTarget(tuple(int(c) for c in row["distribution"]), float(row["avg_cpu"]),
                          row.get("source", ""), bool(row.get("suspect", False)))
        for row in doc.get("targets", [])
    ]
    return [t for t in targets if include_suspect or not t.suspect]


def _geometric_prefix(keep: float, cap: int, max_pods: int) -> np.ndarray:
    """S[n] = sum_{k<n} keep**min(k, cap), for n = 0..max_pods."""
    weights = keep ** np.minimum(np.arange(max_pods), cap)
    return np.concatenate([[0.0], np.cumsum(weights)])


def model_averages(
    distributions: Sequence[Sequence[int]],
    capacities: Sequence[int],
    cpu_demand: float,
    params: UsageModelParams,
) -> np.ndarray:
    """Noise-free cluster average CPU for each distribution (vectorised oracle-free path)."""
    counts = np.asarray(distributions, dtype=int)
    caps = np.asarray(capacities, dtype=float)
    prefix = _geometric_prefix(1.0 - params.colocation_discount, params.discount_cap, int(counts.max(initial=0)) + 1)
    per_node = params.idle_pct + params.activation_pct * (counts > 0) + (100.0 * cpu_demand / caps) * prefix[counts]
    excess = np.maximum(0.0, per_node - params.contention_threshold)
    per_node = np.clip(per_node + params.contention_gain * excess**2 / 100.0, 0.0, 100.0)
    return per_node.mean(axis=1)


def calibrate_usage_model(
    targets: Sequence[CalibrationTarget],
    capacities: Sequence[int],
    base: UsageModelParams = UsageModelParams(),
    grid: Optional[dict] = None,
) -> CalibrationResult:
    """Exhaustive search minimising RMSE between model and target averages.

    The grid is scanned in (idle, activation, discount, demand) lexicographic
    order and the first minimum wins, so equal-RMSE points resolve identically
    on every run. Parameters outside the grid are taken from ``base``.
    """
    if not targets:
        raise ValueError("no calibration targets")
    grid = grid or DEFAULT_GRID
    idle = np.asarray(grid["idle_pct"], dtype=float)
    act = np.asarray(grid["activation_pct"], dtype=float)
    disc = np.asarray(grid["colocation_discount"], dtype=float)
    demand = np.asarray(grid["cpu_demand"], dtype=float)
    counts = np.array([t.distribution for t in targets], dtype=int)
    if counts.shape[1] != len(capacities):
        raise ValueError("target distributions must have one count per node")
    y = np.array([t.avg_cpu for t in targets])
    caps = np.asarray(capacities, dtype=float)
    active = (counts > 0).astype(float)

    rmse = np.empty((idle.size, act.size, disc.size, demand.size))
    for k, delta in enumerate(disc):
        prefix = _geometric_prefix(1.0 - delta, base.discount_cap, int(counts.max()) + 1)
        load = (100.0 / caps) * prefix[counts]  # per millicore, shape (targets, nodes)
        per_node = (
            idle[:, None, None, None, None]
            + act[None, :, None, None, None] * active[None, None, None]
            + demand[None, None, :, None, None] * load[None, None, None]
        )  # (idle, act, demand, targets, nodes)
        excess = np.maximum(0.0, per_node - base.contention_threshold)
        per_node = np.clip(per_node + base.contention_gain * excess**2 / 100.0, 0.0, 100.0)
        err = per_node.mean(-1) - y
        rmse[:, :, k, :] = np.sqrt((err**2).mean(-1))
    i, j, k, m = np.unravel_index(int(np.argmin(rmse)), rmse.shape)
    params = replace(
        base,
        idle_pct=float(idle[i]),
        activation_pct=float(act[j]),
        colocation_discount=float(disc[k]),
    )
    preds = model_averages(counts, capacities, float(demand[m]), params)
    return CalibrationResult(params, int(demand[m]), float(rmse[i, j, k, m]), tuple(float(p) for p in preds))
