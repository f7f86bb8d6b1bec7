"""Strict YAML scenario configuration.

Every section is optional and falls back to the built-in defaults; unknown
keys and wrongly typed values are rejected with the offending line number so
that a mistyped reward threshold cannot silently fall back to its default.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Optional

import yaml

from .cluster import UsageModelParams
from .features import RewardConfig
from .harness import NodeConfig, Scenario
from .schedulers import TrainingConfig

TOP_LEVEL = ("nodes", "batch", "usage_model", "reward", "training", "trials", "base_seed")
BATCH_KEYS = {"count": "batch_count", "cpu_demand": "cpu_demand", "mem_demand": "mem_demand", "batch_id": "batch_id"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _pairs(node: yaml.Node, what: str, source: str) -> list[tuple[str, yaml.Node, int]]:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{what} must be a mapping", _line(node), source)
    out = []
    seen = set()
    for key_node, value_node in node.value:
        key = key_node.value
        if key in seen:
            raise ConfigError(f"duplicate key '{key}' in {what}", _line(key_node), source)
        seen.add(key)
        out.append((key, value_node, _line(key_node)))
    return out


def _scalar(node: yaml.Node, loader: yaml.SafeLoader, expected: type, name: str, source: str) -> Any:
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{name} must be a scalar", _line(node), source)
    value = loader.construct_object(node, deep=True)
    ok = isinstance(value, expected) and not (expected is not bool and isinstance(value, bool))
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        value, ok = float(value), True
    if not ok:
        raise ConfigError(f"{name} must be {expected.__name__}, got {value!r}", _line(node), source)
    return value


def _section(node, loader, cls, what: str, source: str, rename: Optional[dict] = None) -> dict:
    """Validate a mapping against the fields of dataclass ``cls``."""
    types = typing.get_type_hints(cls)
    rename = rename or {f.name: f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, value_node, line in _pairs(node, what, source):
        if key not in rename:
            raise ConfigError(f"unknown key '{key}' in {what}", line, source)
        field = rename[key]
        values[field] = _scalar(value_node, loader, types[field], f"{what}.{key}", source)
    return values


def _build(cls, values: dict, node: yaml.Node, what: str, source: str):
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what}: {e}", _line(node), source) from None


def parse_config(text: str, source: str = "<config>") -> Scenario:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark else None
        raise ConfigError(f"malformed YAML: {e.problem}", line, source) from None
    finally:
        loader.dispose()
    if root is None:
        return Scenario()

    kwargs: dict[str, Any] = {}
    for key, node, line in _pairs(root, "config", source):
        if key == "nodes":
            if not isinstance(node, yaml.SequenceNode) or not node.value:
                raise ConfigError("nodes must be a non-empty list", line, source)
            kwargs["nodes"] = [
                _build(NodeConfig, _section(item, loader, NodeConfig, f"nodes[{i}]", source), item, f"nodes[{i}]", source)
                for i, item in enumerate(node.value)
            ]
        elif key == "batch":
            kwargs.update(_section(node, loader, Scenario, "batch", source, rename=BATCH_KEYS))
            for name in ("batch_count", "cpu_demand", "mem_demand"):
                if kwargs.get(name, 1) < 1:
                    raise ConfigError(f"batch values must be positive, got {name}={kwargs[name]}", line, source)
        elif key == "usage_model":
            kwargs["usage_model"] = _build(
                UsageModelParams, _section(node, loader, UsageModelParams, key, source), node, key, source)
        elif key == "reward":
            kwargs["reward"] = _build(RewardConfig, _section(node, loader, RewardConfig, key, source), node, key, source)
        elif key == "training":
            kwargs["training"] = _build(
                TrainingConfig, _section(node, loader, TrainingConfig, key, source), node, key, source)
        elif key in ("trials", "base_seed"):
            kwargs[key] = _scalar(node, loader, int, key, source)
            if key == "trials" and kwargs[key] < 1:
                raise ConfigError("trials must be >= 1", line, source)
        else:
            raise ConfigError(f"unknown key '{key}' (expected one of {', '.join(TOP_LEVEL)})", line, source)
    return _build(Scenario, kwargs, root, "scenario", source)


def load_config(path: Optional[str | Path]) -> Scenario:
    """Read a config file; ``None`` gives the default scenario."""
    if path is None:
        return Scenario()
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "nodes": [dataclasses.asdict(n) for n in scenario.nodes],
        "batch": {
            "count": scenario.batch_count,
            "cpu_demand": scenario.cpu_demand,
            "mem_demand": scenario.mem_demand,
            "batch_id": scenario.batch_id,
        },
        "usage_model": dataclasses.asdict(scenario.usage_model),
        "reward": scenario.reward.to_dict(),
        "training": dataclasses.asdict(scenario.training),
        "trials": scenario.trials,
        "base_seed": scenario.base_seed,
    }


def dump_config(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False)
