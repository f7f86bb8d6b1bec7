"""Parameter containers, seeded initialisation and the SDQN-W1 weights file."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

N_FEATURES = 6
HIDDEN = 32
D_MODEL = 32
N_HEADS = 4
FF_WIDTH = 64

WEIGHTS_MAGIC = "SDQN-W1"


class ScorerKind(str, Enum):
    MLP = "mlp"
    LSTM = "lstm"
    TRANSFORMER = "transformer"


@dataclass
class ParamStore:
    """Named float64 arrays plus Adam moments and step counter."""

    kind: ScorerKind
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.kind = ScorerKind(self.kind)
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))
            if self.m[name].shape != p.shape or self.v[name].shape != p.shape:
                raise ValueError(f"moment shape mismatch for {name}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ParamStore":
        return ParamStore(
            self.kind,
            {k: p.copy() for k, p in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(p) for k, p in self.params.items()}

    def version(self) -> str:
        h = hashlib.sha256(self.kind.value.encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()[:12]


# (name, shape, fan_in); fan_in None marks a layer-norm gain (ones) or bias that stays zero.
def _layout(kind: ScorerKind) -> list[tuple[str, tuple[int, ...], int | None, str]]:
    if kind is ScorerKind.MLP:
        return [
            ("W1", (HIDDEN, N_FEATURES), N_FEATURES, "uniform"),
            ("b1", (HIDDEN,), N_FEATURES, "uniform"),
            ("w2", (HIDDEN,), HIDDEN, "uniform"),
            ("b2", (1,), HIDDEN, "uniform"),
        ]
    if kind is ScorerKind.LSTM:
        fan = N_FEATURES + HIDDEN
        return [
            ("W", (4 * HIDDEN, fan), fan, "uniform"),
            ("b", (4 * HIDDEN,), fan, "uniform"),
            ("w_out", (HIDDEN,), HIDDEN, "uniform"),
            ("b_out", (1,), HIDDEN, "uniform"),
        ]
    if kind is ScorerKind.TRANSFORMER:
        layout = [
            ("Wp", (D_MODEL, N_FEATURES), N_FEATURES, "uniform"),
            ("bp", (D_MODEL,), N_FEATURES, "uniform"),
        ]
        for proj in ("q", "k", "v", "o"):
            layout.append((f"W{proj}", (D_MODEL, D_MODEL), D_MODEL, "uniform"))
            layout.append((f"b{proj}", (D_MODEL,), D_MODEL, "uniform"))
        layout += [
            ("ln1_g", (D_MODEL,), None, "ones"),
            ("ln1_b", (D_MODEL,), None, "zeros"),
            ("Wf1", (FF_WIDTH, D_MODEL), D_MODEL, "uniform"),
            ("bf1", (FF_WIDTH,), D_MODEL, "uniform"),
            ("Wf2", (D_MODEL, FF_WIDTH), FF_WIDTH, "uniform"),
            ("bf2", (D_MODEL,), FF_WIDTH, "uniform"),
            ("ln2_g", (D_MODEL,), None, "ones"),
            ("ln2_b", (D_MODEL,), None, "zeros"),
            ("w_out", (D_MODEL,), D_MODEL, "uniform"),
            ("b_out", (1,), D_MODEL, "uniform"),
        ]
        return layout
    raise ValueError(f"unknown scorer kind: {kind}")


def init_bounds(kind: ScorerKind | str) -> dict[str, float]:
    """Per-array absolute bound implied by the initialisation scheme."""
    out = {}
    for name, _, fan_in, how in _layout(ScorerKind(kind)):
        out[name] = 1.0 / np.sqrt(fan_in) if how == "uniform" else (1.0 if how == "ones" else 0.0)
    return out


def init_params(kind: ScorerKind | str, seed: int) -> ParamStore:
    kind = ScorerKind(kind)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in, how in _layout(kind):
        if how == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif how == "ones":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return ParamStore(kind, params)


def zero_params(kind: ScorerKind | str) -> ParamStore:
    kind = ScorerKind(kind)
    return ParamStore(kind, {name: np.zeros(shape) for name, shape, _, _ in _layout(kind)})


def expected_param_count(kind: ScorerKind | str) -> int:
    return int(sum(np.prod(shape) for _, shape, _, _ in _layout(ScorerKind(kind))))


def save_weights(store: ParamStore, path: str | Path) -> str:
    """Write the SDQN-W1 text format and return the weights version.

    Layout::

        SDQN-W1
        kind <mlp|lstm|transformer>
        version <12 hex digits of sha256 over kind, names and little-endian data>
        arrays <count>
        <name> <dim> [<dim> ...]
        <row-major values, repr() precision, space separated>
        ...

    Adam moments are not persisted; a loaded store starts fresh.
    """
    version = store.version()
    lines = [WEIGHTS_MAGIC, f"kind {store.kind.value}", f"version {version}", f"arrays {len(store.params)}"]
    for name in sorted(store.params):
        arr = store.params[name]
        lines.append(" ".join([name, *map(str, arr.shape)]))
        lines.append(" ".join(repr(float(x)) for x in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")
    return version


def load_weights(path: str | Path) -> ParamStore:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not an {WEIGHTS_MAGIC} weights file")
    try:
        kind = ScorerKind(text[1].split()[1])
        version = text[2].split()[1]
        n = int(text[3].split()[1])
        params = {}
        for i in range(n):
            header = text[4 + 2 * i].split()
            shape = tuple(int(d) for d in header[1:])
            values = np.array([float(x) for x in text[5 + 2 * i].split()], dtype=np.float64)
            params[header[0]] = values.reshape(shape)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed weights file ({exc})") from None
    expected = {name: shape for name, shape, _, _ in _layout(kind)}
    got = {name: p.shape for name, p in params.items()}
    if got != expected:
        raise ValueError(f"{path}: arrays do not match the {kind.value} layout")
    store = ParamStore(kind, params)
    if store.version() != version:
        raise ValueError(f"{path}: version header {version} does not match contents")
    return store


def read_weights_version(path: str | Path) -> str:
    lines = Path(path).read_text().splitlines()[:3]
    if len(lines) < 3 or lines[0].strip() != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not an {WEIGHTS_MAGIC} weights file")
    return lines[2].split()[1]
