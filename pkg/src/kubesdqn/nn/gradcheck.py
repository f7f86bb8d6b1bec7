from __future__ import annotations

import numpy as np

from .core import backward, forward
from .params import N_FEATURES, ParamStore, ScorerKind, init_params

FD_STEP = 1e-5
ABS_FLOOR = 1e-7


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_grads(store: ParamStore, x, h: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central differences of the scalar output w.r.t. every parameter element."""
    out = {}
    for name, p in store.params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp, _ = forward(store, x)
            flat[i] = orig - h
            fm, _ = forward(store, x)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def check_gradients(kind: ScorerKind | str, seed: int, x=None) -> float:
    """Max relative error between backward() and finite differences at a random point."""
    store = init_params(kind, seed)
    if x is None:
        x = np.random.default_rng(seed + 7919).uniform(0.0, 1.0, N_FEATURES)
    _, cache = forward(store, x)
    analytic = backward(store, cache, 1.0)
    numeric = numeric_grads(store, x)
    return max(float(relative_error(analytic[k], numeric[k]).max()) for k in analytic)
