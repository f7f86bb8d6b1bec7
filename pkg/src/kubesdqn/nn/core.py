"""Dispatch, loss and optimiser shared by all scorer kinds."""
from __future__ import annotations

import numpy as np

from . import lstm, mlp, transformer
from .params import N_FEATURES, ParamStore, ScorerKind

_MODULES = {ScorerKind.MLP: mlp, ScorerKind.LSTM: lstm, ScorerKind.TRANSFORMER: transformer}


def forward(params: ParamStore, x) -> tuple[float, dict]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != N_FEATURES or not np.all(np.isfinite(x)):
        raise ValueError("invalid input")
    if params.kind is not ScorerKind.TRANSFORMER and x.ndim != 1:
        raise ValueError("invalid input")
    out, cache = _MODULES[params.kind].forward(params.params, x)
    cache["kind"] = params.kind
    return out, cache


def backward(params: ParamStore, cache: dict, upstream: float) -> dict[str, np.ndarray]:
    if cache.get("kind") is not params.kind:
        raise ValueError("cache does not come from a forward pass of this scorer kind")
    grads = _MODULES[params.kind].backward(params.params, cache, float(upstream))
    for name, p in params.params.items():
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
    return grads


def mse_loss(pred: float, target: float) -> tuple[float, float]:
    diff = pred - target
    return diff * diff, 2.0 * diff


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Bias-corrected Adam update applied in place; returns the store."""
    if set(grads) != set(store.params):
        raise ValueError("gradient names do not match parameters")
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def fit_step(store: ParamStore, x, target: float, lr: float = 0.001, scale: float = 1.0) -> float:
    """One regression step of ``scale * f(x)`` towards ``target``; returns the loss before the step."""
    out, cache = forward(store, x)
    loss, dpred = mse_loss(scale * out, target)
    adam_step(store, backward(store, cache, scale * dpred), lr=lr)
    return loss
