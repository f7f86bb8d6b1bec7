"""Single LSTM cell step from a zero state, followed by an affine 32 -> 1 head.

Gate rows in ``W`` are stacked as input, forget, candidate, output.
"""
import numpy as np

from .params import HIDDEN


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(p, x, h0=None, c0=None):
    h0 = np.zeros(HIDDEN) if h0 is None else h0
    c0 = np.zeros(HIDDEN) if c0 is None else c0
    xh = np.concatenate([x, h0])
    z = p["W"] @ xh + p["b"]
    zi, zf, zg, zo = np.split(z, 4)
    i, f, o = _sigmoid(zi), _sigmoid(zf), _sigmoid(zo)
    g = np.tanh(zg)
    c = f * c0 + i * g
    tc = np.tanh(c)
    h = o * tc
    out = float(p["w_out"] @ h + p["b_out"][0])
    cache = {"xh": xh, "c0": c0, "i": i, "f": f, "g": g, "o": o, "tc": tc, "h": h}
    return out, cache


def backward(p, cache, upstream):
    i, f, g, o, tc = cache["i"], cache["f"], cache["g"], cache["o"], cache["tc"]
    dh = upstream * p["w_out"]
    do = dh * tc
    dc = dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * cache["c0"]
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)])
    return {
        "W": np.outer(dz, cache["xh"]),
        "b": dz,
        "w_out": upstream * cache["h"],
        "b_out": np.array([upstream]),
    }
