"""6 -> 32 -> 1 value network with a ReLU hidden layer."""
import numpy as np


def forward(p, x):
    pre = p["W1"] @ x + p["b1"]
    h = np.maximum(pre, 0.0)
    out = float(p["w2"] @ h + p["b2"][0])
    return out, {"x": x, "pre": pre, "h": h}


def backward(p, cache, upstream):
    dh = upstream * p["w2"]
    dpre = dh * (cache["pre"] > 0)
    return {
        "W1": np.outer(dpre, cache["x"]),
        "b1": dpre,
        "w2": upstream * cache["h"],
        "b2": np.array([upstream]),
    }
