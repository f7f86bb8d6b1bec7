"""One post-norm transformer encoder layer over a (seq, 6) input.

Embedding 6 -> d_model, multi-head self-attention with residual and layer
norm, a 2-layer ReLU feed-forward block with residual and layer norm, and an
affine head applied to the last position. The scheduler always feeds a
single position, but the code handles any sequence length.
"""
import numpy as np

from .params import D_MODEL, N_HEADS

LN_EPS = 1e-5
HEAD_DIM = D_MODEL // N_HEADS


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, (dy * xhat).sum(0), dy.sum(0)


def _heads(a):
    # (L, D) -> (H, L, hd)
    return a.reshape(a.shape[0], N_HEADS, HEAD_DIM).transpose(1, 0, 2)


def _merge(a):
    return a.transpose(1, 0, 2).reshape(a.shape[1], D_MODEL)


def forward(p, x):
    x = np.atleast_2d(x)
    e = x @ p["Wp"].T + p["bp"]
    q = e @ p["Wq"].T + p["bq"]
    k = e @ p["Wk"].T + p["bk"]
    v = e @ p["Wv"].T + p["bv"]
    qh, kh, vh = _heads(q), _heads(k), _heads(v)
    s = qh @ kh.transpose(0, 2, 1) / np.sqrt(HEAD_DIM)
    s = s - s.max(-1, keepdims=True)
    w = np.exp(s)
    attn = w / w.sum(-1, keepdims=True)
    ctx = _merge(attn @ vh)
    a = ctx @ p["Wo"].T + p["bo"]
    n1, ln1 = _layer_norm(e + a, p["ln1_g"], p["ln1_b"])
    pre = n1 @ p["Wf1"].T + p["bf1"]
    hid = np.maximum(pre, 0.0)
    f = hid @ p["Wf2"].T + p["bf2"]
    n2, ln2 = _layer_norm(n1 + f, p["ln2_g"], p["ln2_b"])
    last = n2[-1]
    out = float(p["w_out"] @ last + p["b_out"][0])
    cache = dict(x=x, e=e, qh=qh, kh=kh, vh=vh, attn=attn, ctx=ctx, n1=n1, ln1=ln1,
                 pre=pre, hid=hid, ln2=ln2, last=last)
    return out, cache


def backward(p, cache, upstream):
    g = {}
    L = cache["x"].shape[0]
    g["w_out"] = upstream * cache["last"]
    g["b_out"] = np.array([upstream])
    dn2 = np.zeros((L, D_MODEL))
    dn2[-1] = upstream * p["w_out"]

    dr2, g["ln2_g"], g["ln2_b"] = _layer_norm_back(dn2, p["ln2_g"], cache["ln2"])
    df = dr2
    g["Wf2"] = df.T @ cache["hid"]
    g["bf2"] = df.sum(0)
    dpre = (df @ p["Wf2"]) * (cache["pre"] > 0)
    g["Wf1"] = dpre.T @ cache["n1"]
    g["bf1"] = dpre.sum(0)
    dn1 = dr2 + dpre @ p["Wf1"]

    dr1, g["ln1_g"], g["ln1_b"] = _layer_norm_back(dn1, p["ln1_g"], cache["ln1"])
    da = dr1
    g["Wo"] = da.T @ cache["ctx"]
    g["bo"] = da.sum(0)
    dctx = _heads(da @ p["Wo"])
    attn, qh, kh, vh = cache["attn"], cache["qh"], cache["kh"], cache["vh"]
    dattn = dctx @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ dctx
    ds = attn * (dattn - (dattn * attn).sum(-1, keepdims=True)) / np.sqrt(HEAD_DIM)
    dqh = ds @ kh
    dkh = ds.transpose(0, 2, 1) @ qh
    de = dr1.copy()
    e = cache["e"]
    for name, dh in (("q", dqh), ("k", dkh), ("v", dvh)):
        d = _merge(dh)
        g[f"W{name}"] = d.T @ e
        g[f"b{name}"] = d.sum(0)
        de += d @ p[f"W{name}"]
    g["Wp"] = de.T @ cache["x"]
    g["bp"] = de.sum(0)
    return g
