import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kubesdqn import nn
from kubesdqn.features import DistributionContext, NodeFeatures, normalize, reward_sdqn
from kubesdqn.nn import ScorerKind

KINDS = list(ScorerKind)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def layer_norm(v, g, b, eps=1e-5):
    return (v - v.mean()) / np.sqrt(v.var() + eps) * g + b


def oracle_forward(kind, p, x):
    """Straight-line reference implementations for a single position."""
    if kind is ScorerKind.MLP:
        return float(p["w2"] @ np.maximum(p["W1"] @ x + p["b1"], 0) + p["b2"][0])
    if kind is ScorerKind.LSTM:
        z = p["W"][:, :6] @ x + p["b"]  # zero previous hidden state
        i, f, g, o = sigmoid(z[:32]), sigmoid(z[32:64]), np.tanh(z[64:96]), sigmoid(z[96:])
        c = i * g  # zero previous cell state
        return float(p["w_out"] @ (o * np.tanh(c)) + p["b_out"][0])
    e = p["Wp"] @ x + p["bp"]
    # softmax over one position is 1, so attention returns the value projection
    a = p["Wo"] @ (p["Wv"] @ e + p["bv"]) + p["bo"]
    n1 = layer_norm(e + a, p["ln1_g"], p["ln1_b"])
    f = p["Wf2"] @ np.maximum(p["Wf1"] @ n1 + p["bf1"], 0) + p["bf2"]
    n2 = layer_norm(n1 + f, p["ln2_g"], p["ln2_b"])
    return float(p["w_out"] @ n2 + p["b_out"][0])


def analytic_count(kind):
    d, h, ff = 32, 32, 64
    if kind is ScorerKind.MLP:
        return 6 * h + h + h + 1
    if kind is ScorerKind.LSTM:
        return 4 * (h * (6 + h) + h) + h + 1
    return (6 * d + d) + 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d + d + 1


@pytest.mark.parametrize("kind", KINDS)
def test_param_counts(kind):
    assert nn.init_params(kind, 0).count() == analytic_count(kind) == nn.expected_param_count(kind)


def test_param_count_values():
    assert analytic_count(ScorerKind.MLP) == 257
    assert analytic_count(ScorerKind.LSTM) == 5025


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=20, deadline=None)
@given(x=st.lists(st.floats(-2, 2), min_size=6, max_size=6), seed=st.integers(0, 1000))
def test_forward_matches_reference(kind, x, seed):
    store = nn.init_params(kind, seed)
    x = np.array(x)
    out, _ = nn.forward(store, x)
    assert out == pytest.approx(oracle_forward(kind, store.params, x), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_zero_network_outputs_zero(kind):
    out, _ = nn.forward(nn.zero_params(kind), np.ones(6))
    assert out == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_output_bias_gradient_and_zero_upstream(kind):
    store = nn.init_params(kind, 3)
    _, cache = nn.forward(store, np.linspace(0, 1, 6))
    key = "b2" if kind is ScorerKind.MLP else "b_out"
    assert nn.backward(store, cache, 1.0)[key][0] == 1.0
    assert all(not g.any() for g in nn.backward(store, cache, 0.0).values())


@pytest.mark.parametrize("kind", KINDS)
def test_gradcheck_single_seed(kind):
    assert nn.check_gradients(kind, 0) < 1e-4


def test_gradcheck_against_independent_differences():
    # independent central differences through the reference forward
    store = nn.init_params(ScorerKind.MLP, 5)
    x = np.linspace(0.1, 0.9, 6)
    _, cache = nn.forward(store, x)
    grads = nn.backward(store, cache, 1.0)
    h = 1e-6
    for name, p in store.params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = oracle_forward(ScorerKind.MLP, store.params, x)
            p[idx] = orig - h
            down = oracle_forward(ScorerKind.MLP, store.params, x)
            p[idx] = orig
            assert grads[name][idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-7)


def test_transformer_gradcheck_multi_position():
    store = nn.init_params(ScorerKind.TRANSFORMER, 4)
    x = np.random.default_rng(4).uniform(0, 1, (3, 6))
    out, cache = nn.forward(store, x)
    assert cache["attn"].shape == (4, 3, 3)
    analytic = nn.backward(store, cache, 1.0)
    numeric = nn.numeric_grads(store, x)
    for k in analytic:
        a, n = analytic[k], numeric[k]
        # key/query gradients can be ~1e-7, where difference round-off (~1e-11) dominates
        big = np.maximum(np.abs(a), np.abs(n)) >= 1e-6
        assert np.all(nn.relative_error(a[big], n[big]) < 1e-4)
        assert np.all(np.abs(a[~big] - n[~big]) < 1e-9)


def test_singleton_attention_is_one():
    _, cache = nn.forward(nn.init_params(ScorerKind.TRANSFORMER, 1), np.ones(6))
    assert np.all(cache["attn"] == 1.0)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_is_pure(kind):
    store = nn.init_params(kind, 9)
    before = {k: v.copy() for k, v in store.params.items()}
    x = np.linspace(0, 1, 6)
    assert nn.forward(store, x)[0] == nn.forward(store, x)[0]
    assert all(np.array_equal(before[k], store.params[k]) for k in before)


@pytest.mark.parametrize("bad", [np.array([np.nan, 0, 0, 0, 0, 0]), np.zeros(5), np.array([np.inf] * 6)])
def test_invalid_input_rejected(bad):
    with pytest.raises(ValueError, match="invalid input"):
        nn.forward(nn.init_params(ScorerKind.MLP, 0), bad)


def test_backward_rejects_foreign_cache():
    mlp = nn.init_params(ScorerKind.MLP, 0)
    lstm = nn.init_params(ScorerKind.LSTM, 0)
    _, cache = nn.forward(mlp, np.zeros(6))
    with pytest.raises(ValueError):
        nn.backward(lstm, cache, 1.0)


def test_mse_examples():
    assert nn.mse_loss(3, 3) == (0, 0)
    assert nn.mse_loss(5, 3) == (4, 4)
    assert nn.mse_loss(0, -2) == (4, 4)


def test_adam_first_step():
    store = nn.init_params(ScorerKind.MLP, 0)
    before = store.params["b2"].copy()
    grads = store.zeros_like()
    grads["b2"][:] = 1.0
    nn.adam_step(store, grads)
    assert store.params["b2"][0] - before[0] == pytest.approx(-0.001, abs=1e-6)
    assert store.step == 1


def test_adam_zero_grads_and_shape_errors():
    store = nn.init_params(ScorerKind.MLP, 0)
    before = store.copy()
    nn.adam_step(store, store.zeros_like())
    assert store.step == 1
    assert all(np.array_equal(before.params[k], store.params[k]) for k in store.params)
    bad = store.zeros_like()
    bad["W1"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        nn.adam_step(store, bad)


def test_adam_deterministic():
    a, b = nn.init_params(ScorerKind.LSTM, 2), nn.init_params(ScorerKind.LSTM, 2)
    x = np.linspace(0, 1, 6)
    for _ in range(2):
        nn.fit_step(a, x, 1.0)
        nn.fit_step(b, x, 1.0)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


@pytest.mark.parametrize("kind", KINDS)
def test_init_seeding_and_bounds(kind):
    a, b, c = nn.init_params(kind, 1), nn.init_params(kind, 1), nn.init_params(kind, 2)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)
    bounds = nn.init_bounds(kind)
    for name, p in a.params.items():
        if name.endswith("_g"):
            assert np.all(p == 1.0)
        else:
            assert np.all(np.abs(p) <= bounds[name])


def reward_batch(n=32, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for _ in range(n):
        f = NodeFeatures(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 100), int(rng.integers(0, 2)),
                         rng.uniform(0, 72), int(rng.integers(0, 110)))
        xs.append(normalize(f))
        ys.append(reward_sdqn(f, DistributionContext(1, 4)))
    return np.array(xs), np.array(ys)


@pytest.mark.parametrize("kind", KINDS)
def test_batch_training_reduces_loss(kind):
    """500 full-batch Adam steps on 32 (features, reward) pairs cut the loss by 90%."""
    xs, ys = reward_batch()
    store = nn.init_params(kind, 0)
    scale = 100.0  # rewards are O(100) points

    def step():
        total, loss = store.zeros_like(), 0.0
        for x, y in zip(xs, ys):
            out, cache = nn.forward(store, x)
            l, d = nn.mse_loss(scale * out, y)
            loss += l / len(xs)
            for k, g in nn.backward(store, cache, scale * d / len(xs)).items():
                total[k] += g
        nn.adam_step(store, total)
        return loss

    initial = step()
    for _ in range(498):
        step()
    final = step()
    assert final <= 0.1 * initial


@pytest.mark.parametrize("kind", KINDS)
def test_weights_round_trip(kind, tmp_path):
    store = nn.init_params(kind, 7)
    path = tmp_path / "w.txt"
    version = nn.save_weights(store, path)
    assert path.read_text().splitlines()[0] == "SDQN-W1"
    assert nn.read_weights_version(path) == version == store.version()
    loaded = nn.load_weights(path)
    assert all(np.array_equal(loaded.params[k], store.params[k]) for k in store.params)


def test_weights_tampering_detected(tmp_path):
    path = tmp_path / "w.txt"
    nn.save_weights(nn.init_params(ScorerKind.MLP, 0), path)
    lines = path.read_text().splitlines()
    lines[lines.index("b2 1") + 1] = "0.5"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="version"):
        nn.load_weights(path)
    path.write_text("garbage\n")
    with pytest.raises(ValueError):
        nn.load_weights(path)
