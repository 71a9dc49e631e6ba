import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advrand import learner as L
from advrand.errors import InvalidLabelError, InvalidParameterError, NumericError, ShapeError


def scalar_forward(h, x):
    """Independent loop-by-loop forward pass (no matrix products)."""
    a = [float(v) for v in x]
    feats = a
    for li, layer in enumerate(h.layers):
        n_in, n_out = layer.weight.shape
        out = []
        for j in range(n_out):
            z = float(layer.bias[j])
            for i in range(n_in):
                z += a[i] * float(layer.weight[i, j])
            out.append(max(z, 0.0) if layer.activation == "relu" else z)
        if li == len(h.layers) - 1:
            feats = a
        a = out
    return a, feats


def scalar_ce(logits, y):
    m = max(logits)
    s = sum(math.exp(z - m) for z in logits)
    return -(logits[y] - m - math.log(s))


def numeric_grad(h, x, y, kind, eps=1e-4):
    grads = []
    for layer in h.layers:
        gw = np.zeros_like(layer.weight)
        gb = np.zeros_like(layer.bias)
        for arr, g in ((layer.weight, gw), (layer.bias, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps
                lp = L.loss(kind, L.forward(h, x)[0], y)
                arr[idx] = old - eps
                lm = L.loss(kind, L.forward(h, x)[0], y)
                arr[idx] = old
                g[idx] = (lp - lm) / (2 * eps)
        grads.append((gw, gb))
    return grads


def max_rel_err(a, b):
    worst = 0.0
    for (wa, ba), (wb, bb) in zip(a, b):
        for u, v in ((wa, wb), (ba, bb)):
            denom = np.maximum(np.abs(u) + np.abs(v), 1e-8)
            worst = max(worst, float((np.abs(u - v) / denom).max()))
    return worst


# --- forward


def test_zero_network_gives_uniform_softmax():
    h = L.LearnerState([L.Layer(np.zeros((5, 6)), np.zeros(6), "identity")])
    logits, _ = L.forward(h, np.ones(5))
    np.testing.assert_array_equal(logits, np.zeros(6))
    np.testing.assert_allclose(L.softmax(logits), np.full(6, 1 / 6))


def test_identity_layer_on_basis_vector():
    h = L.LearnerState([L.Layer(np.eye(4), np.zeros(4), "identity")])
    for k in range(4):
        e = np.eye(4)[k]
        np.testing.assert_array_equal(L.forward(h, e)[0], e)


def test_forward_matches_scalar_loop():
    rng = np.random.default_rng(0)
    h = L.init_mlp([7, 5, 3], rng)
    for layer in h.layers:
        layer.bias[:] = rng.standard_normal(layer.bias.shape)
    for _ in range(5):
        x = rng.standard_normal(7)
        logits, feats = L.forward(h, x)
        ref_logits, ref_feats = scalar_forward(h, x)
        np.testing.assert_allclose(logits, ref_logits, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(feats, ref_feats, rtol=1e-12, atol=1e-12)


def test_features_ignore_last_layer_weights():
    rng = np.random.default_rng(1)
    h = L.init_mlp([6, 4, 3], rng)
    x = rng.standard_normal((2, 6))
    f1 = L.forward(h, x)[1]
    h2 = h.copy()
    h2.layers[-1].weight[:] = 99.0
    np.testing.assert_array_equal(L.forward(h2, x)[1], f1)
    assert f1.shape == (2, h.feature_dim) == (2, 4)


def test_input_dim_mismatch():
    h = L.init_mlp([4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        L.forward(h, np.zeros(5))


# --- loss


def test_uniform_logits_loss_is_ln_k():
    assert L.loss("cross_entropy_softmax", np.zeros(6), 3) == pytest.approx(math.log(6), abs=1e-12)
    assert L.loss("cross_entropy_softmax", np.zeros(6), 3) == pytest.approx(1.7918, abs=1e-4)


def test_confident_correct_logit_gives_near_zero_loss():
    z = np.zeros(6)
    z[2] = 50.0
    assert 0.0 <= L.loss("cross_entropy_softmax", z, 2) < 1e-20


def test_loss_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((10, 6)) * 3
    y = rng.integers(0, 6, size=10)
    ref = [scalar_ce(list(zi), int(yi)) for zi, yi in zip(z, y)]
    np.testing.assert_allclose(L.sample_losses("cross_entropy_softmax", z, y), ref, rtol=1e-12)


def test_per_cell_loss_is_cell_average():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((2, 4 * 3))
    y = rng.integers(0, 3, size=(2, 4))
    ref = [np.mean([scalar_ce(list(z[n, c * 3:(c + 1) * 3]), int(y[n, c])) for c in range(4)]) for n in range(2)]
    np.testing.assert_allclose(L.sample_losses("per_cell_cross_entropy", z, y), ref, rtol=1e-12)


def test_bad_labels():
    with pytest.raises(InvalidLabelError):
        L.loss("cross_entropy_softmax", np.zeros((1, 6)), [6])
    with pytest.raises(InvalidLabelError):
        L.loss("cross_entropy_softmax", np.zeros((1, 6)), [-1])
    with pytest.raises(InvalidParameterError):
        L.loss("hinge", np.zeros((1, 6)), [0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.data())
def test_loss_non_negative(z, data):
    y = data.draw(st.integers(0, len(z) - 1))
    assert L.loss("cross_entropy_softmax", np.array(z), y) >= 0.0


# --- backward


@pytest.mark.parametrize("sizes,kind,label_shape", [
    ([6, 5, 4], "cross_entropy_softmax", None),
    ([8, 6, 5, 3 * 4], "per_cell_cross_entropy", (4, 3)),
])
def test_backward_matches_finite_differences(sizes, kind, label_shape):
    rng = np.random.default_rng(4)
    h = L.init_mlp(sizes, rng)
    for layer in h.layers:
        layer.bias[:] = 0.1 * rng.standard_normal(layer.bias.shape)
    x = rng.standard_normal((3, sizes[0]))
    if label_shape is None:
        y = rng.integers(0, sizes[-1], size=3)
    else:
        y = rng.integers(0, label_shape[1], size=(3, label_shape[0]))
    assert max_rel_err(L.backward(h, x, y, kind), numeric_grad(h, x, y, kind)) < 1e-4


def test_gradient_zero_at_strict_minimum():
    # two identical inputs with opposite labels: equal logits are the strict minimum
    h = L.LearnerState([L.Layer(np.zeros((1, 2)), np.zeros(2), "identity")])
    x = np.ones((2, 1))
    y = np.array([0, 1])
    for gw, gb in L.backward(h, x, y, "cross_entropy_softmax"):
        np.testing.assert_allclose(gw, 0.0, atol=1e-15)
        np.testing.assert_allclose(gb, 0.0, atol=1e-15)


def test_batch_gradient_is_mean_of_sample_gradients():
    rng = np.random.default_rng(5)
    h = L.init_mlp([5, 4, 3], rng)
    x = rng.standard_normal((4, 5))
    y = rng.integers(0, 3, size=4)
    batch = L.backward(h, x, y, "cross_entropy_softmax")
    singles = [L.backward(h, x[i:i + 1], y[i:i + 1], "cross_entropy_softmax") for i in range(4)]
    for li in range(2):
        np.testing.assert_allclose(batch[li][0], np.mean([s[li][0] for s in singles], axis=0), atol=1e-14)
        np.testing.assert_allclose(batch[li][1], np.mean([s[li][1] for s in singles], axis=0), atol=1e-14)


def test_feature_gradient_injection_matches_finite_differences():
    # objective: mean loss + sum(c * features)
    rng = np.random.default_rng(6)
    h = L.init_mlp([4, 5, 3], rng)
    x = rng.standard_normal((2, 4))
    y = np.array([0, 2])
    c = rng.standard_normal((2, 5))

    def obj(hh):
        logits, feats = L.forward(hh, x)
        return L.loss("cross_entropy_softmax", logits, y) + float((c * feats).sum())

    logits, _ = L.forward(h, x)
    grads, _ = L.backprop(h, x, L.loss_grad_logits("cross_entropy_softmax", logits, y), c)
    w = h.layers[0].weight
    for idx in [(0, 0), (1, 3), (3, 4)]:
        old = w[idx]
        w[idx] = old + 1e-5
        up = obj(h)
        w[idx] = old - 1e-5
        dn = obj(h)
        w[idx] = old
        assert grads[0][0][idx] == pytest.approx((up - dn) / 2e-5, rel=1e-5, abs=1e-9)


# --- sgd


def test_sgd_arithmetic():
    h = L.LearnerState([L.Layer(np.ones((1, 1)), np.zeros(1), "identity")])
    out = L.sgd_step(h, [(np.full((1, 1), 0.25), np.zeros(1))], lr=1.0)
    assert out.layers[0].weight[0, 0] == 0.75
    same = L.sgd_step(h, [(np.zeros((1, 1)), np.zeros(1))], lr=0.3)
    np.testing.assert_array_equal(same.layers[0].weight, h.layers[0].weight)


def test_two_half_steps_equal_one_step():
    rng = np.random.default_rng(7)
    h = L.init_mlp([3, 2], rng)
    g = [(np.full((3, 2), 0.5), np.full(2, 0.25))]
    one = L.sgd_step(h, g, 0.5)
    two = L.sgd_step(L.sgd_step(h, g, 0.25), g, 0.25)
    np.testing.assert_allclose(one.layers[0].weight, two.layers[0].weight, atol=1e-15)


def test_sgd_errors():
    h = L.init_mlp([2, 2], np.random.default_rng(0))
    with pytest.raises(InvalidParameterError):
        L.sgd_step(h, [(np.zeros((2, 2)), np.zeros(2))], 0.0)
    with pytest.raises(NumericError):
        L.sgd_step(h, [(np.full((2, 2), np.nan), np.zeros(2))], 0.1)


# --- evaluate


def test_evaluate_perfect_and_empty():
    h = L.LearnerState([L.Layer(np.eye(3) * 10, np.zeros(3), "identity")])
    x = np.eye(3)
    rep = L.evaluate(h, x, np.arange(3), "cross_entropy_softmax")
    assert rep.accuracy == 1.0
    assert rep.per_class_accuracy == [1.0, 1.0, 1.0]
    with pytest.raises(InvalidParameterError):
        L.evaluate(h, x[:0], np.zeros(0, dtype=int), "cross_entropy_softmax")


def test_uniform_logits_accuracy_under_tie_break():
    # every prediction ties, so argmax picks class 0: exactly 1/6 of a balanced set
    h = L.LearnerState([L.Layer(np.zeros((2, 6)), np.zeros(6), "identity")])
    y = np.repeat(np.arange(6), 5)
    rep = L.evaluate(h, np.ones((30, 2)), y, "cross_entropy_softmax")
    assert rep.accuracy == pytest.approx(1 / 6)
    assert rep.per_class_accuracy == [1.0, 0, 0, 0, 0, 0]
    assert rep.mean_loss == pytest.approx(math.log(6))


def test_training_is_deterministic_and_reduces_loss():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((40, 5))
    y = (x[:, 0] > 0).astype(int)

    def train():
        h = L.init_mlp([5, 8, 2], np.random.default_rng(9))
        for _ in range(100):
            h = L.sgd_step(h, L.backward(h, x, y, "cross_entropy_softmax"), 0.5)
        return h

    a, b = train(), train()
    for la, lb in zip(a.layers, b.layers):
        assert la.weight.tobytes() == lb.weight.tobytes()
    assert L.evaluate(a, x, y, "cross_entropy_softmax").accuracy > 0.95


def test_checkpoint_round_trip(tmp_path):
    h = L.init_mlp([4, 3, 2], np.random.default_rng(0))
    L.save_checkpoint(tmp_path / "h.npz", h)
    back = L.load_checkpoint(tmp_path / "h.npz")
    for a, b in zip(h.layers, back.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
        assert a.activation == b.activation
