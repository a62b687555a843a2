import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leadq.errors import ConfigurationError, DataError, NumericError
from leadq.nn import (GruCellSpec, MlpSpec, OptimizerState, ParamVector, cross_entropy_loss,
                      forward_mlp, grad, gru_step, init_gru, init_mlp, loss_and_grad,
                      optimizer_step, softmax)


def fd_grad(f, values, h=1e-5):
    out = np.zeros_like(values)
    for i in range(values.size):
        v = values.copy()
        v[i] += h
        up = f(v)
        v[i] -= 2 * h
        out[i] = (up - f(v)) / (2 * h)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


# -- ParamVector ---------------------------------------------------------


def test_param_vector_segments_are_views():
    p = ParamVector.zeros([("a", (2, 3)), ("b", (3,))])
    assert len(p) == 9
    p["b"][...] = 7.0
    assert p.values[-3:].tolist() == [7.0, 7.0, 7.0]
    assert p.segment_of(0) == "a" and p.segment_of(8) == "b"


def test_param_vector_layout_mismatch():
    with pytest.raises(ConfigurationError):
        ParamVector(np.zeros(5), [("a", (2, 3))])


def test_param_vector_round_trip(tmp_path, rng):
    p = init_mlp(MlpSpec((3, 4, 2)), rng)
    p.save(tmp_path / "theta")
    q = ParamVector.load(tmp_path / "theta")
    assert q == p and q.layout == p.layout
    assert ParamVector.from_json(p.to_json()) == p


# -- forward -------------------------------------------------------------


def test_forward_identity_layer():
    spec = MlpSpec((2, 2))
    p = ParamVector.from_segments({"W0": np.eye(2), "b0": np.zeros(2)})
    np.testing.assert_array_equal(forward_mlp(spec, p, np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_forward_zero_weights_gives_bias():
    spec = MlpSpec((3, 2))
    p = ParamVector.from_segments({"W0": np.zeros((3, 2)), "b0": np.array([0.5, -1.0])})
    out = forward_mlp(spec, p, np.random.default_rng(0).normal(size=(4, 3)))
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0], (4, 1)))


def test_forward_matches_straight_line_oracle():
    spec = MlpSpec((2, 3, 2), ("relu",))
    p = init_mlp(spec, np.random.default_rng(5))
    x = np.array([0.3, -1.2])
    W0, b0, W1, b1 = p["W0"], p["b0"], p["W1"], p["b1"]
    hidden = [max(0.0, x[0] * W0[0, j] + x[1] * W0[1, j] + b0[j]) for j in range(3)]
    want = [sum(hidden[j] * W1[j, o] for j in range(3)) + b1[o] for o in range(2)]
    np.testing.assert_allclose(forward_mlp(spec, p, x[None, :])[0], want, rtol=1e-14)


def test_forward_shape_error():
    spec = MlpSpec((3, 2))
    with pytest.raises(ConfigurationError):
        forward_mlp(spec, init_mlp(spec, np.random.default_rng(0)), np.zeros((2, 4)))


def test_mlp_spec_validation():
    with pytest.raises(ConfigurationError):
        MlpSpec((3,))
    with pytest.raises(ConfigurationError):
        MlpSpec((3, 0, 2))
    with pytest.raises(ConfigurationError):
        MlpSpec((3, 4, 2), ("sigmoid",))


# -- softmax / loss ------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    for c in (-1e3, 0.0, 7.5, 1e3):
        np.testing.assert_allclose(softmax(np.full(3, c)), [1 / 3] * 3, rtol=1e-15)
    np.testing.assert_allclose(softmax(np.array([math.log(1), math.log(3)])), [0.25, 0.75], rtol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(xs, c):
    x = np.array(xs)
    p = softmax(x)
    assert abs(p.sum() - 1.0) <= 1e-12 and (p >= 0).all()
    np.testing.assert_allclose(softmax(x + c), p, atol=1e-12)


def test_cross_entropy_examples():
    assert cross_entropy_loss(np.array([[800.0, 0.0]]), np.array([0])) == 0.0
    assert math.isclose(cross_entropy_loss(np.zeros((3, 5)), np.array([0, 2, 4])), math.log(5), rel_tol=1e-14)
    logits = np.array([[1.0, 2.0, 0.0], [0.5, -0.5, 3.0]])
    labels = np.array([1, 0])
    p = [math.exp(2) / (math.exp(1) + math.exp(2) + 1), math.exp(0.5) / (math.exp(0.5) + math.exp(-0.5) + math.exp(3))]
    assert math.isclose(cross_entropy_loss(logits, labels), -0.5 * (math.log(p[0]) + math.log(p[1])), rel_tol=1e-13)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DataError):
        cross_entropy_loss(np.zeros((1, 3)), np.array([3]))


# -- gradients -----------------------------------------------------------


def test_grad_linear_closed_form():
    spec = MlpSpec((3, 4))
    p = init_mlp(spec, np.random.default_rng(2))
    x = np.array([[0.5, -1.0, 2.0]])
    y = np.array([2])
    probs = softmax(forward_mlp(spec, p, x))[0]
    diff = probs - np.eye(4)[2]
    g = grad(spec, p, x, y)
    np.testing.assert_allclose(g["W0"], np.outer(x[0], diff), rtol=1e-13)
    np.testing.assert_allclose(g["b0"], diff, rtol=1e-13)


def test_grad_vanishes_at_saturated_fit():
    spec = MlpSpec((2, 2))
    p = ParamVector.from_segments({"W0": np.zeros((2, 2)), "b0": np.array([60.0, -60.0])})
    g = grad(spec, p, np.array([[1.0, 1.0]]), np.array([0]))
    assert np.max(np.abs(g.values)) < 1e-40


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3), st.sampled_from(["relu", "tanh", "identity"]))
def test_grad_matches_finite_differences(seed, n_layers, act):
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in rng.integers(2, 7, size=n_layers + 1))
    spec = MlpSpec(widths, (act,) * (n_layers - 1))
    p = init_mlp(spec, rng)
    x = rng.normal(size=(5, widths[0]))
    y = rng.integers(0, widths[-1], size=5)
    g = grad(spec, p, x, y).values
    num = fd_grad(lambda v: cross_entropy_loss(forward_mlp(spec, p.with_values(v), x), y), p.values)
    assert rel_err(g, num) < 1e-4 or np.max(np.abs(g - num)) < 1e-9


def test_loss_and_grad_deterministic():
    spec = MlpSpec((4, 5, 3), ("tanh",))
    p = init_mlp(spec, np.random.default_rng(9))
    x = np.random.default_rng(1).normal(size=(6, 4))
    y = np.array([0, 1, 2, 0, 1, 2])
    a = loss_and_grad(spec, p, x, y)
    b = loss_and_grad(spec, p, x, y)
    assert a[0] == b[0] and np.array_equal(a[1].values, b[1].values)


def test_init_is_seed_deterministic():
    spec = MlpSpec((5, 8, 3))
    assert init_mlp(spec, np.random.default_rng(3)) == init_mlp(spec, np.random.default_rng(3))
    bound = math.sqrt(1 / 5)
    assert np.abs(init_mlp(spec, np.random.default_rng(3))["W0"]).max() <= bound


# -- GRU -----------------------------------------------------------------


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_gru_zero_params_zero_hidden():
    spec = GruCellSpec(3, 4)
    p = ParamVector.zeros(spec.layout())
    np.testing.assert_array_equal(gru_step(spec, p, np.ones(3), np.zeros(4)), np.zeros(4))


def test_gru_straight_line_oracle():
    spec = GruCellSpec(2, 2)
    p = init_gru(spec, np.random.default_rng(11))
    x = np.array([0.7, -0.4])
    h = np.array([0.2, -0.1])
    Wi, Wh, bi, bh = p["W_ih"], p["W_hh"], p["b_ih"], p["b_hh"]
    H = 2
    want = []
    for j in range(H):
        def gate(off, j=j):
            gi = x[0] * Wi[0, off + j] + x[1] * Wi[1, off + j] + bi[off + j]
            gh = h[0] * Wh[0, off + j] + h[1] * Wh[1, off + j] + bh[off + j]
            return gi, gh
        r = _sig(sum(gate(0)))
        z = _sig(sum(gate(H)))
        gi, gh = gate(2 * H)
        n = math.tanh(gi + r * gh)
        want.append((1 - z) * n + z * h[j])
    np.testing.assert_allclose(gru_step(spec, p, x, h), want, rtol=1e-13)


def test_gru_bounded_and_converges():
    spec = GruCellSpec(3, 5)
    p = init_gru(spec, np.random.default_rng(4))
    p = p.with_values(p.values * 0.5)  # contractive
    x = np.array([0.3, -0.2, 0.9])
    h = np.zeros(5)
    for _ in range(2000):
        h_new = gru_step(spec, p, x, h)
        assert np.all(np.abs(h_new) < 1)
        if np.max(np.abs(h_new - h)) < 1e-12:
            break
        h = h_new
    assert np.max(np.abs(gru_step(spec, p, x, h) - h)) < 1e-9


def test_gru_shape_error():
    spec = GruCellSpec(3, 5)
    with pytest.raises(ConfigurationError):
        gru_step(spec, ParamVector.zeros(spec.layout()), np.zeros(4), np.zeros(5))


# -- optimizers ----------------------------------------------------------


def _pv(v):
    return ParamVector(np.array(v, dtype=np.float64), [("x", (len(v),))])


def test_sgd_step_example():
    out = optimizer_step(OptimizerState("sgd", 0.1, 1), _pv([1.0]), _pv([2.0]))
    assert math.isclose(out.values[0], 0.8, rel_tol=1e-15)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_params(kind):
    p = _pv([1.0, -2.0])
    assert optimizer_step(OptimizerState(kind, 0.01, 2), p, _pv([0.0, 0.0])) == p


def test_adam_first_step():
    st_ = OptimizerState("adam", 0.01, 1)
    out = optimizer_step(st_, _pv([0.3]), _pv([1.0]))
    assert abs(out.values[0] - (0.3 - 0.01)) < 1e-9
    assert st_.step == 1


def test_optimizer_names_bad_segment():
    p = ParamVector(np.zeros(3), [("a", (1,)), ("b", (2,))])
    g = ParamVector(np.array([0.0, np.nan, 0.0]), p.layout)
    with pytest.raises(NumericError, match="'b'"):
        optimizer_step(OptimizerState("sgd", 0.1, 3), p, g)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_sgd_superposition(g1, g2):
    theta = _pv([0.5, -1.0, 2.0])
    a = optimizer_step(OptimizerState("sgd", 0.1, 3), theta, _pv(np.add(g1, g2)))
    b = optimizer_step(OptimizerState("sgd", 0.1, 3), optimizer_step(OptimizerState("sgd", 0.1, 3), theta, _pv(g1)), _pv(g2))
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)
