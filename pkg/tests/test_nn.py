import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exrec import nn
from exrec.errors import NumericError, ShapeError


def test_linear_identity():
    w = np.eye(3)
    assert np.allclose(nn.linear(w, np.array([1.0, 2.0, 3.0])), [1, 2, 3])


def test_linear_zeros_annihilate():
    w = np.zeros((2, 3))
    assert np.allclose(nn.linear(w, np.array([5.0, -2.0, 7.0])), [0, 0])


def test_linear_direct_arithmetic():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(nn.linear(w, np.array([1.0, 1.0])), [3, 7])


def test_linear_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
        nn.linear(np.zeros((2, 3)), np.zeros(2))


def test_relu():
    assert np.allclose(nn.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])


def test_softmax_symmetry():
    assert np.allclose(nn.softmax(np.array([0.0, 0.0])), [0.5, 0.5])


def test_softmax_empty_vector_rejected():
    with pytest.raises(ShapeError):
        nn.softmax(np.array([]))


@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=20),
       st.floats(min_value=-100, max_value=100))
@settings(max_examples=200, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(values, shift):
    x = np.array(values)
    p = nn.softmax(x)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p > 0)
    shifted = nn.softmax(x + shift)
    assert np.allclose(p, shifted, atol=1e-12)
    assert np.argmax(p) == np.argmax(shifted)


def test_cross_entropy_one_hot_near_zero():
    probs = np.zeros(5)
    probs[2] = 1.0
    assert nn.cross_entropy(probs, 2) <= 1e-11


def test_cross_entropy_uniform_is_log_n():
    probs = np.full(44, 1.0 / 44)
    assert nn.cross_entropy(probs, 7) == pytest.approx(np.log(44), abs=1e-9)


def test_cross_entropy_zero_probability_floored():
    probs = np.zeros(3)
    probs[0] = 1.0
    loss = nn.cross_entropy(probs, 2)
    assert np.isfinite(loss)
    assert loss == pytest.approx(-np.log(1e-12), rel=1e-6)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        nn.cross_entropy(np.array([0.5, 0.5]), 2)


def _quadratic_params():
    return {"w": np.array([[0.0]])}


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([[1.5, -2.0]])}
    state = nn.AdamState.for_params(params)
    updated = nn.adam_step(params, {"w": np.zeros((1, 2))}, state)
    assert np.array_equal(updated["w"], params["w"])
    assert state.t == 1


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([[1.0, 1.0, 1.0]])}
    grads = {"w": np.array([[0.5, -2.0, 1e-6]])}
    state = nn.AdamState.for_params(params, lr=1e-3)
    updated = nn.adam_step(params, grads, state)
    delta = np.abs(updated["w"] - params["w"])[0]
    assert np.all(delta >= 0.99 * 1e-3)
    assert np.all(delta <= 1e-3 + 1e-15)
    assert np.sign(params["w"] - updated["w"])[0, 1] == -1.0


def test_adam_quadratic_convergence():
    # minimize (w - 3)^2 from 0 with lr 0.1: the optimum is known analytically
    params = _quadratic_params()
    state = nn.AdamState.for_params(params, lr=0.1)
    for _ in range(500):
        grads = {"w": 2.0 * (params["w"] - 3.0)}
        params = nn.adam_step(params, grads, state)
    assert abs(params["w"][0, 0] - 3.0) < 0.01


def test_adam_nan_gradient_rejected():
    params = {"w": np.ones((1, 1))}
    state = nn.AdamState.for_params(params)
    with pytest.raises(NumericError):
        nn.adam_step(params, {"w": np.array([[np.nan]])}, state)


def test_adam_deterministic():
    def run():
        params = {"w": np.array([[0.3, -0.7]])}
        state = nn.AdamState.for_params(params, lr=0.05)
        for i in range(100):
            grads = {"w": np.sin(params["w"] + i)}
            params = nn.adam_step(params, grads, state)
        return params["w"]

    assert np.array_equal(run(), run())


def _softmax_ce_loss(params):
    logits = params["w"] @ np.array([1.0, -0.5, 0.25])
    p = nn.softmax(logits)
    return nn.cross_entropy(p, 1)


def _softmax_ce_grads(params):
    x = np.array([1.0, -0.5, 0.25])
    p = nn.softmax(params["w"] @ x)
    # exact derivative including the log floor
    d_p = np.zeros_like(p)
    d_p[1] = -1.0 / (p[1] + nn.LOG_FLOOR)
    d_logits = nn.softmax_backward(p, d_p)
    return {"w": np.outer(d_logits, x)}


def test_grad_check_linear_softmax_ce():
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(4, 3))}
    result = nn.grad_check(_softmax_ce_loss, params, _softmax_ce_grads(params))
    assert result.max_rel_err < 1e-6


def test_grad_check_flags_corrupted_gradient():
    rng = np.random.default_rng(1)
    params = {"w": rng.normal(size=(4, 3))}
    grads = _softmax_ce_grads(params)
    idx = np.unravel_index(np.argmax(np.abs(grads["w"])), grads["w"].shape)
    grads["w"][idx] *= 2.0
    result = nn.grad_check(_softmax_ce_loss, params, grads)
    assert result.max_rel_err > 0.1


def test_grad_check_property_hundred_seeds():
    # composed linear -> softmax -> cross-entropy over 100 random inputs
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params = {"w": rng.normal(scale=1.5, size=(4, 3))}
        x = rng.normal(size=3)
        target = int(rng.integers(0, 4))

        def loss(p):
            return nn.cross_entropy(nn.softmax(p["w"] @ x), target)

        probs = nn.softmax(params["w"] @ x)
        d_p = np.zeros_like(probs)
        d_p[target] = -1.0 / (probs[target] + nn.LOG_FLOOR)
        grads = {"w": np.outer(nn.softmax_backward(probs, d_p), x)}
        result = nn.grad_check(loss, params, grads)
        assert result.max_rel_err < 1e-4, (seed, result)
