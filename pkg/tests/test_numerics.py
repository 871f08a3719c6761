import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rumorgcn.numerics import (
    OptimizerState,
    ShapeError,
    adam_step,
    affine_backward,
    affine_forward,
    dropout_mask,
    finite_difference_check,
    matmul,
    relu,
    relu_backward,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)


def test_matmul_identity_and_hand_case():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert matmul(m, np.array([[0.0], [1.0]])).tolist() == [[2.0], [4.0]]


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_affine_cases():
    x = np.array([[1.0, 1.0]])
    assert affine_forward(x, np.array([[1.0], [2.0]]), np.array([3.0])).tolist() == [[6.0]]
    xr = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(affine_forward(xr, np.eye(4), np.zeros(4)), xr)
    assert affine_forward(np.zeros((0, 4)), np.ones((4, 2)), np.zeros(2)).shape == (0, 2)


def test_affine_bias_shape_checked():
    with pytest.raises(ShapeError):
        affine_forward(np.zeros((1, 2)), np.zeros((2, 3)), np.zeros(2))


def test_relu_cases():
    assert relu(np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]
    neg = -np.abs(np.random.default_rng(1).normal(size=(3, 3))) - 0.1
    assert not relu(neg).any()
    assert not relu_backward(np.ones_like(neg), neg).any()


def test_relu_grad_at_zero_is_zero():
    assert relu_backward(np.ones((1, 1)), np.zeros((1, 1)))[0, 0] == 0.0


def test_relu_finite_differences(rng):
    x = rng.normal(size=(4, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    up = rng.normal(size=(4, 4))
    err = finite_difference_check(lambda: float((relu(x) * up).sum()), {"x": x}, {"x": relu_backward(up, x)})
    assert err < 1e-6


def test_affine_finite_differences(rng):
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    up = rng.normal(size=(3, 2))
    dx, dw, db = affine_backward(up, x, w)
    loss = lambda: float((affine_forward(x, w, b) * up).sum())
    assert finite_difference_check(loss, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db}) < 1e-8


def test_softmax_ce_uniform():
    loss, probs, _ = softmax_cross_entropy(np.zeros((1, 4)), [0])
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert np.allclose(probs, 0.25)


def test_softmax_ce_no_overflow():
    loss, probs, grad = softmax_cross_entropy(np.array([[1e9, 0.0, 0.0, 0.0]]), [0])
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(probs)) and np.all(np.isfinite(grad))


def test_softmax_ce_gradient(rng):
    logits = rng.normal(size=(3, 4))
    labels = np.array([0, 3, 1])
    _, _, grad = softmax_cross_entropy(logits, labels)
    err = finite_difference_check(lambda: softmax_cross_entropy(logits, labels)[0], {"z": logits}, {"z": grad})
    assert err < 1e-5


def test_softmax_ce_label_out_of_range():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 4)), [0, 4])


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(z):
    p = softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert (p >= 0).all()


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, 7, elements=st.floats(-800, 800)))
def test_sigmoid_stable_and_symmetric(x):
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert np.allclose(s + sigmoid(-x), 1.0)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, OptimizerState())
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr_sign():
    for g in (3.0, -0.25):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([g])}, OptimizerState(), lr=0.01)
        assert p["w"][0] == pytest.approx(-0.01 * math.copysign(1, g), rel=1e-6)


def test_adam_step_count_and_shape_check():
    state = OptimizerState()
    p = {"w": np.zeros(3)}
    for k in range(1, 4):
        adam_step(p, {"w": np.ones(3)}, state)
        assert state.step_count == k
    with pytest.raises(ShapeError):
        adam_step(p, {"w": np.ones(2)}, state)


def test_dropout_mask_scaling(rng):
    m = dropout_mask((2000, 10), 0.2, rng)
    assert set(np.unique(m)) <= {0.0, 1.25}
    assert m.mean() == pytest.approx(1.0, abs=0.02)
    assert np.all(dropout_mask((3, 3), 0.0, rng) == 1.0)


def test_checker_quadratic(rng):
    p = rng.normal(size=5)
    assert finite_difference_check(lambda: 0.5 * float(p @ p), {"p": p}, {"p": p.copy()}) < 1e-8


def test_checker_flags_corrupted_gradient(rng):
    p = rng.normal(size=5)
    bad = p.copy()
    bad[2] += 1.0
    assert finite_difference_check(lambda: 0.5 * float(p @ p), {"p": p}, {"p": bad}) > 0.1


def test_checker_restores_params(rng):
    p = rng.normal(size=4)
    before = p.copy()
    finite_difference_check(lambda: float((p**3).sum()), {"p": p}, {"p": 3 * p**2})
    assert np.array_equal(p, before)


def test_checker_reports_nonfinite():
    p = np.array([0.0])
    with pytest.raises(FloatingPointError), np.errstate(divide="ignore", invalid="ignore"):
        finite_difference_check(lambda: float(np.log(p[0])), {"p": p}, {"p": np.ones(1)})
