import math

import numpy as np
import pytest

from app.errors import DataValidationError, DivergenceError, ShapeError
from app.nn.losses import mse, sparse_cce
from app.nn.optim import OptimizerState, nadam_step


def test_mse_value_and_gradient() -> None:
    loss, grad = mse(np.array([1.0, 2.0]), np.array([1.0, 4.0]))
    assert loss == pytest.approx(2.0)
    assert grad.tolist() == [0.0, -2.0]
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("classes", [2, 10, 823])
def test_cce_of_uniform_logits_is_log_class_count(classes: int) -> None:
    labels = np.arange(4) % classes
    loss, grad = sparse_cce(np.zeros((4, classes)), labels)
    assert loss == pytest.approx(math.log(classes))
    expected = np.full((4, classes), 1.0 / classes)
    expected[np.arange(4), labels] -= 1.0
    assert np.allclose(grad, expected / 4)


def test_cce_is_stable_for_large_logits() -> None:
    loss, _ = sparse_cce(np.array([[1000.0, 0.0], [0.0, 1000.0]]), np.array([0, 0]))
    assert loss == pytest.approx(500.0)


def test_cce_rejects_bad_labels() -> None:
    with pytest.raises(DataValidationError):
        sparse_cce(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ShapeError):
        sparse_cce(np.zeros((2, 3)), np.array([0]))
    with pytest.raises(ShapeError):
        sparse_cce(np.zeros(3), np.array([0]))


def _reference_nadam(p: float, grads: list[float], lr: float, b1=0.9, b2=0.999, eps=1e-7) -> float:
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= lr * (b1 * m_hat + (1 - b1) * g / (1 - b1 ** t)) / (math.sqrt(v_hat) + eps)
    return p


def test_nadam_first_step_on_scalar() -> None:
    params = {"w": np.array([1.0])}
    state = OptimizerState(learning_rate=0.1)
    nadam_step(params, {"w": np.array([0.5])}, state)
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 1.9 * 0.5 / (0.5 + 1e-7))
    assert state.step == 1


def test_nadam_matches_reference_over_steps() -> None:
    grads = [0.5, -0.2, 0.3, 0.0, 1.5]
    params = {"w": np.array([2.0])}
    state = OptimizerState(learning_rate=0.01)
    for g in grads:
        nadam_step(params, {"w": np.array([g])}, state)
    assert params["w"][0] == pytest.approx(_reference_nadam(2.0, grads, 0.01))


def test_nadam_zero_gradient_and_zero_rate_leave_params() -> None:
    params = {"w": np.array([1.0, -2.0])}
    nadam_step(params, {"w": np.zeros(2)}, OptimizerState())
    assert params["w"].tolist() == [1.0, -2.0]
    nadam_step(params, {"w": np.array([3.0, 4.0])}, OptimizerState(learning_rate=0.0))
    assert params["w"].tolist() == [1.0, -2.0]


def test_nadam_updates_in_place_and_keeps_dtype() -> None:
    weights = np.ones(3, dtype=np.float32)
    nadam_step({"w": weights}, {"w": np.full(3, 0.1, dtype=np.float32)}, OptimizerState())
    assert weights.dtype == np.float32
    assert np.all(weights < 1.0)


def test_nadam_rejects_non_finite_gradient() -> None:
    params = {"w": np.array([1.0])}
    state = OptimizerState()
    with pytest.raises(DivergenceError):
        nadam_step(params, {"w": np.array([np.nan])}, state)
    assert state.step == 0
    assert params["w"][0] == 1.0
    with pytest.raises(ShapeError):
        nadam_step(params, {"w": np.zeros(2)}, state)
