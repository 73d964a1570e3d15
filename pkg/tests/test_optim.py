"""AdamW update rule against hand-computed values."""

import numpy as np
import pytest

from mlva.optim import AdamWState, adamw_step, clip_grads
from mlva.tensor import Tensor


def _param(value, grad=None):
    p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    if grad is not None:
        p.grad = np.asarray(grad, dtype=np.float64)
    return p


def test_zero_grad_no_decay_is_fixed_point():
    p = _param([1.0, -2.0], grad=[0.0, 0.0])
    state = AdamWState()
    adamw_step({"p": p}, state, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_zero_grad_decay_only_scales():
    p = _param([1.0, -2.0], grad=[0.0, 0.0])
    adamw_step({"p": p}, AdamWState(), lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1.0 - 0.001), rtol=1e-12)


def test_two_steps_match_hand_computed_recurrence():
    # published AdamW recurrence, scalar case, grad == 1 each step:
    # m_t = b1 m + (1-b1); v_t = b2 v + (1-b2); both bias corrections
    # cancel to 1.0 exactly, so each step moves by lr/(1 + eps), plus
    # decoupled decay on the pre-step value.
    lr, b1, b2, wd, eps = 0.1, 0.9, 0.98, 0.0, 1e-8
    theta = 1.0
    m = v = 0.0
    expected = []
    for t in (1, 2):
        m = b1 * m + (1 - b1) * 1.0
        v = b2 * v + (1 - b2) * 1.0
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps) - lr * wd * theta
        expected.append(theta)
    assert expected[0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), rel=1e-15)

    p = _param(1.0)
    state = AdamWState()
    seen = []
    for _ in range(2):
        p.grad = np.asarray(1.0)
        adamw_step({"p": p}, state, lr=lr, beta1=b1, beta2=b2, weight_decay=wd, eps=eps)
        seen.append(float(p.data))
    np.testing.assert_allclose(seen, expected, rtol=1e-12)
    assert state.step == 2


def test_decay_uses_pre_step_value_alongside_adaptive_step():
    lr, wd = 0.1, 0.5
    p = _param(2.0, grad=1.0)
    adamw_step({"p": p}, AdamWState(), lr=lr, beta1=0.9, beta2=0.98,
               weight_decay=wd, eps=1e-8)
    # adaptive part: bias corrections cancel with constant grad -> 1/(1+eps)
    expected = 2.0 - lr * 1.0 / (1.0 + 1e-8) - lr * wd * 2.0
    assert float(p.data) == pytest.approx(expected, rel=1e-12)


def test_missing_grad_treated_as_zero():
    p1 = _param(1.0, grad=1.0)
    p2 = _param(5.0)  # no grad
    state = AdamWState()
    adamw_step({"a": p1, "b": p2}, state, lr=0.1, weight_decay=0.0)
    assert float(p2.data) == 5.0
    assert float(p1.data) != 1.0


def test_shape_mismatch_rejected():
    from mlva.errors import DimensionError
    p = _param([1.0, 2.0], grad=[1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        adamw_step({"p": p}, AdamWState())


def test_clip_grads_scales_to_max_norm():
    p = _param([3.0, 4.0], grad=[3.0, 4.0])
    norm = clip_grads({"p": p}, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(p.grad) == pytest.approx(1.0, rel=1e-6)
