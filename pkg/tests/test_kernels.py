"""Backend equivalence: the compiled kernel and the numpy fallback must
agree on the cell forward/backward to float tolerance."""

import numpy as np
import pytest

from mlva.kernels import numpy_backend

try:
    from mlva.kernels import _lstm_ext
    HAS_EXT = True
except ImportError:
    HAS_EXT = False


def _random_case(rng, bsz, hdim, dtype):
    gates = rng.standard_normal((bsz, 4 * hdim)).astype(dtype)
    c_prev = rng.standard_normal((bsz, hdim)).astype(dtype)
    return gates, c_prev


@pytest.mark.skipif(not HAS_EXT, reason="compiled kernel not built")
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_forward_backends_agree(dtype, tol):
    rng = np.random.default_rng(0)
    for _ in range(10):
        gates, c_prev = _random_case(rng, 5, 4, dtype)
        out = {}
        for name, backend in (("np", numpy_backend), ("ext", _lstm_ext)):
            g = gates.copy()
            c = np.empty_like(c_prev)
            h = np.empty_like(c_prev)
            backend.lstm_cell_forward(g, c_prev, c, h)
            out[name] = (g, c, h)
        for a, b in zip(out["np"], out["ext"]):
            np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.skipif(not HAS_EXT, reason="compiled kernel not built")
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
def test_backward_backends_agree(dtype, tol):
    rng = np.random.default_rng(1)
    for _ in range(10):
        gates, c_prev = _random_case(rng, 4, 3, dtype)
        g_act = gates.copy()
        c_t = np.empty_like(c_prev)
        h = np.empty_like(c_prev)
        numpy_backend.lstm_cell_forward(g_act, c_prev, c_t, h)
        dh = rng.standard_normal(c_prev.shape).astype(dtype)
        dc_next = rng.standard_normal(c_prev.shape).astype(dtype)
        out = {}
        for name, backend in (("np", numpy_backend), ("ext", _lstm_ext)):
            dgates = np.empty_like(gates)
            dc_prev = np.empty_like(c_prev)
            backend.lstm_cell_backward(g_act, c_prev, c_t, dh, dc_next,
                                       dgates, dc_prev)
            out[name] = (dgates, dc_prev)
        for a, b in zip(out["np"], out["ext"]):
            np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.skipif(not HAS_EXT, reason="compiled kernel not built")
def test_full_sequence_agrees_through_tape(monkeypatch):
    from mlva import kernels
    from mlva import tensor as T
    from mlva.tensor import Graph, Tensor, backward

    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4, 2))
    wx = 0.5 * rng.standard_normal((2, 12))
    wh = 0.5 * rng.standard_normal((3, 12))
    b = 0.1 * rng.standard_normal(12)

    results = {}
    for name, backend in (("np", numpy_backend), ("ext", _lstm_ext)):
        monkeypatch.setattr(kernels, "lstm_cell_forward", backend.lstm_cell_forward)
        monkeypatch.setattr(kernels, "lstm_cell_backward", backend.lstm_cell_backward)
        params = [Tensor(a.copy(), requires_grad=True) for a in (x, wx, wh, b)]
        with Graph():
            loss = T.reduce_mean(T.lstm_sequence(*params))
        backward(loss)
        results[name] = (float(loss.data), [p.grad.copy() for p in params])
    assert results["np"][0] == pytest.approx(results["ext"][0], rel=1e-10)
    for ga, gb in zip(results["np"][1], results["ext"][1]):
        np.testing.assert_allclose(ga, gb, rtol=1e-9, atol=1e-12)
