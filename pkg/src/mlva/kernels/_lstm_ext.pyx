# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused recurrent-cell pointwise kernels (compiled backend).

Same contracts as `numpy_backend`: gate layout [input, forget,
candidate, output] along the last axis; all buffers C-contiguous 2-d
slabs of one dtype (float32 or float64).
"""

from libc.math cimport exp, expf, tanh, tanhf

NAME = "cython"

ctypedef fused floating:
    float
    double


cdef inline floating _exp(floating x) noexcept nogil:
    if floating is float:
        return expf(x)
    else:
        return exp(x)


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    else:
        return tanh(x)


cdef inline floating _sigmoid(floating x) noexcept nogil:
    cdef floating e
    if x >= 0:
        return <floating>1.0 / (<floating>1.0 + _exp(-x))
    e = _exp(x)
    return e / (<floating>1.0 + e)


def lstm_cell_forward(floating[:, ::1] gates, floating[:, ::1] c_prev,
                      floating[:, ::1] c_out, floating[:, ::1] h_out):
    """Activate pre-activation gates in place and advance the cell state."""
    cdef Py_ssize_t bsz = c_prev.shape[0]
    cdef Py_ssize_t hdim = c_prev.shape[1]
    cdef Py_ssize_t b, j
    cdef floating gi, gf, gg, go, c
    if gates.shape[0] != bsz or gates.shape[1] != 4 * hdim:
        raise ValueError("gate buffer must be (B, 4H)")
    with nogil:
        for b in range(bsz):
            for j in range(hdim):
                gi = _sigmoid(gates[b, j])
                gf = _sigmoid(gates[b, hdim + j])
                gg = _tanh(gates[b, 2 * hdim + j])
                go = _sigmoid(gates[b, 3 * hdim + j])
                gates[b, j] = gi
                gates[b, hdim + j] = gf
                gates[b, 2 * hdim + j] = gg
                gates[b, 3 * hdim + j] = go
                c = gf * c_prev[b, j] + gi * gg
                c_out[b, j] = c
                h_out[b, j] = go * _tanh(c)


def lstm_cell_backward(floating[:, ::1] gates, floating[:, ::1] c_prev,
                       floating[:, ::1] c_t, floating[:, ::1] dh,
                       floating[:, ::1] dc_next, floating[:, ::1] dgates,
                       floating[:, ::1] dc_prev):
    """One step of backprop through time for the activated cell."""
    cdef Py_ssize_t bsz = c_prev.shape[0]
    cdef Py_ssize_t hdim = c_prev.shape[1]
    cdef Py_ssize_t b, j
    cdef floating gi, gf, gg, go, tc, dc
    if dgates.shape[0] != bsz or dgates.shape[1] != 4 * hdim:
        raise ValueError("dgates buffer must be (B, 4H)")
    with nogil:
        for b in range(bsz):
            for j in range(hdim):
                gi = gates[b, j]
                gf = gates[b, hdim + j]
                gg = gates[b, 2 * hdim + j]
                go = gates[b, 3 * hdim + j]
                tc = _tanh(c_t[b, j])
                dc = dc_next[b, j] + dh[b, j] * go * (<floating>1.0 - tc * tc)
                dgates[b, j] = dc * gg * gi * (<floating>1.0 - gi)
                dgates[b, hdim + j] = dc * c_prev[b, j] * gf * (<floating>1.0 - gf)
                dgates[b, 2 * hdim + j] = dc * gi * (<floating>1.0 - gg * gg)
                dgates[b, 3 * hdim + j] = dh[b, j] * tc * go * (<floating>1.0 - go)
                dc_prev[b, j] = dc * gf
