"""Pure-numpy implementation of the fused recurrent-cell kernels.

This is the fallback backend; the compiled extension in ``_lstm_ext``
implements the same two entry points with identical semantics. Gate
layout along the last axis is [input, forget, candidate, output], each
block of width H.
"""

import numpy as np
from scipy.special import expit

NAME = "numpy"


def lstm_cell_forward(gates, c_prev, c_out, h_out):
    """Activate pre-activation gates in place and advance the cell state.

    gates: (B, 4H) pre-activations, overwritten with activated values.
    c_prev: (B, H) previous cell state (read-only).
    c_out, h_out: (B, H) buffers receiving the new cell/hidden state.
    """
    hdim = c_prev.shape[1]
    i = gates[:, 0 * hdim : 1 * hdim]
    f = gates[:, 1 * hdim : 2 * hdim]
    g = gates[:, 2 * hdim : 3 * hdim]
    o = gates[:, 3 * hdim : 4 * hdim]
    i[:] = expit(i)
    f[:] = expit(f)
    g[:] = np.tanh(g)
    o[:] = expit(o)
    np.multiply(f, c_prev, out=c_out)
    c_out += i * g
    np.tanh(c_out, out=h_out)
    h_out *= o


def lstm_cell_backward(gates, c_prev, c_t, dh, dc_next, dgates, dc_prev):
    """One step of backprop through time for the activated cell.

    gates: (B, 4H) activated gate values saved by the forward pass.
    c_prev, c_t: (B, H) cell states before/after the step.
    dh: (B, H) gradient w.r.t. the step's hidden output.
    dc_next: (B, H) gradient w.r.t. c_t flowing in from step t+1.
    dgates: (B, 4H) output buffer, gradient w.r.t. pre-activation gates.
    dc_prev: (B, H) output buffer, gradient w.r.t. c_prev.
    """
    hdim = c_prev.shape[1]
    i = gates[:, 0 * hdim : 1 * hdim]
    f = gates[:, 1 * hdim : 2 * hdim]
    g = gates[:, 2 * hdim : 3 * hdim]
    o = gates[:, 3 * hdim : 4 * hdim]
    tc = np.tanh(c_t)
    dc = dc_next + dh * o * (1.0 - tc * tc)
    dgates[:, 0 * hdim : 1 * hdim] = dc * g * i * (1.0 - i)
    dgates[:, 1 * hdim : 2 * hdim] = dc * c_prev * f * (1.0 - f)
    dgates[:, 2 * hdim : 3 * hdim] = dc * i * (1.0 - g * g)
    dgates[:, 3 * hdim : 4 * hdim] = dh * tc * o * (1.0 - o)
    np.multiply(dc, f, out=dc_prev)
