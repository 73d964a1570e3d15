"""Kernel backend selection for the recurrent-cell inner loop.

Two interchangeable backends exist: a compiled Cython kernel
(`_lstm_ext`) and the pure-numpy implementation. On hosts with a
SIMD-enabled numpy the vectorized transcendentals make the numpy
backend as fast or faster at every batch size (see
benchmarks/bench_lstm.py), so it is the default; set
``MLVA_FORCE_EXT=1`` to select the compiled kernel where scalar C
beats the local numpy build. ``MLVA_FORCE_NUMPY=1`` pins the fallback
explicitly and takes precedence.
"""

import os

from . import numpy_backend

backend = numpy_backend
if os.environ.get("MLVA_FORCE_NUMPY") != "1" and os.environ.get("MLVA_FORCE_EXT") == "1":
    try:
        from . import _lstm_ext as backend  # type: ignore[no-redef]
    except ImportError:
        backend = numpy_backend

lstm_cell_forward = backend.lstm_cell_forward
lstm_cell_backward = backend.lstm_cell_backward
BACKEND_NAME = backend.NAME
