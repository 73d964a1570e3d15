"""Benchmark the compiled recurrent-cell kernel against the numpy
fallback on a training-shaped workload.

Run:  python benchmarks/bench_lstm.py [--batch 256] [--steps 6] [--iters 30]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mlva import kernels
from mlva.kernels import numpy_backend
from mlva.tensor import Graph, Tensor, backward, lstm_sequence, reduce_mean


def candidates():
    found = [("numpy", numpy_backend)]
    try:
        from mlva.kernels import _lstm_ext

        found.insert(0, ("cython", _lstm_ext))
    except ImportError:
        pass
    return found


def run_once(batch, steps, din, hdim, iters, dtype):
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((batch, steps, din)).astype(dtype))
    wx = Tensor((rng.standard_normal((din, 4 * hdim)) * 0.1).astype(dtype), requires_grad=True)
    wh = Tensor((rng.standard_normal((hdim, 4 * hdim)) * 0.1).astype(dtype), requires_grad=True)
    b = Tensor(np.zeros(4 * hdim, dtype=dtype), requires_grad=True)
    t0 = time.perf_counter()
    for _ in range(iters):
        wx.grad = wh.grad = b.grad = None
        with Graph():
            loss = reduce_mean(lstm_sequence(x, wx, wh, b))
        backward(loss)
    elapsed = (time.perf_counter() - t0) / iters
    return elapsed, float(loss.data), wx.grad.sum()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--steps", type=int, default=6)
    ap.add_argument("--din", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--iters", type=int, default=30)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()
    dtype = np.float32 if args.dtype == "float32" else np.float64

    results = {}
    for name, backend in candidates():
        kernels.lstm_cell_forward = backend.lstm_cell_forward
        kernels.lstm_cell_backward = backend.lstm_cell_backward
        # warm up, then measure
        run_once(args.batch, args.steps, args.din, args.hidden, 3, dtype)
        elapsed, loss, gsum = run_once(args.batch, args.steps, args.din,
                                       args.hidden, args.iters, dtype)
        results[name] = elapsed
        print(f"{name:>7}: {elapsed * 1e3:8.3f} ms/iter  (loss={loss:.6f}, "
              f"grad checksum={gsum:.6f})")
    if "cython" in results:
        print(f"speedup: {results['numpy'] / results['cython']:.2f}x "
              f"(numpy/cython, fwd+bwd)")
    else:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
