"""End-to-end gradient-integrity checks, runnable from the CLI.

The headline check differentiates the full combined objective (task +
global + segment terms) on a tiny two-sample batch in float64 and
compares against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .alignment import AlignmentConfig, combined_loss
from .gradcheck import finite_diff_check
from .synthdata import CorpusSpec, generate_corpus
from .tensor import Tensor
from . import tensor as T
from .trainer import TrainConfig, _forward_qa, init_model

GRADCHECK_TOLERANCE = 1e-4


def tiny_qa_setup(seed: int = 0):
    """A two-sample QA batch and a float64 model small enough to
    finite-difference in seconds."""
    spec = CorpusSpec(
        n_concepts=4, n_train=2, n_test=1, frames_per_video=5,
        segments_per_video=2, noise_sigma=0.2, task="qa", n_candidates=2,
        vocab_size=12, static_dim=3, motion_dim=2, seed=seed,
    )
    train, _, vocab = generate_corpus(spec)
    cfg = TrainConfig(
        epochs=1, batch_size=2, seed=seed, embed_dim=3, hidden_dim=4,
        dtype="float64",
        align=AlignmentConfig(alpha=0.2, lambda1=1.0, lambda2=1.0),
    )
    rng = np.random.default_rng([cfg.seed])
    model = init_model("qa", vocab, spec.static_dim, spec.motion_dim, cfg, rng)
    return train, model, cfg


def combined_loss_gradcheck(seed: int = 0, h: float = 1e-4) -> float:
    """Max relative error of the analytic gradient of the full combined
    loss (all three terms active) on the tiny batch.

    The step is larger than the library default: the objective is O(1),
    so at 1e-5 the central-difference roundoff (~eps*|f|/2h) exceeds
    the 1e-8 relative floor on coordinates whose true gradient is
    negligible. 1e-4 keeps roundoff below the floor while staying well
    inside the smooth region between hinge/argmax kinks on the checked
    batches.
    """
    batch, model, cfg = tiny_qa_setup(seed)

    def objective(_params):
        l_task, l_glob, l_seg = _forward_qa(batch, model, cfg)
        return combined_loss(l_task, l_glob, l_seg, cfg.align)

    return finite_diff_check(objective, list(model.params.values()), h=h)


def op_spot_checks(seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    """Finite-difference spot checks for the individual primitives."""
    rng = np.random.default_rng(seed)
    out: dict[str, float] = {}

    def check(name, fn, arrays):
        params = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
        out[name] = finite_diff_check(lambda ps: fn(*ps), params, h=h)

    check("matmul", lambda a, b: T.reduce_sum(T.tanh(T.matmul(a, b))),
          [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
    check("softmax", lambda x: T.reduce_sum(T.mul(T.softmax(x), x)),
          [rng.standard_normal(4)])
    check("cosine", lambda u, v: T.cosine_similarity(u, v),
          [rng.standard_normal(5), rng.standard_normal(5)])
    check("lstm", lambda x, wx, wh, b: T.reduce_mean(T.lstm_sequence(x, wx, wh, b)),
          [rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 8)) * 0.5,
           rng.standard_normal((2, 8)) * 0.5, rng.standard_normal(8) * 0.1])
    check("hinge", lambda a, b: T.hinge_margin(a, b, 0.3),
          [np.asarray(0.4), np.asarray(0.2)])
    return out


def run_suite(seed: int = 0) -> tuple[dict[str, float], bool]:
    """All checks with their max relative errors and the overall verdict."""
    results = op_spot_checks(seed=seed)
    results["combined_loss"] = combined_loss_gradcheck(seed=seed)
    ok = all(v < GRADCHECK_TOLERANCE for v in results.values())
    return results, ok
