"""Global and segment alignment losses.

Both levels share the same contrastive hinge: the hardest (most
similar) negative pair is contrasted against each positive pair with a
fixed margin. Global alignment matches pooled text and video encodings
batch-wise; segment alignment matches question+answer encodings
against individual frame encodings inside one sample, split by the
annotated span.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor

log = logging.getLogger(__name__)

# guaranteed below any cosine value; added to diagonal entries so the
# row/column max can never pick the positive pair
_DIAG_MASK = -4.0


@dataclass
class AlignmentConfig:
    """Margin, loss weights, and negative-source toggles."""

    alpha: float = 0.2
    lambda1: float = 1.0
    lambda2: float = 1.0
    use_false_language: bool = True
    use_false_frames: bool = True
    symmetric_global: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"margin alpha must be >= 0, got {self.alpha}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights lambda1/lambda2 must be >= 0")


@dataclass
class LanguageView:
    """One question+answer rendering of a sample's text.

    `full` is the pooled encoding of the whole sequence (question,
    separator, answer); `answer` is the pooled encoding of the answer
    alone. For plain queries/descriptions the two are the same tensor,
    which makes the averaged segment vector collapse to the query
    encoding exactly.
    """

    full: Tensor
    answer: Tensor


@dataclass
class SegmentPairing:
    """Positive/negative structure of one sample for segment alignment."""

    true_language: LanguageView
    false_languages: list[LanguageView] = field(default_factory=list)
    true_frame_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.intp))
    false_frame_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.intp))


def global_similarity(text_pooled: Tensor, video_pooled: Tensor) -> Tensor:
    """Cosine similarity of the two pooled encodings."""
    return T.cosine_similarity(text_pooled, video_pooled)


def _stack_pooled(items) -> Tensor:
    if isinstance(items, Tensor):
        return items
    return T.stack_rows(list(items))


def global_alignment_loss(batch_text, batch_video, cfg: AlignmentConfig) -> Tensor:
    """Batch-wise hardest-negative hinge over pooled encodings.

    Row i of each stack is the matching pair. For each text anchor the
    hardest negative is the most similar non-matching video (and
    symmetrically per video anchor when enabled); the loss is the mean
    over all anchor hinge terms.
    """
    text = _stack_pooled(batch_text)
    video = _stack_pooled(batch_video)
    if text.shape != video.shape or text.data.ndim != 2:
        raise DimensionError(
            f"pooled stacks must be equal (B, H) matrices, got {text.shape} and {video.shape}"
        )
    bsz = text.shape[0]
    if bsz < 2:
        raise ConfigError(f"global alignment needs a batch of >= 2, got {bsz}")
    sims = T.cosine_matrix(text, video)
    diag_idx = np.arange(bsz, dtype=np.intp) * (bsz + 1)
    pos = T.take(sims, diag_idx)
    mask = Tensor(np.asarray(np.eye(bsz) * _DIAG_MASK, dtype=text.dtype))
    masked = T.add(sims, mask)
    neg_text_anchor = T.reduce_max(masked, axis=1)
    hinges = [T.hinge_margin(neg_text_anchor, pos, cfg.alpha)]
    if cfg.symmetric_global:
        neg_video_anchor = T.reduce_max(masked, axis=0)
        hinges.append(T.hinge_margin(neg_video_anchor, pos, cfg.alpha))
    terms = hinges[0] if len(hinges) == 1 else T.concat(hinges, axis=-1)
    return T.reduce_mean(terms)


def segment_similarity(lang_full: Tensor, lang_answer: Tensor, frame: Tensor) -> Tensor:
    """cos of the averaged language pair against one frame encoding."""
    averaged = T.scale(T.add(lang_full, lang_answer), 0.5)
    return T.cosine_similarity(averaged, frame)


def _averaged_language_matrix(views: Sequence[LanguageView]) -> Tensor:
    rows = [T.scale(T.add(v.full, v.answer), 0.5) for v in views]
    return T.stack_rows(rows)


def _segment_core(avg_lang_rows: Tensor, frame_rows: Tensor, true_idx: np.ndarray,
                  false_idx: np.ndarray, n_false_langs: int,
                  cfg: AlignmentConfig) -> Tensor:
    """Hardest-negative hinge given averaged language rows (row 0 = true
    language, rows 1.. = false languages)."""
    nfr = frame_rows.shape[0]
    sims = T.cosine_matrix(avg_lang_rows, frame_rows)  # (1 + n_false) x T
    pos = T.take(sims, true_idx)  # row 0
    neg_flat: list[np.ndarray] = []
    if cfg.use_false_language and n_false_langs:
        rows = 1 + np.arange(n_false_langs, dtype=np.intp)
        neg_flat.append((rows[:, None] * nfr + true_idx[None, :]).reshape(-1))
    if cfg.use_false_frames and false_idx.size:
        neg_flat.append(false_idx)
    if not neg_flat:
        n_empty = int(n_false_langs == 0) + int(false_idx.size == 0)
        if n_empty >= 2:
            raise ConfigError(
                "sample offers neither false languages nor false frames; "
                "no negative alignment can be formed"
            )
        log.warning("segment alignment skipped: no negatives under current toggles")
        return Tensor(np.zeros((), dtype=frame_rows.dtype))
    neg = T.take(sims, np.concatenate(neg_flat).astype(np.intp))
    hardest = T.reduce_max(neg)
    hinges = T.hinge_margin(hardest, pos, cfg.alpha)
    return T.reduce_mean(hinges)


def segment_alignment_loss(pairing: SegmentPairing, frame_rows: Tensor,
                           cfg: AlignmentConfig) -> Tensor:
    """Sample-wise hardest-negative hinge over (language, frame) pairs.

    Positives pair the true language with every true-span frame.
    Negatives pair false languages with true frames and/or the true
    language with out-of-span frames, per the config toggles. All
    positives share the single hardest negative. Negative enumeration
    order (false-language block row-major, then false frames) only
    affects which pair receives gradient on ties.
    """
    if not (cfg.use_false_language or cfg.use_false_frames):
        raise ConfigError("segment alignment needs at least one negative source enabled")
    nfr = frame_rows.shape[0]
    true_idx = np.asarray(pairing.true_frame_indices, dtype=np.intp)
    false_idx = np.asarray(pairing.false_frame_indices, dtype=np.intp)
    if true_idx.size == 0:
        raise DataError("segment pairing has no true frames")
    both = np.concatenate([true_idx, false_idx])
    if both.min() < 0 or both.max() >= nfr:
        raise DataError(f"frame index out of range for {nfr} frames")
    if np.intersect1d(true_idx, false_idx).size:
        raise DataError("true and false frame index sets overlap")
    views = [pairing.true_language] + list(pairing.false_languages)
    langs = _averaged_language_matrix(views)
    return _segment_core(langs, frame_rows, true_idx, false_idx,
                         len(pairing.false_languages), cfg)


def combined_loss(l_task: Tensor, l_glob: Tensor, l_seg: Tensor,
                  cfg: AlignmentConfig) -> Tensor:
    """Weighted training objective: task + lambda1*global + lambda2*segment."""
    for name, t in (("task", l_task), ("global", l_glob), ("segment", l_seg)):
        if t.data.shape != ():
            raise DataError(f"{name} loss must be scalar, got shape {t.shape}")
    return T.add(l_task, T.add(T.scale(l_glob, cfg.lambda1), T.scale(l_seg, cfg.lambda2)))
