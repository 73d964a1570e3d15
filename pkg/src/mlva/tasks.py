"""Task decoders and metrics: multi-choice QA, retrieval ranking, and
moment-span prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoders import TextEncoderParams, TextEncoding, VideoEncoding, encode_text
from .errors import DataError, DimensionError, EmptySequenceError
from .tensor import NORM_EPS, Tensor


@dataclass(frozen=True)
class SpanAnnotation:
    """Inclusive frame interval [start, end]."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise DataError(f"invalid span [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class QaAnnotation:
    candidates: list[list[int]]
    correct_index: int
    span: SpanAnnotation | None = None

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise DataError("QA needs at least two candidate answers")
        if not (0 <= self.correct_index < len(self.candidates)):
            raise DataError(
                f"correct_index {self.correct_index} out of range "
                f"for {len(self.candidates)} candidates"
            )


@dataclass
class QaDecoderParams:
    """MLP over [E_L; E_V; E_L*E_V] producing one logit per candidate."""

    w_hidden: Tensor   # 3H x H
    b_hidden: Tensor   # H
    w_out: Tensor      # H x 1
    b_out: Tensor      # 1


@dataclass
class MomentHeadParams:
    w_hidden: Tensor   # 2H x H
    b_hidden: Tensor   # H
    w_out: Tensor      # H x 1
    b_out: Tensor      # 1


@dataclass
class MomentDecoderParams:
    start: MomentHeadParams
    end: MomentHeadParams


def _mlp_logits(rows: Tensor, w_hidden, b_hidden, w_out, b_out) -> Tensor:
    hidden = T.tanh(T.add_rowvec(T.matmul(rows, w_hidden), b_hidden))
    out = T.add_rowvec(T.matmul(hidden, w_out), b_out)
    return T.reshape(out, (rows.shape[0],))


def qa_candidate_features(text_pooled: Tensor, video_pooled: Tensor) -> Tensor:
    """Feature rows [E_L; E_V; E_L*E_V] for stacked candidate encodings."""
    if text_pooled.shape != video_pooled.shape:
        raise DimensionError(
            f"candidate/video encodings disagree: {text_pooled.shape} vs {video_pooled.shape}"
        )
    return T.concat([text_pooled, video_pooled, T.mul(text_pooled, video_pooled)], axis=-1)


def qa_head_logits(features: Tensor, params: QaDecoderParams) -> Tensor:
    return _mlp_logits(features, params.w_hidden, params.b_hidden,
                       params.w_out, params.b_out)


def qa_score_candidates(video: VideoEncoding, question: Sequence[int],
                        annotation: QaAnnotation, text_params: TextEncoderParams,
                        head: QaDecoderParams, sep_id: int) -> Tensor:
    """One logit per candidate: encode question+sep+candidate, apply the head."""
    pooled = []
    for cand in annotation.candidates:
        seq = list(question) + [sep_id] + list(cand)
        pooled.append(encode_text(seq, text_params).pooled)
    text_rows = T.stack_rows(pooled)
    video_rows = T.stack_rows([video.pooled] * len(pooled))
    return qa_head_logits(qa_candidate_features(text_rows, video_rows), head)


def qa_loss(logits: Tensor, correct_index: int) -> Tensor:
    """Softmax cross-entropy against the correct candidate."""
    return T.cross_entropy(logits, correct_index)


def _pool_scores(query: np.ndarray, pool: np.ndarray) -> np.ndarray:
    qn = max(float(np.sqrt(np.dot(query, query))), NORM_EPS)
    scores = np.empty(pool.shape[0], dtype=np.float64)
    for j in range(pool.shape[0]):
        row = pool[j]
        rn = max(float(np.sqrt(np.dot(row, row))), NORM_EPS)
        scores[j] = float(np.dot(query, row)) / (qn * rn)
    return scores


def retrieval_rank(query, pool, true_index: int) -> int:
    """1-based rank of the true item when the pool is sorted by
    descending cosine similarity; ties rank the lower pool index first."""
    if isinstance(query, Tensor):
        query = query.data
    pool_arr = np.stack([p.data if isinstance(p, Tensor) else np.asarray(p) for p in pool]) \
        if not isinstance(pool, np.ndarray) else pool
    if pool_arr.shape[0] == 0:
        raise DataError("retrieval pool is empty")
    if not (0 <= true_index < pool_arr.shape[0]):
        raise DataError(f"true_index {true_index} out of range for pool {pool_arr.shape[0]}")
    scores = _pool_scores(np.asarray(query), pool_arr)
    s_true = scores[true_index]
    better = int((scores > s_true).sum())
    tied_before = int((scores[:true_index] == s_true).sum())
    return 1 + better + tied_before


def moment_logits(video: VideoEncoding, query: TextEncoding,
                  params: MomentDecoderParams) -> tuple[Tensor, Tensor]:
    """Per-frame start/end logits from [E_f_t; E_L] rows."""
    nfr = video.frames.shape[0]
    if nfr < 1:
        raise EmptySequenceError("moment decoding needs at least one frame")
    query_rows = T.stack_rows([query.pooled] * nfr)
    rows = T.concat([video.frames, query_rows], axis=-1)
    start = _mlp_logits(rows, params.start.w_hidden, params.start.b_hidden,
                        params.start.w_out, params.start.b_out)
    end = _mlp_logits(rows, params.end.w_hidden, params.end.b_hidden,
                      params.end.w_out, params.end.b_out)
    return start, end


def moment_loss(start_logits: Tensor, end_logits: Tensor, span: SpanAnnotation) -> Tensor:
    """Cross-entropy on the start frame plus cross-entropy on the end frame."""
    nfr = start_logits.shape[0]
    if span.end >= nfr:
        raise DataError(f"span [{span.start}, {span.end}] exceeds {nfr} frames")
    return T.add(T.cross_entropy(start_logits, span.start),
                 T.cross_entropy(end_logits, span.end))


def moment_predict_span(start_logits, end_logits) -> SpanAnnotation:
    """argmax over pairs s <= e of start[s] + end[e]; ties prefer the
    smallest s, then the smallest e."""
    s = start_logits.data if isinstance(start_logits, Tensor) else np.asarray(start_logits)
    e = end_logits.data if isinstance(end_logits, Tensor) else np.asarray(end_logits)
    if s.ndim != 1 or s.shape != e.shape or s.size == 0:
        raise DimensionError(f"logit shapes disagree: {s.shape} vs {e.shape}")
    best_s = 0
    best = (float(s[0] + e[0]), 0, 0)
    for t in range(s.size):
        if s[t] > s[best_s]:
            best_s = t
        total = float(s[best_s] + e[t])
        if total > best[0]:
            best = (total, best_s, t)
    return SpanAnnotation(start=best[1], end=best[2])


def tiou(a: SpanAnnotation, b: SpanAnnotation) -> float:
    """Temporal IoU of two inclusive frame intervals, on frame counts."""
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union
