"""Text and video encoders.

Text: token embedding -> single-layer unidirectional LSTM -> attention
pooling with one learnable query. Video: per-frame MLP over the
concatenated static+motion features -> the same attention pooling.
Both pooled outputs are convex combinations of their per-step
encodings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DataError, DimensionError, EmptySequenceError
from .tensor import Tensor

FRAME_CAP = 64


@dataclass
class TextEncoderParams:
    embedding: Tensor      # V x D_e
    wx: Tensor             # D_e x 4H, gate blocks [input, forget, candidate, output]
    wh: Tensor             # H x 4H
    bias: Tensor           # 4H
    query: Tensor          # H

    @property
    def hidden_dim(self) -> int:
        return self.query.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]


@dataclass
class VideoEncoderParams:
    w_in: Tensor           # (D_s + D_m) x H
    b_in: Tensor           # H
    w_out: Tensor          # H x H
    b_out: Tensor          # H
    query: Tensor          # H

    @property
    def hidden_dim(self) -> int:
        return self.query.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_in.shape[0]


@dataclass
class TextEncoding:
    words: Tensor    # T x H per-word states
    pooled: Tensor   # H


@dataclass
class VideoEncoding:
    frames: Tensor   # T x H per-frame encodings
    pooled: Tensor   # H


@dataclass
class BatchTextEncoding:
    """Padded batch of encoded sequences."""

    hidden: Tensor            # B x T_max x H
    lengths: np.ndarray       # B
    pooled: Tensor            # B x H


def attention_pool(rows: Tensor, query: Tensor) -> Tensor:
    """softmax(rows . query / sqrt(H)) weighted sum of the rows."""
    if rows.data.ndim != 2:
        raise DimensionError(f"attention_pool needs (T, H) rows, got {rows.shape}")
    if rows.shape[0] == 0:
        raise EmptySequenceError("attention_pool over an empty sequence")
    nrows, width = rows.shape
    scores = T.scale(T.matvec_lastdim(rows, query), 1.0 / math.sqrt(width))
    weights = T.softmax(scores)
    pooled = T.matmul(T.reshape(weights, (1, nrows)), rows)
    return T.reshape(pooled, (width,))


def _pool_batch(rows: Tensor, query: Tensor, lengths: np.ndarray | None) -> Tensor:
    width = rows.shape[-1]
    scores = T.scale(T.matvec_lastdim(rows, query), 1.0 / math.sqrt(width))
    weights = T.softmax_rows(scores, lengths)
    return T.weighted_rows_sum(rows, weights)


def encode_text_batch(token_seqs: Sequence[Sequence[int]],
                      params: TextEncoderParams) -> BatchTextEncoding:
    """Encode a batch of variable-length token sequences, padded with 0.

    Padding steps get exactly zero attention weight, so they contribute
    neither to the pooled encodings nor to any gradient.
    """
    if not token_seqs:
        raise EmptySequenceError("encode_text_batch of zero sequences")
    lengths = np.array([len(s) for s in token_seqs], dtype=np.intp)
    if lengths.min() < 1:
        raise EmptySequenceError("cannot encode an empty token sequence")
    tmax = int(lengths.max())
    ids = np.zeros((len(token_seqs), tmax), dtype=np.intp)
    for i, seq in enumerate(token_seqs):
        seq = np.asarray(seq, dtype=np.intp)
        if seq.min() < 0 or seq.max() >= params.vocab_size:
            raise DataError(
                f"token id out of vocabulary (sequence {i}, vocab {params.vocab_size})"
            )
        ids[i, : len(seq)] = seq
    embedded = T.embedding_lookup(params.embedding, ids)
    hidden = T.lstm_sequence(embedded, params.wx, params.wh, params.bias)
    pooled = _pool_batch(hidden, params.query, lengths)
    return BatchTextEncoding(hidden=hidden, lengths=lengths, pooled=pooled)


def encode_text(tokens: Sequence[int], params: TextEncoderParams) -> TextEncoding:
    """Encode one token sequence into per-word states and a pooled vector."""
    batch = encode_text_batch([list(tokens)], params)
    nsteps = len(tokens)
    hdim = params.hidden_dim
    words = T.reshape(batch.hidden, (nsteps, hdim))
    pooled = T.reshape(batch.pooled, (hdim,))
    return TextEncoding(words=words, pooled=pooled)


def subsample_indices(n_frames: int, cap: int = FRAME_CAP) -> np.ndarray:
    """Uniform index subsampling for sequences longer than the cap."""
    if n_frames <= cap:
        return np.arange(n_frames, dtype=np.intp)
    return (np.arange(cap, dtype=np.intp) * n_frames) // cap


def _frame_mlp(flat: Tensor, params: VideoEncoderParams) -> Tensor:
    hidden = T.tanh(T.add_rowvec(T.matmul(flat, params.w_in), params.b_in))
    return T.add_rowvec(T.matmul(hidden, params.w_out), params.b_out)


def encode_video(frames, params: VideoEncoderParams) -> VideoEncoding:
    """Encode (T, D_s + D_m) frame features; caps T by uniform subsampling.

    Raw arrays are cast to the encoder's dtype; a Tensor input keeps
    its own dtype (and its gradient path, if any).
    """
    if not isinstance(frames, Tensor):
        frames = Tensor(np.asarray(frames, dtype=params.w_in.dtype))
    if frames.data.ndim != 2:
        raise DataError(f"frame features must be (T, D), got {frames.shape}")
    if frames.shape[0] == 0:
        raise EmptySequenceError("cannot encode a zero-frame video")
    if frames.shape[1] != params.feature_dim:
        raise DataError(
            f"frame feature width {frames.shape[1]} does not match "
            f"encoder width {params.feature_dim}"
        )
    if frames.shape[0] > FRAME_CAP:
        frames = T.gather_rows(frames, subsample_indices(frames.shape[0]))
    encoded = _frame_mlp(frames, params)
    pooled = attention_pool(encoded, params.query)
    return VideoEncoding(frames=encoded, pooled=pooled)


@dataclass
class BatchVideoEncoding:
    frames_flat: Tensor       # (B*T) x H, per-frame encodings, row-major by sample
    n_frames: int             # frames per sample (uniform within a batch)
    pooled: Tensor            # B x H


def encode_video_batch(frame_arrays: Sequence[np.ndarray],
                       params: VideoEncoderParams) -> BatchVideoEncoding:
    """Encode same-length videos in one pass (training batches)."""
    if not frame_arrays:
        raise EmptySequenceError("encode_video_batch of zero videos")
    nfr = frame_arrays[0].shape[0]
    for arr in frame_arrays:
        if arr.ndim != 2 or arr.shape[1] != params.feature_dim:
            raise DataError(f"frame feature width mismatch: {arr.shape}")
        if arr.shape[0] != nfr:
            raise DataError("encode_video_batch needs equal frame counts")
    if nfr == 0:
        raise EmptySequenceError("cannot encode zero-frame videos")
    if nfr > FRAME_CAP:
        idx = subsample_indices(nfr)
        frame_arrays = [arr[idx] for arr in frame_arrays]
        nfr = len(idx)
    batch = len(frame_arrays)
    hdim = params.hidden_dim
    flat_in = Tensor(np.concatenate(frame_arrays, axis=0).astype(params.w_in.dtype))
    flat = _frame_mlp(flat_in, params)
    rows = T.reshape(flat, (batch, nfr, hdim))
    pooled = _pool_batch(rows, params.query, None)
    return BatchVideoEncoding(frames_flat=flat, n_frames=nfr, pooled=pooled)
