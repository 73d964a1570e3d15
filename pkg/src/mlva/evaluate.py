"""Evaluation metrics and the similarity-heatmap export.

Reports are deterministic: samples are processed in dataset order and
ties resolve to the lowest index everywhere.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoders import FRAME_CAP, encode_text, encode_video
from .errors import ConfigError, DataError
from .synthdata import Sample
from .tasks import (
    moment_logits,
    moment_predict_span,
    qa_score_candidates,
    retrieval_rank,
    tiou,
)
from .trainer import Model

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    task: str
    n_samples: int
    accuracy: float | None = None
    recall: dict[str, dict[int, float]] | None = None
    tiou_rates: dict[float, float] | None = None

    def __post_init__(self):
        if self.recall is not None:
            for rates in self.recall.values():
                ks = sorted(rates)
                for a, b in zip(ks, ks[1:]):
                    assert rates[a] <= rates[b] + 1e-12, "recall must grow with K"
        if self.tiou_rates is not None:
            ts = sorted(self.tiou_rates)
            for a, b in zip(ts, ts[1:]):
                assert self.tiou_rates[a] >= self.tiou_rates[b] - 1e-12

    def to_lines(self) -> list[str]:
        lines = [f"task={self.task}", f"n_samples={self.n_samples}"]
        if self.accuracy is not None:
            lines.append(f"accuracy={self.accuracy:.6f}")
        if self.recall is not None:
            for direction in sorted(self.recall):
                for k in sorted(self.recall[direction]):
                    lines.append(f"{direction}_r_at_{k}={self.recall[direction][k]:.6f}")
        if self.tiou_rates is not None:
            for threshold in sorted(self.tiou_rates):
                key = str(threshold).replace(".", "_")
                lines.append(f"tiou_at_{key}={self.tiou_rates[threshold]:.6f}")
        return lines


def write_report(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.to_lines()) + "\n")


def eval_qa(samples: Sequence[Sample], model: Model) -> MetricReport:
    """Mean accuracy of argmax-candidate predictions."""
    if model.task != "qa" or model.qa_head is None:
        raise ConfigError(f"checkpoint was trained for '{model.task}', not qa")
    if not samples:
        raise DataError("empty test set")
    hits = 0
    for sample in samples:
        if sample.qa is None:
            raise DataError(f"sample '{sample.id}' lacks QA annotation")
        video = encode_video(sample.frames, model.video)
        logits = qa_score_candidates(video, sample.tokens, sample.qa, model.text,
                                     model.qa_head, model.vocab.sep_id)
        if int(np.argmax(logits.data)) == sample.qa.correct_index:
            hits += 1
    return MetricReport(task="qa", n_samples=len(samples), accuracy=hits / len(samples))


def eval_retrieval(samples: Sequence[Sample], model: Model,
                   ks: Sequence[int] = (1, 5, 10)) -> MetricReport:
    """R@K over the whole test pool, both query directions."""
    if not samples:
        raise DataError("empty test set")
    text_pool = []
    video_pool = []
    for sample in samples:
        text_pool.append(encode_text(sample.tokens, model.text).pooled.data)
        video_pool.append(encode_video(sample.frames, model.video).pooled.data)
    text_pool = np.stack(text_pool)
    video_pool = np.stack(video_pool)
    pool_size = len(samples)
    clamped = []
    for k in ks:
        if k > pool_size:
            log.warning("R@%d clamped to pool size %d", k, pool_size)
            k = pool_size
        clamped.append(k)
    recall = {"text_to_video": {}, "video_to_text": {}}
    ranks_tv = [retrieval_rank(text_pool[i], video_pool, i) for i in range(pool_size)]
    ranks_vt = [retrieval_rank(video_pool[i], text_pool, i) for i in range(pool_size)]
    for k_orig, k in zip(ks, clamped):
        recall["text_to_video"][int(k_orig)] = sum(r <= k for r in ranks_tv) / pool_size
        recall["video_to_text"][int(k_orig)] = sum(r <= k for r in ranks_vt) / pool_size
    return MetricReport(task="retrieval", n_samples=pool_size, recall=recall)


def eval_moment(samples: Sequence[Sample], model: Model,
                thresholds: Sequence[float] = (0.5, 0.7)) -> MetricReport:
    """Fraction of samples whose predicted span overlaps ground truth
    at each tIoU threshold."""
    if model.task != "moment" or model.moment_head is None:
        raise ConfigError(f"checkpoint was trained for '{model.task}', not moment")
    if not samples:
        raise DataError("empty test set")
    overlaps = []
    for sample in samples:
        if sample.span is None:
            raise DataError(f"sample '{sample.id}' lacks a ground-truth span")
        if sample.n_frames > FRAME_CAP:
            raise DataError(
                f"sample '{sample.id}': span-annotated videos must fit the "
                f"frame cap without subsampling ({sample.n_frames} frames)"
            )
        video = encode_video(sample.frames, model.video)
        query = encode_text(sample.tokens, model.text)
        start, end = moment_logits(video, query, model.moment_head)
        predicted = moment_predict_span(start, end)
        overlaps.append(tiou(predicted, sample.span))
    rates = {float(t): sum(o >= t for o in overlaps) / len(overlaps) for t in thresholds}
    return MetricReport(task="moment", n_samples=len(samples), tiou_rates=rates)


@dataclass
class Heatmap:
    row_labels: list[str]
    col_labels: list[str]
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.shape != (len(self.row_labels), len(self.col_labels)):
            raise DataError("heatmap matrix does not match its labels")


def heatmap_for_sample(sample: Sample, model: Model) -> Heatmap:
    """Segment-similarity grid: averaged (question+candidate, answer)
    encodings against every frame encoding."""
    if sample.qa is None:
        raise ConfigError(f"sample '{sample.id}' is not a QA sample")
    sep = model.vocab.sep_id
    video = encode_video(sample.frames, model.video)
    rows = []
    labels = []
    for cand in sample.qa.candidates:
        seq = list(sample.tokens) + [sep] + list(cand)
        full = encode_text(seq, model.text).pooled
        ans = encode_text(list(cand), model.text).pooled
        rows.append(T.scale(T.add(full, ans), 0.5))
        labels.append(" ".join(str(t) for t in seq))
    sims = T.cosine_matrix(T.stack_rows(rows), video.frames)
    cols = [str(t) for t in range(video.frames.shape[0])]
    return Heatmap(row_labels=labels, col_labels=cols, matrix=np.asarray(sims.data))


def export_heatmap(sample: Sample, model: Model, path) -> Heatmap:
    """Write the similarity grid as CSV with row/column labels."""
    heatmap = heatmap_for_sample(sample, model)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["language"] + heatmap.col_labels)
            for label, row in zip(heatmap.row_labels, heatmap.matrix):
                writer.writerow([label] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise IOError(f"cannot write heatmap to {path}: {exc}") from exc
    return heatmap
