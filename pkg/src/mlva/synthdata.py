"""Synthetic paired corpora with known ground truth, plus the dataset
file formats (text records for diffability, packed binary for bulk
feature ingestion).

Each video is a sequence of concept segments: every frame is its
segment's visual prototype plus gaussian noise, and the language side
draws tokens from the segment concepts' disjoint vocabularies. Task
annotations (candidates, spans) follow from the generating concepts,
so chance-level and oracle behaviors are known by construction.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .tasks import QaAnnotation, SpanAnnotation

TEXT_FORMAT = "mlva.dataset"
BINARY_MAGIC = b"MLVA"
FORMAT_VERSION = 1
_TASKS = ("qa", "retrieval", "moment")
MIN_PROTO_ANGLE_DEG = 10.0


@dataclass(frozen=True)
class Vocabulary:
    size: int
    pad_id: int = 0
    sep_id: int = 1


@dataclass
class Concept:
    id: int
    prototype: np.ndarray        # D_s + D_m
    tokens: list[int]


@dataclass
class Sample:
    id: str
    frames: np.ndarray           # T x (D_s + D_m), float32
    static_dim: int
    motion_dim: int
    tokens: list[int]            # description / question / query
    qa: QaAnnotation | None = None
    span: SpanAnnotation | None = None   # moment ground truth

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class CorpusSpec:
    n_concepts: int = 16
    n_train: int = 512
    n_test: int = 128
    frames_per_video: int = 24
    segments_per_video: int = 3
    noise_sigma: float = 0.3
    task: str = "qa"
    n_candidates: int = 4
    vocab_size: int = 256
    static_dim: int = 64
    motion_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("n_concepts", "n_train", "n_test", "frames_per_video",
                     "segments_per_video", "vocab_size", "static_dim", "motion_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.task not in _TASKS:
            raise ConfigError(f"unknown task '{self.task}', expected one of {_TASKS}")
        if self.segments_per_video > self.n_concepts:
            raise ConfigError("segments_per_video cannot exceed n_concepts")
        if self.frames_per_video < self.segments_per_video:
            raise ConfigError("need at least one frame per segment")
        if self.task == "qa":
            if self.n_candidates < 2:
                raise ConfigError("QA needs at least 2 candidates")
            if self.n_candidates > self.n_concepts:
                raise ConfigError(
                    f"n_candidates {self.n_candidates} exceeds n_concepts {self.n_concepts}"
                )
            if self.n_candidates - 1 > self.n_concepts - self.segments_per_video:
                raise ConfigError(
                    "not enough off-video concepts to draw wrong candidates from"
                )
        if self.vocab_size < 2 + self.n_concepts:
            raise ConfigError("vocab_size must leave at least one token per concept")
        if self.task == "retrieval":
            capacity = math.comb(self.n_concepts + self.segments_per_video - 1,
                                 self.segments_per_video)
            if self.n_train + self.n_test > capacity:
                raise ConfigError(
                    f"{self.n_train + self.n_test} retrieval samples need unique "
                    f"concept multisets but only {capacity} exist"
                )

    @property
    def feature_dim(self) -> int:
        return self.static_dim + self.motion_dim


def make_concepts(spec: CorpusSpec, rng: np.random.Generator) -> list[Concept]:
    """Standard-normal prototypes (unit variance per coordinate, so
    noise_sigma reads as a per-coordinate perturbation fraction) with
    pairwise angles above 10 degrees and disjoint per-concept token
    ranges."""
    width = spec.feature_dim
    cos_cap = math.cos(math.radians(MIN_PROTO_ANGLE_DEG))
    for _ in range(100):
        protos = rng.standard_normal((spec.n_concepts, width))
        unit = protos / np.linalg.norm(protos, axis=1, keepdims=True)
        gram = np.abs(unit @ unit.T)
        np.fill_diagonal(gram, 0.0)
        if gram.max() < cos_cap:
            break
    else:
        raise ConfigError(
            f"could not place {spec.n_concepts} prototypes {MIN_PROTO_ANGLE_DEG} deg apart "
            f"in {width} dimensions"
        )
    per = (spec.vocab_size - 2) // spec.n_concepts
    concepts = []
    for c in range(spec.n_concepts):
        start = 2 + c * per
        concepts.append(Concept(
            id=c,
            prototype=protos[c].astype(np.float32),
            tokens=list(range(start, start + per)),
        ))
    return concepts


def _segment_intervals(n_frames: int, n_segments: int) -> list[tuple[int, int]]:
    base, rem = divmod(n_frames, n_segments)
    bounds, cursor = [], 0
    for s in range(n_segments):
        length = base + (1 if s < rem else 0)
        bounds.append((cursor, cursor + length - 1))
        cursor += length
    return bounds


def _draw_tokens(rng, concept: Concept, low: int, high: int) -> list[int]:
    count = int(rng.integers(low, high + 1))
    return [int(t) for t in rng.choice(concept.tokens, size=count)]


def generate_corpus(spec: CorpusSpec) -> tuple[list[Sample], list[Sample], Vocabulary]:
    """Deterministic (seeded) train/test corpora with disjoint sample ids.

    Retrieval corpora additionally enforce a unique concept set per
    video, so every description has exactly one matching video.
    """
    rng = np.random.default_rng(spec.seed)
    concepts = make_concepts(spec, rng)
    vocab = Vocabulary(size=spec.vocab_size)
    intervals = _segment_intervals(spec.frames_per_video, spec.segments_per_video)
    seen_sets: set[frozenset[int]] = set()

    def make_sample(sample_id: str) -> Sample:
        # retrieval draws with replacement and keeps concept multisets
        # unique corpus-wide (pooled video encodings are frame-order
        # invariant, so the multiset is what a description can identify);
        # qa/moment need distinct concepts so the asked segment is
        # unambiguous
        for _ in range(1000):
            segment_concepts = rng.choice(spec.n_concepts, size=spec.segments_per_video,
                                          replace=spec.task == "retrieval")
            if spec.task != "retrieval":
                break
            key = tuple(sorted(int(c) for c in segment_concepts))
            if key not in seen_sets:
                seen_sets.add(key)
                break
        else:
            raise ConfigError(
                "cannot draw a fresh concept combination; reduce sample count "
                "or raise n_concepts"
            )
        frames = np.empty((spec.frames_per_video, spec.feature_dim), dtype=np.float32)
        for (lo, hi), cid in zip(intervals, segment_concepts):
            proto = concepts[cid].prototype
            for t in range(lo, hi + 1):
                noise = rng.standard_normal(spec.feature_dim) * spec.noise_sigma
                frames[t] = proto + noise.astype(np.float32)

        if spec.task == "retrieval":
            tokens: list[int] = []
            for cid in segment_concepts:
                tokens.extend(_draw_tokens(rng, concepts[cid], 1, 2))
            return Sample(sample_id, frames, spec.static_dim, spec.motion_dim, tokens)

        asked_pos = int(rng.integers(spec.segments_per_video))
        asked = concepts[int(segment_concepts[asked_pos])]
        span = SpanAnnotation(*intervals[asked_pos])
        question = _draw_tokens(rng, asked, 2, 3)

        if spec.task == "moment":
            return Sample(sample_id, frames, spec.static_dim, spec.motion_dim,
                          question, span=span)

        correct = _draw_tokens(rng, asked, 1, 2)
        off_video = [c for c in range(spec.n_concepts)
                     if c not in set(int(x) for x in segment_concepts)]
        wrong_ids = rng.choice(off_video, size=spec.n_candidates - 1, replace=False)
        wrong = [_draw_tokens(rng, concepts[int(c)], 1, 2) for c in wrong_ids]
        correct_index = int(rng.integers(spec.n_candidates))
        candidates = wrong[:correct_index] + [correct] + wrong[correct_index:]
        qa = QaAnnotation(candidates=candidates, correct_index=correct_index, span=span)
        return Sample(sample_id, frames, spec.static_dim, spec.motion_dim, question, qa=qa)

    train = [make_sample(f"train-{i:04d}") for i in range(spec.n_train)]
    test = [make_sample(f"test-{i:04d}") for i in range(spec.n_test)]
    return train, test, vocab


# ---------------------------------------------------------------------------
# validation shared by both readers


def validate_sample(sample: Sample, vocab: Vocabulary, task: str,
                    static_dim: int, motion_dim: int) -> None:
    width = static_dim + motion_dim
    if sample.frames.ndim != 2 or sample.frames.shape[1] != width:
        raise DataError(
            f"sample '{sample.id}': frame width {sample.frames.shape} "
            f"does not match header width {width}"
        )
    if sample.n_frames < 1:
        raise DataError(f"sample '{sample.id}' has no frames")
    if not np.all(np.isfinite(sample.frames)):
        raise DataError(f"sample '{sample.id}' has non-finite frame features")
    all_tokens = list(sample.tokens)
    if sample.qa is not None:
        for cand in sample.qa.candidates:
            all_tokens.extend(cand)
    if not all_tokens:
        raise DataError(f"sample '{sample.id}' has no tokens")
    if min(all_tokens) < 0 or max(all_tokens) >= vocab.size:
        raise DataError(f"sample '{sample.id}' has token ids outside the vocabulary")
    if task == "qa":
        if sample.qa is None:
            raise DataError(f"sample '{sample.id}' lacks QA annotation")
        if sample.qa.span is not None and sample.qa.span.end >= sample.n_frames:
            raise DataError(f"sample '{sample.id}': span exceeds frame count")
    elif task == "moment":
        if sample.span is None:
            raise DataError(f"sample '{sample.id}' lacks a ground-truth span")
        if sample.span.end >= sample.n_frames:
            raise DataError(f"sample '{sample.id}': span exceeds frame count")


# ---------------------------------------------------------------------------
# text format: one json object per line, header first


def write_dataset(samples: Sequence[Sample], vocab: Vocabulary, task: str, path,
                  binary: bool = False) -> None:
    if task not in _TASKS:
        raise ConfigError(f"unknown task '{task}'")
    static_dim = samples[0].static_dim if samples else 0
    motion_dim = samples[0].motion_dim if samples else 0
    if binary:
        _write_binary(samples, vocab, task, path, static_dim, motion_dim)
        return
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": TEXT_FORMAT,
            "version": FORMAT_VERSION,
            "static_dim": static_dim,
            "motion_dim": motion_dim,
            "vocab_size": vocab.size,
            "pad_id": vocab.pad_id,
            "sep_id": vocab.sep_id,
            "task": task,
        }
        fh.write(json.dumps(header) + "\n")
        for sample in samples:
            fh.write(json.dumps(_sample_to_obj(sample)) + "\n")


def _sample_to_obj(sample: Sample) -> dict:
    obj = {
        "id": sample.id,
        "tokens": [int(t) for t in sample.tokens],
        "frames": [[float(x) for x in row] for row in sample.frames],
    }
    if sample.qa is not None:
        obj["qa"] = {
            "candidates": [[int(t) for t in cand] for cand in sample.qa.candidates],
            "correct_index": sample.qa.correct_index,
            "span": [sample.qa.span.start, sample.qa.span.end] if sample.qa.span else None,
        }
    if sample.span is not None:
        obj["span"] = [sample.span.start, sample.span.end]
    return obj


def _obj_to_sample(obj: dict, static_dim: int, motion_dim: int, line: int) -> Sample:
    try:
        frames = np.asarray(obj["frames"], dtype=np.float32)
        qa = None
        if obj.get("qa") is not None:
            qa_obj = obj["qa"]
            span = qa_obj.get("span")
            qa = QaAnnotation(
                candidates=[[int(t) for t in c] for c in qa_obj["candidates"]],
                correct_index=int(qa_obj["correct_index"]),
                span=SpanAnnotation(int(span[0]), int(span[1])) if span else None,
            )
        span = None
        if obj.get("span") is not None:
            span = SpanAnnotation(int(obj["span"][0]), int(obj["span"][1]))
        return Sample(
            id=str(obj["id"]),
            frames=frames if frames.ndim == 2 else frames.reshape(0, static_dim + motion_dim),
            static_dim=static_dim,
            motion_dim=motion_dim,
            tokens=[int(t) for t in obj["tokens"]],
            qa=qa,
            span=span,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"bad sample record: {exc}", line=line) from exc


def read_dataset(path) -> tuple[list[Sample], Vocabulary, str]:
    """Read either format back; rejects invariant-violating samples."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        return _read_binary(path)
    samples: list[Sample] = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise ParseError("missing header line", line=1)
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad header: {exc.msg}", line=1) from exc
        if header.get("format") != TEXT_FORMAT:
            raise ParseError("not a dataset file (unknown format field)", line=1)
        if header.get("version") != FORMAT_VERSION:
            raise ParseError(f"unsupported version {header.get('version')}", line=1)
        try:
            static_dim = int(header["static_dim"])
            motion_dim = int(header["motion_dim"])
            vocab = Vocabulary(size=int(header["vocab_size"]),
                               pad_id=int(header.get("pad_id", 0)),
                               sep_id=int(header.get("sep_id", 1)))
            task = str(header["task"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad header: {exc}", line=1) from exc
        if task not in _TASKS:
            raise ParseError(f"unknown task '{task}'", line=1)
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad record: {exc.msg}", line=lineno) from exc
            samples.append(_obj_to_sample(obj, static_dim, motion_dim, lineno))
    _finish_read(samples, vocab, task, static_dim, motion_dim)
    return samples, vocab, task


def _finish_read(samples, vocab, task, static_dim, motion_dim):
    seen = set()
    for sample in samples:
        if sample.id in seen:
            raise DataError(f"duplicate sample id '{sample.id}'")
        seen.add(sample.id)
        validate_sample(sample, vocab, task, static_dim, motion_dim)


# ---------------------------------------------------------------------------
# binary format: magic "MLVA", version 1, little-endian throughout.
# Header, then a manifest of (sample id, payload offset, frame count),
# then the packed payload. Intended for bulk ingestion of externally
# extracted features of any width.

_TASK_CODES = {"qa": 1, "retrieval": 2, "moment": 3}
_CODE_TASKS = {v: k for k, v in _TASK_CODES.items()}


def _write_binary(samples, vocab, task, path, static_dim, motion_dim) -> None:
    payload = io.BytesIO()
    manifest: list[tuple[str, int, int]] = []
    for sample in samples:
        offset = payload.tell()
        manifest.append((sample.id, offset, sample.n_frames))
        payload.write(struct.pack("<I", len(sample.tokens)))
        payload.write(np.asarray(sample.tokens, dtype="<u4").tobytes())
        payload.write(np.ascontiguousarray(sample.frames, dtype="<f4").tobytes())
        if task == "qa":
            qa = sample.qa
            payload.write(struct.pack("<B", len(qa.candidates)))
            for cand in qa.candidates:
                payload.write(struct.pack("<I", len(cand)))
                payload.write(np.asarray(cand, dtype="<u4").tobytes())
            payload.write(struct.pack("<I", qa.correct_index))
            if qa.span is not None:
                payload.write(struct.pack("<BII", 1, qa.span.start, qa.span.end))
            else:
                payload.write(struct.pack("<B", 0))
        elif task == "moment":
            payload.write(struct.pack("<II", sample.span.start, sample.span.end))
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IIIIII", FORMAT_VERSION, static_dim, motion_dim,
                             vocab.size, vocab.pad_id, vocab.sep_id))
        fh.write(struct.pack("<BI", _TASK_CODES[task], len(samples)))
        for sid, offset, t_fr in manifest:
            sid_bytes = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(sid_bytes)))
            fh.write(sid_bytes)
            fh.write(struct.pack("<QI", offset, t_fr))
        fh.write(payload.getvalue())


class _Cursor:
    """Bounds-checked little-endian reader."""

    def __init__(self, buf: bytes, base: int = 0):
        self.buf = buf
        self.pos = base

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ParseError(f"truncated file at byte {self.pos}")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise ParseError(f"truncated file at byte {self.pos}")
        out = self.buf[self.pos : self.pos + size]
        self.pos += size
        return out


def _read_binary(path) -> tuple[list[Sample], Vocabulary, str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob)
    if cur.raw(4) != BINARY_MAGIC:
        raise ParseError("bad magic bytes")
    version, static_dim, motion_dim, vocab_size, pad_id, sep_id = cur.unpack("<IIIIII")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported binary version {version}")
    task_code, n_samples = cur.unpack("<BI")
    task = _CODE_TASKS.get(task_code)
    if task is None:
        raise ParseError(f"unknown task code {task_code}")
    vocab = Vocabulary(size=vocab_size, pad_id=pad_id, sep_id=sep_id)
    width = static_dim + motion_dim
    manifest = []
    for _ in range(n_samples):
        (id_len,) = cur.unpack("<H")
        sid = cur.raw(id_len).decode("utf-8")
        offset, t_fr = cur.unpack("<QI")
        manifest.append((sid, offset, t_fr))
    payload_base = cur.pos
    samples = []
    for sid, offset, t_fr in manifest:
        rec = _Cursor(blob, payload_base + offset)
        (n_tokens,) = rec.unpack("<I")
        tokens = np.frombuffer(rec.raw(4 * n_tokens), dtype="<u4").astype(int).tolist()
        frames = np.frombuffer(rec.raw(4 * t_fr * width), dtype="<f4").reshape(t_fr, width)
        qa = None
        span = None
        if task == "qa":
            (n_cand,) = rec.unpack("<B")
            cands = []
            for _ in range(n_cand):
                (clen,) = rec.unpack("<I")
                cands.append(np.frombuffer(rec.raw(4 * clen), dtype="<u4").astype(int).tolist())
            (correct,) = rec.unpack("<I")
            (has_span,) = rec.unpack("<B")
            qa_span = None
            if has_span:
                s, e = rec.unpack("<II")
                qa_span = SpanAnnotation(s, e)
            try:
                qa = QaAnnotation(candidates=cands, correct_index=correct, span=qa_span)
            except DataError as exc:
                raise DataError(f"sample '{sid}': {exc}") from exc
        elif task == "moment":
            s, e = rec.unpack("<II")
            span = SpanAnnotation(s, e)
        samples.append(Sample(sid, frames.copy(), static_dim, motion_dim, tokens,
                              qa=qa, span=span))
    _finish_read(samples, vocab, task, static_dim, motion_dim)
    return samples, vocab, task
