"""Deterministic training loop: batching, the combined objective,
optimizer steps, and resume-capable checkpoints.

Everything downstream of (seed, config, data) is bitwise reproducible
on one platform: parameter init draws from one seeded stream, epoch
shuffles are stateless functions of (seed, epoch), and op order within
a step is fixed.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .alignment import AlignmentConfig, _segment_core, combined_loss, global_alignment_loss
from .encoders import (
    TextEncoderParams,
    VideoEncoderParams,
    encode_text_batch,
    encode_video_batch,
)
from .errors import CheckpointError, ConfigError, DataError
from .optim import AdamWState, adamw_step, clip_grads, zero_grads
from .synthdata import Sample, Vocabulary
from .tasks import MomentDecoderParams, MomentHeadParams, QaDecoderParams, \
    qa_candidate_features, qa_head_logits
from .tensor import Graph, Tensor, backward

CHECKPOINT_MAGIC = b"MLVC"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    seed: int = 0
    embed_dim: int = 64
    hidden_dim: int = 128
    grad_clip: float | None = None
    checkpoint_every: int = 10
    dtype: str = "float32"
    align: AlignmentConfig = field(default_factory=AlignmentConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.align.lambda1 > 0 and self.batch_size < 2:
            raise ConfigError("global alignment needs batch_size >= 2 for in-batch negatives")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype '{self.dtype}'")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("model dims must be positive")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class Model:
    task: str
    vocab: Vocabulary
    static_dim: int
    motion_dim: int
    embed_dim: int
    hidden_dim: int
    dtype: str
    params: dict[str, Tensor]
    text: TextEncoderParams
    video: VideoEncoderParams
    qa_head: QaDecoderParams | None = None
    moment_head: MomentDecoderParams | None = None


def _param_shapes(task: str, vocab_size: int, feature_dim: int,
                  embed_dim: int, hidden_dim: int) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) for every learnable tensor, in canonical order.

    fan_in 0 means zero-init (biases)."""
    h, h4 = hidden_dim, 4 * hidden_dim
    shapes = [
        ("text.embedding", (vocab_size, embed_dim), embed_dim),
        ("text.wx", (embed_dim, h4), embed_dim),
        ("text.wh", (h, h4), h),
        ("text.bias", (h4,), 0),
        ("text.query", (h,), h),
        ("video.w_in", (feature_dim, h), feature_dim),
        ("video.b_in", (h,), 0),
        ("video.w_out", (h, h), h),
        ("video.b_out", (h,), 0),
        ("video.query", (h,), h),
    ]
    if task == "qa":
        shapes += [
            ("qa.w_hidden", (3 * h, h), 3 * h),
            ("qa.b_hidden", (h,), 0),
            ("qa.w_out", (h, 1), h),
            ("qa.b_out", (1,), 0),
        ]
    elif task == "moment":
        for head in ("start", "end"):
            shapes += [
                (f"moment.{head}.w_hidden", (2 * h, h), 2 * h),
                (f"moment.{head}.b_hidden", (h,), 0),
                (f"moment.{head}.w_out", (h, 1), h),
                (f"moment.{head}.b_out", (1,), 0),
            ]
    return shapes


def _wire_model(task: str, vocab: Vocabulary, static_dim: int, motion_dim: int,
                embed_dim: int, hidden_dim: int, dtype: str,
                params: dict[str, Tensor]) -> Model:
    text = TextEncoderParams(
        embedding=params["text.embedding"], wx=params["text.wx"], wh=params["text.wh"],
        bias=params["text.bias"], query=params["text.query"],
    )
    video = VideoEncoderParams(
        w_in=params["video.w_in"], b_in=params["video.b_in"],
        w_out=params["video.w_out"], b_out=params["video.b_out"],
        query=params["video.query"],
    )
    qa_head = None
    moment_head = None
    if task == "qa":
        qa_head = QaDecoderParams(params["qa.w_hidden"], params["qa.b_hidden"],
                                  params["qa.w_out"], params["qa.b_out"])
    elif task == "moment":
        heads = {
            name: MomentHeadParams(
                params[f"moment.{name}.w_hidden"], params[f"moment.{name}.b_hidden"],
                params[f"moment.{name}.w_out"], params[f"moment.{name}.b_out"])
            for name in ("start", "end")
        }
        moment_head = MomentDecoderParams(start=heads["start"], end=heads["end"])
    return Model(task=task, vocab=vocab, static_dim=static_dim, motion_dim=motion_dim,
                 embed_dim=embed_dim, hidden_dim=hidden_dim, dtype=dtype, params=params,
                 text=text, video=video, qa_head=qa_head, moment_head=moment_head)


def init_model(task: str, vocab: Vocabulary, static_dim: int, motion_dim: int,
               cfg: TrainConfig, rng: np.random.Generator) -> Model:
    """Fan-in uniform init, all draws from the given seeded stream."""
    np_dtype = cfg.np_dtype
    params: dict[str, Tensor] = {}
    for name, shape, fan_in in _param_shapes(task, vocab.size, static_dim + motion_dim,
                                             cfg.embed_dim, cfg.hidden_dim):
        if fan_in > 0:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(np_dtype), requires_grad=True)
    return _wire_model(task, vocab, static_dim, motion_dim, cfg.embed_dim,
                       cfg.hidden_dim, cfg.dtype, params)


def make_batches(samples: Sequence[Sample], batch_size: int, seed: int,
                 epoch: int) -> list[list[Sample]]:
    """Epoch-seeded shuffle into consecutive chunks; the short final
    batch is kept. Stateless in (seed, epoch), so resuming mid-run
    reproduces the same order."""
    if not samples:
        raise ConfigError("cannot batch an empty sample list")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(samples))
    return [[samples[int(j)] for j in order[i : i + batch_size]]
            for i in range(0, len(samples), batch_size)]


def validate_run(cfg: TrainConfig, task: str, samples: Sequence[Sample]) -> None:
    align = cfg.align
    if task == "retrieval":
        if align.lambda2 > 0:
            raise ConfigError("segment alignment is not applicable to retrieval")
        if align.lambda1 == 0:
            raise ConfigError("retrieval has no task loss; lambda1 must be > 0")
    if task == "qa" and align.lambda2 > 0:
        if not align.use_false_language and not any(
                s.qa is not None and s.qa.span is not None for s in samples):
            raise ConfigError(
                "segment alignment has no negative source: QA data lacks spans "
                "and false-language negatives are disabled"
            )
    if task == "moment" and align.lambda2 > 0 and not align.use_false_frames:
        raise ConfigError(
            "segment alignment on moment data needs use_false_frames "
            "(there are no false language samples)"
        )


def _zero_scalar(dtype) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def _forward_qa(batch, model: Model, cfg: TrainConfig):
    align = cfg.align
    sep = model.vocab.sep_id
    full_seqs: list[list[int]] = []
    ans_seqs: list[list[int]] = []
    counts: list[int] = []
    correct_rows: list[int] = []
    row = 0
    for sample in batch:
        qa = sample.qa
        if qa is None:
            raise DataError(f"sample '{sample.id}' lacks QA annotation")
        for cand in qa.candidates:
            full_seqs.append(list(sample.tokens) + [sep] + list(cand))
            ans_seqs.append(list(cand))
        counts.append(len(qa.candidates))
        correct_rows.append(row + qa.correct_index)
        row += len(qa.candidates)

    enc_full = encode_text_batch(full_seqs, model.text)
    enc_ans = encode_text_batch(ans_seqs, model.text)
    vid = encode_video_batch([s.frames for s in batch], model.video)

    rep_idx = np.repeat(np.arange(len(batch)), counts)
    video_rows = T.gather_rows(vid.pooled, rep_idx)
    logits_flat = qa_head_logits(
        qa_candidate_features(enc_full.pooled, video_rows), model.qa_head)

    if len(set(counts)) == 1:
        logits = T.reshape(logits_flat, (len(batch), counts[0]))
        targets = [s.qa.correct_index for s in batch]
        l_task = T.reduce_mean(T.cross_entropy_rows(logits, targets))
    else:
        per = []
        offset = 0
        for sample, c in zip(batch, counts):
            lg = T.take(logits_flat, np.arange(offset, offset + c))
            per.append(T.cross_entropy(lg, sample.qa.correct_index))
            offset += c
        l_task = T.reduce_mean(T.concat([T.reshape(p, (1,)) for p in per], axis=-1))

    dtype = model.params["text.wx"].dtype
    l_glob = _zero_scalar(dtype)
    if align.lambda1 > 0 and len(batch) >= 2:
        lang_pooled = T.gather_rows(enc_full.pooled, correct_rows)
        l_glob = global_alignment_loss(lang_pooled, vid.pooled, align)

    l_seg = _zero_scalar(dtype)
    if align.lambda2 > 0:
        avg_lang = T.scale(T.add(enc_full.pooled, enc_ans.pooled), 0.5)
        per_sample = []
        offset = 0
        nfr = vid.n_frames
        for i, (sample, c) in enumerate(zip(batch, counts)):
            qa = sample.qa
            rows = [offset + qa.correct_index] + \
                   [offset + j for j in range(c) if j != qa.correct_index]
            lang_rows = T.gather_rows(avg_lang, rows)
            frame_rows = T.gather_rows(vid.frames_flat,
                                       np.arange(i * nfr, (i + 1) * nfr))
            if qa.span is not None:
                if sample.n_frames != nfr or qa.span.end >= nfr:
                    raise DataError(
                        f"sample '{sample.id}': span does not fit the encoded "
                        f"frame range ({nfr} frames)"
                    )
                true_idx = np.arange(qa.span.start, qa.span.end + 1)
                false_idx = np.setdiff1d(np.arange(nfr), true_idx)
            else:
                true_idx = np.arange(nfr)
                false_idx = np.zeros(0, dtype=np.intp)
            per_sample.append(_segment_core(lang_rows, frame_rows, true_idx,
                                            false_idx, c - 1, align))
            offset += c
        l_seg = T.reduce_mean(T.concat([T.reshape(p, (1,)) for p in per_sample], axis=-1))
    return l_task, l_glob, l_seg


def _forward_retrieval(batch, model: Model, cfg: TrainConfig):
    enc = encode_text_batch([s.tokens for s in batch], model.text)
    vid = encode_video_batch([s.frames for s in batch], model.video)
    dtype = model.params["text.wx"].dtype
    l_glob = _zero_scalar(dtype)
    if cfg.align.lambda1 > 0 and len(batch) >= 2:
        l_glob = global_alignment_loss(enc.pooled, vid.pooled, cfg.align)
    return _zero_scalar(dtype), l_glob, _zero_scalar(dtype)


def _forward_moment(batch, model: Model, cfg: TrainConfig):
    align = cfg.align
    enc = encode_text_batch([s.tokens for s in batch], model.text)
    vid = encode_video_batch([s.frames for s in batch], model.video)
    nfr = vid.n_frames
    bsz = len(batch)
    for sample in batch:
        if sample.span is None:
            raise DataError(f"sample '{sample.id}' lacks a ground-truth span")
        if sample.n_frames != nfr:
            # frame subsampling would silently shift span indices
            raise DataError(
                f"sample '{sample.id}': span-annotated videos must fit the "
                f"frame cap without subsampling ({sample.n_frames} frames)"
            )
        if sample.span.end >= nfr:
            raise DataError(f"sample '{sample.id}': span exceeds {nfr} frames")

    query_rows = T.gather_rows(enc.pooled, np.repeat(np.arange(bsz), nfr))
    rows = T.concat([vid.frames_flat, query_rows], axis=-1)
    head = model.moment_head
    start_flat = _head_logits(rows, head.start)
    end_flat = _head_logits(rows, head.end)
    starts = T.reshape(start_flat, (bsz, nfr))
    ends = T.reshape(end_flat, (bsz, nfr))
    ce_start = T.cross_entropy_rows(starts, [s.span.start for s in batch])
    ce_end = T.cross_entropy_rows(ends, [s.span.end for s in batch])
    l_task = T.reduce_mean(T.add(ce_start, ce_end))

    dtype = model.params["text.wx"].dtype
    l_glob = _zero_scalar(dtype)
    if align.lambda1 > 0 and bsz >= 2:
        l_glob = global_alignment_loss(enc.pooled, vid.pooled, align)

    l_seg = _zero_scalar(dtype)
    if align.lambda2 > 0:
        per_sample = []
        for i, sample in enumerate(batch):
            lang_rows = T.gather_rows(enc.pooled, [i])
            frame_rows = T.gather_rows(vid.frames_flat, np.arange(i * nfr, (i + 1) * nfr))
            true_idx = np.arange(sample.span.start, sample.span.end + 1)
            false_idx = np.setdiff1d(np.arange(nfr), true_idx)
            per_sample.append(_segment_core(lang_rows, frame_rows, true_idx,
                                            false_idx, 0, align))
        l_seg = T.reduce_mean(T.concat([T.reshape(p, (1,)) for p in per_sample], axis=-1))
    return l_task, l_glob, l_seg


def _head_logits(rows: Tensor, head: MomentHeadParams) -> Tensor:
    hidden = T.tanh(T.add_rowvec(T.matmul(rows, head.w_hidden), head.b_hidden))
    return T.reshape(T.add_rowvec(T.matmul(hidden, head.w_out), head.b_out),
                     (rows.shape[0],))


_FORWARDS = {"qa": _forward_qa, "retrieval": _forward_retrieval, "moment": _forward_moment}


def train_step(batch: Sequence[Sample], model: Model, opt_state: AdamWState,
               cfg: TrainConfig) -> dict[str, float]:
    """One forward/backward/update; returns the loss breakdown."""
    with Graph():
        l_task, l_glob, l_seg = _FORWARDS[model.task](batch, model, cfg)
        total = combined_loss(l_task, l_glob, l_seg, cfg.align)
    breakdown = {
        "l_task": float(l_task.data),
        "l_glob": float(l_glob.data),
        "l_seg": float(l_seg.data),
        "l_train": float(total.data),
    }
    if total.requires_grad:
        zero_grads(model.params)
        backward(total)
        if cfg.grad_clip is not None:
            clip_grads(model.params, cfg.grad_clip)
        adamw_step(model.params, opt_state, lr=cfg.lr, beta1=cfg.beta1,
                   beta2=cfg.beta2, weight_decay=cfg.weight_decay, eps=cfg.adam_eps)
    return breakdown


@dataclass
class TrainResult:
    model: Model
    opt_state: AdamWState
    log: list[dict]
    epochs_done: int
    rng_state: dict


def train(samples: Sequence[Sample], vocab: Vocabulary, task: str, cfg: TrainConfig,
          ckpt_path=None, resume: "LoadedCheckpoint | None" = None) -> TrainResult:
    """Run cfg.epochs of training (continuing from `resume` if given);
    optionally writing checkpoints every cfg.checkpoint_every epochs and
    at the end."""
    if task not in _FORWARDS:
        raise ConfigError(f"unknown task '{task}'")
    validate_run(cfg, task, samples)
    if not samples:
        raise ConfigError("no training samples")
    if resume is not None:
        model = resume.model
        opt_state = resume.opt_state
        start_epoch = resume.epoch
        rng_state = resume.rng_state
        if model.task != task:
            raise CheckpointError(f"checkpoint task '{model.task}' != requested '{task}'")
    else:
        rng = np.random.default_rng([cfg.seed])
        model = init_model(task, vocab, samples[0].static_dim, samples[0].motion_dim,
                           cfg, rng)
        opt_state = AdamWState()
        start_epoch = 0
        rng_state = rng.bit_generator.state

    log: list[dict] = []
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        batches = make_batches(samples, cfg.batch_size, cfg.seed, epoch)
        sums = {"l_task": 0.0, "l_glob": 0.0, "l_seg": 0.0, "l_train": 0.0}
        count = 0
        for batch in batches:
            breakdown = train_step(batch, model, opt_state, cfg)
            for key in sums:
                sums[key] += breakdown[key] * len(batch)
            count += len(batch)
        entry = {"epoch": epoch}
        entry.update({key: sums[key] / count for key in sums})
        entry["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        log.append(entry)
        done = epoch + 1
        if (ckpt_path is not None and cfg.checkpoint_every > 0
                and done % cfg.checkpoint_every == 0 and done < cfg.epochs):
            save_checkpoint(ckpt_path, model, opt_state, cfg, done, rng_state)
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, model, opt_state, cfg, cfg.epochs, rng_state)
    return TrainResult(model=model, opt_state=opt_state, log=log,
                       epochs_done=cfg.epochs, rng_state=rng_state)


# ---------------------------------------------------------------------------
# checkpoints: magic "MLVC", json header, packed little-endian payload


@dataclass
class LoadedCheckpoint:
    model: Model
    opt_state: AdamWState
    cfg: TrainConfig
    epoch: int
    rng_state: dict


def _config_to_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    return out


def _config_from_dict(obj: dict) -> TrainConfig:
    align = AlignmentConfig(**obj.pop("align"))
    return TrainConfig(align=align, **obj)


def save_checkpoint(path, model: Model, opt_state: AdamWState, cfg: TrainConfig,
                    epoch: int, rng_state: dict) -> None:
    le_dtype = "<f4" if model.dtype == "float32" else "<f8"
    chunks: list[bytes] = []
    manifest = []
    offset = 0

    def add_array(section: str, name: str, arr: np.ndarray):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=le_dtype).tobytes()
        manifest.append({"section": section, "name": name, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    for name, p in model.params.items():
        add_array("param", name, p.data)
    for name in model.params:
        if name in opt_state.m:
            add_array("adam_m", name, opt_state.m[name])
            add_array("adam_v", name, opt_state.v[name])

    header = {
        "version": CHECKPOINT_VERSION,
        "task": model.task,
        "vocab": {"size": model.vocab.size, "pad_id": model.vocab.pad_id,
                  "sep_id": model.vocab.sep_id},
        "static_dim": model.static_dim,
        "motion_dim": model.motion_dim,
        "embed_dim": model.embed_dim,
        "hidden_dim": model.hidden_dim,
        "dtype": model.dtype,
        "config": _config_to_dict(cfg),
        "epoch": epoch,
        "adam_step": opt_state.step,
        "rng_state": rng_state,
        "manifest": manifest,
    }
    head_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head_bytes)))
        fh.write(head_bytes)
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> LoadedCheckpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic bytes")
    version, head_len = struct.unpack_from("<IQ", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    head_end = 16 + head_len
    if len(blob) < head_end:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(blob[16:head_end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc.msg}") from exc
    payload = blob[head_end:]
    dtype = header["dtype"]
    le_dtype = "<f4" if dtype == "float32" else "<f8"
    np_dtype = np.float32 if dtype == "float32" else np.float64

    arrays: dict[tuple[str, str], np.ndarray] = {}
    for entry in header["manifest"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError("truncated checkpoint payload")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=le_dtype)
        arr = arr.astype(np_dtype).reshape(entry["shape"])
        arrays[(entry["section"], entry["name"])] = arr

    vocab = Vocabulary(size=header["vocab"]["size"], pad_id=header["vocab"]["pad_id"],
                       sep_id=header["vocab"]["sep_id"])
    cfg = _config_from_dict(dict(header["config"]))
    expected = _param_shapes(header["task"], vocab.size,
                             header["static_dim"] + header["motion_dim"],
                             header["embed_dim"], header["hidden_dim"])
    params: dict[str, Tensor] = {}
    opt_state = AdamWState(step=header["adam_step"])
    for name, shape, _ in expected:
        key = ("param", name)
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter '{name}'")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(f"parameter '{name}' has shape {arr.shape}, "
                                  f"expected {tuple(shape)}")
        params[name] = Tensor(arr.copy(), requires_grad=True)
        if ("adam_m", name) in arrays:
            opt_state.m[name] = arrays[("adam_m", name)].copy()
            opt_state.v[name] = arrays[("adam_v", name)].copy()
    model = _wire_model(header["task"], vocab, header["static_dim"], header["motion_dim"],
                        header["embed_dim"], header["hidden_dim"], dtype, params)
    return LoadedCheckpoint(model=model, opt_state=opt_state, cfg=cfg,
                            epoch=header["epoch"], rng_state=header["rng_state"])
