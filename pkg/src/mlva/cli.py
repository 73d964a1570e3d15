"""Command-line entry point.

Subcommands: gen-data, train, eval, heatmap, gradcheck. Exit codes:
0 success, 1 usage error, 2 data/config error, 3 numerical error.
Flags override config-file keys; every training or generation run
writes its fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .alignment import AlignmentConfig
from .checks import GRADCHECK_TOLERANCE, run_suite
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    MlvaError,
    NumericalError,
)
from .evaluate import eval_moment, eval_qa, eval_retrieval, export_heatmap, write_report
from .synthdata import CorpusSpec, generate_corpus, read_dataset, write_dataset
from .trainer import TrainConfig, load_checkpoint, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def _parse_bool(text: str) -> bool:
    word = text.strip().lower()
    if word not in _BOOL_WORDS:
        raise ConfigError(f"expected a boolean, got '{text}'")
    return _BOOL_WORDS[word]


def load_kv_config(path) -> dict[str, str]:
    """Flat key=value lines; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


_ALIGN_KEYS = {f.name for f in dataclasses.fields(AlignmentConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"align"}
_INT_KEYS = {"epochs", "batch_size", "seed", "embed_dim", "hidden_dim",
             "checkpoint_every"}
_BOOL_KEYS = {"use_false_language", "use_false_frames", "symmetric_global"}


def build_train_config(kv: dict[str, str]) -> TrainConfig:
    train_kwargs: dict = {}
    align_kwargs: dict = {}
    for key, value in kv.items():
        if key in _ALIGN_KEYS:
            align_kwargs[key] = _parse_bool(value) if key in _BOOL_KEYS else float(value)
        elif key in _TRAIN_KEYS:
            if key == "dtype":
                train_kwargs[key] = value
            elif key == "grad_clip":
                train_kwargs[key] = None if value.lower() == "none" else float(value)
            elif key in _INT_KEYS:
                train_kwargs[key] = int(value)
            else:
                train_kwargs[key] = float(value)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return TrainConfig(align=AlignmentConfig(**align_kwargs), **train_kwargs)


def resolved_config_lines(cfg: TrainConfig) -> list[str]:
    lines = []
    for key in sorted(_TRAIN_KEYS):
        lines.append(f"{key}={getattr(cfg, key)}")
    for key in sorted(_ALIGN_KEYS):
        lines.append(f"{key}={getattr(cfg.align, key)}")
    return lines


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(line) for line in lines) + "\n")


def _dataset_path(data: str, split: str) -> str:
    if os.path.isdir(data):
        candidate = os.path.join(data, f"{split}.mlvd")
        if not os.path.exists(candidate):
            raise DataError(f"no {split}.mlvd in directory {data}")
        return candidate
    if not os.path.exists(data):
        raise DataError(f"dataset path {data} does not exist")
    return data


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlva",
        description="Multi-level video/language alignment: data generation, "
                    "training, evaluation, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p_gen.add_argument("--spec", help="corpus spec file (key=value lines)")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--binary", action="store_true",
                       help="write the packed binary format instead of text records")

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", required=True, help="dataset file or directory")
    p_train.add_argument("--config", help="training config file (key=value lines)")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.add_argument("--lambda1", type=float)
    p_train.add_argument("--lambda2", type=float)
    p_train.add_argument("--alpha", type=float)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--grad-clip", type=float, dest="grad_clip")
    p_train.add_argument("--embed-dim", type=int, dest="embed_dim")
    p_train.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p_train.add_argument("--use-false-language", dest="use_false_language")
    p_train.add_argument("--use-false-frames", dest="use_false_frames")
    p_train.add_argument("--symmetric-global", dest="symmetric_global")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--report", required=True)

    p_heat = sub.add_parser("heatmap", help="export a similarity heatmap CSV")
    p_heat.add_argument("--data", required=True)
    p_heat.add_argument("--sample", required=True, help="sample id")
    p_heat.add_argument("--ckpt", required=True)
    p_heat.add_argument("--out", required=True)

    p_check = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p_check.add_argument("--config", help="config file (only seed is used)")
    p_check.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_gen_data(args) -> int:
    kv = load_kv_config(args.spec) if args.spec else {}
    fields = {f.name: f.type for f in dataclasses.fields(CorpusSpec)}
    kwargs = {}
    for key, value in kv.items():
        if key not in fields:
            raise ConfigError(f"unknown corpus spec key '{key}'")
        kwargs[key] = value if key == "task" else (
            float(value) if key == "noise_sigma" else int(value))
    spec = CorpusSpec(**kwargs)
    os.makedirs(args.out, exist_ok=True)
    train_set, test_set, vocab = generate_corpus(spec)
    write_dataset(train_set, vocab, spec.task, os.path.join(args.out, "train.mlvd"),
                  binary=args.binary)
    write_dataset(test_set, vocab, spec.task, os.path.join(args.out, "test.mlvd"),
                  binary=args.binary)
    _write_lines(os.path.join(args.out, "corpus.config"),
                 [f"{f.name}={getattr(spec, f.name)}" for f in dataclasses.fields(CorpusSpec)])
    print(f"wrote {len(train_set)} train / {len(test_set)} test samples to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    kv = load_kv_config(args.config) if args.config else {}
    for key in ("lambda1", "lambda2", "alpha", "seed", "epochs", "batch_size", "lr",
                "grad_clip", "embed_dim", "hidden_dim"):
        value = getattr(args, key, None)
        if value is not None:
            kv[key] = str(value)
    for key in ("use_false_language", "use_false_frames", "symmetric_global"):
        value = getattr(args, key, None)
        if value is not None:
            kv[key] = str(_parse_bool(value))
    cfg = build_train_config(kv)
    samples, vocab, task = read_dataset(_dataset_path(args.data, "train"))
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(samples, vocab, task, cfg, ckpt_path=args.out, resume=resume)
    _write_lines(args.out + ".config", resolved_config_lines(cfg))
    _write_lines(args.out + ".log", [json.dumps(entry) for entry in result.log])
    final = result.log[-1] if result.log else None
    if final:
        print(f"trained {task} for {cfg.epochs} epochs; "
              f"final l_train={final['l_train']:.4f}")
    else:
        print(f"initialized {task} checkpoint (0 epochs)")
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    samples, _, task = read_dataset(_dataset_path(args.data, "test"))
    loaded = load_checkpoint(args.ckpt)
    if task == "qa":
        report = eval_qa(samples, loaded.model)
    elif task == "retrieval":
        report = eval_retrieval(samples, loaded.model)
    else:
        report = eval_moment(samples, loaded.model)
    write_report(report, args.report)
    for line in report.to_lines():
        print(line)
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    samples, _, task = read_dataset(_dataset_path(args.data, "test"))
    if task != "qa":
        raise ConfigError(f"heatmaps need a QA dataset, got '{task}'")
    by_id = {s.id: s for s in samples}
    if args.sample not in by_id:
        raise DataError(f"sample id '{args.sample}' not found in {args.data}")
    loaded = load_checkpoint(args.ckpt)
    heatmap = export_heatmap(by_id[args.sample], loaded.model, args.out)
    print(f"wrote {len(heatmap.row_labels)}x{len(heatmap.col_labels)} heatmap to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    seed = args.seed
    if args.config:
        kv = load_kv_config(args.config)
        if "seed" in kv:
            seed = int(kv["seed"])
    results, ok = run_suite(seed=seed)
    for name, err in results.items():
        verdict = "PASS" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} {verdict}")
    if not ok:
        raise NumericalError("gradient check exceeded tolerance")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "heatmap": _cmd_heatmap,
    "gradcheck": _cmd_gradcheck,
}


def cli(argv=None) -> int:
    """Parse argv and run one subcommand, mapping errors to exit codes."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        log.error("numerical error: %s", exc)
        return EXIT_NUMERIC
    except (DataError, ConfigError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except MlvaError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
