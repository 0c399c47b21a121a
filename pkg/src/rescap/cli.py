"""Operator command line: dataset generation, training, evaluation,
captioning, the ablation table, gradient checks and the pooling benchmark.

Every run resolves its configuration from defaults < --config JSON <
explicit flags, and logs the resolved values to stderr so any result can
be reproduced from its log line plus the seed. Machine-readable outputs
(manifests, reports, logs) are stable-schema and versioned.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data_io
from .decoder import ModelDims, model_from_arrays, model_to_arrays
from .decoding import beam_decode
from .experiments import (
    ABLATION_VARIANTS,
    decode_dataset,
    evaluate_model,
    run_ablation,
    score_candidates,
    worker_count,
)
from .features import FeatureRecord
from .gradcheck import check_blocks
from .metrics import format_table
from .attention import POOLING_MODES
from .synth import (
    GenConfig,
    SceneRecord,
    SnrConfig,
    SynthDataset,
    generate_dataset,
    planted_signal_benchmark,
)
from .tensor import NumericalError
from .training import TrainConfig, fit
from .vocab import Caption

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise UsageError(message)


def _log(msg: str) -> None:
    print(f"[rescap] {msg}", file=sys.stderr)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < --config JSON < explicitly passed flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)} (expected {sorted(defaults)})")
        merged.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


# -- dataset on disk -------------------------------------------------------------


def _write_split(dataset: SynthDataset, out_dir: Path, split: str) -> None:
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sr in dataset.records:
        rel = f"features/{sr.record.image_id}.rtdf"
        data_io.write_rtdf(sr.record, out_dir / rel)
        rows.append({"image_id": sr.record.image_id, "features": rel, "refs": sr.ref_texts})
    data_io.write_manifest(rows, out_dir / f"{split}.jsonl")


def load_split(data_dir, split: str) -> SynthDataset:
    """Rebuild a dataset from manifest + RTDF files + vocab.txt."""
    data_dir = Path(data_dir)
    vocab = data_io.load_vocab(data_dir / "vocab.txt")
    records = []
    for row in data_io.read_manifest(data_dir / f"{split}.jsonl"):
        record = data_io.read_rtdf(row["features"])
        record.image_id = row["image_id"]
        captions = [Caption.from_words(t.split(), vocab) for t in row["refs"]]
        records.append(SceneRecord(record=record, captions=captions,
                                   ref_texts=list(row["refs"]), scene=None))
    return SynthDataset(records=records, vocab=vocab)


# -- subcommands ------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    cfg = _resolve(args, {
        "count": 100, "seed": 0, "ratios": [0.8, 0.1, 0.1],
        "feat_dim": 32, "n1": 7, "n2": 7, "min_entities": 1, "max_entities": 5,
        "min_captions": 1, "max_captions": 3, "noise_sigma": 0.12,
        "deterministic_surface": False,
    })
    _log(f"gen-data resolved config: {json.dumps(cfg, sort_keys=True)}")
    gen = GenConfig(
        n1=cfg["n1"], n2=cfg["n2"], feat_dim=cfg["feat_dim"],
        min_entities=cfg["min_entities"], max_entities=cfg["max_entities"],
        min_captions=cfg["min_captions"], max_captions=cfg["max_captions"],
        noise_sigma=cfg["noise_sigma"],
        deterministic_surface=bool(cfg["deterministic_surface"]),
    )
    ratios = tuple(float(r) for r in cfg["ratios"])
    train, val, test = generate_dataset(cfg["count"], ratios, gen, seed=cfg["seed"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_io.save_vocab(train.vocab, out_dir / "vocab.txt")
    for split, ds in (("train", train), ("val", val), ("test", test)):
        _write_split(ds, out_dir, split)
        _log(f"wrote {len(ds.records)} {split} scenes")
    print(f"dataset written to {out_dir} (vocab {train.vocab.size})")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _resolve(args, {
        "epochs": 30, "learning_rate": 1e-3, "batch_size": 16, "clip_norm": 5.0,
        "optimizer": "adam", "seed": 0, "variant": "BU+ResTd", "split": "train",
        "feat_dim": 0, "embed_dim": 32, "hidden1": 64, "hidden2": 64, "attn_dim": 64,
    })
    _log(f"train resolved config: {json.dumps(cfg, sort_keys=True)}")
    dataset = load_split(args.data, cfg["split"])
    dims = None
    if cfg["feat_dim"]:
        dims = ModelDims(
            vocab_size=dataset.vocab.size, feat_dim=cfg["feat_dim"],
            embed_dim=cfg["embed_dim"], hidden1=cfg["hidden1"],
            hidden2=cfg["hidden2"], attn_dim=cfg["attn_dim"],
        )
    try:
        train_cfg = TrainConfig(
            epochs=cfg["epochs"], learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"], clip_norm=cfg["clip_norm"] or None,
            optimizer=cfg["optimizer"], seed=cfg["seed"], variant=cfg["variant"],
            dims=dims,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model, log = fit(dataset, train_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_io.save_checkpoint(model_to_arrays(model), out)
    log_path = out.with_suffix(out.suffix + ".train.csv")
    log_path.write_text(log.to_csv(), encoding="utf-8")
    data_io.save_vocab(dataset.vocab, out.with_suffix(out.suffix + ".vocab.txt"))
    total = sum(e.seconds for e in log.epochs)
    _log(f"trained {cfg['variant']} for {cfg['epochs']} epochs in {total:.1f}s")
    print(f"checkpoint: {out}")
    print(f"train log:  {log_path}")
    print(f"final loss {log.epochs[-1].loss:.4f}, token accuracy {log.epochs[-1].token_accuracy:.4f}")
    return EXIT_OK


def _load_model(ckpt_path):
    return model_from_arrays(data_io.load_checkpoint(ckpt_path))


def _cmd_eval(args) -> int:
    cfg = _resolve(args, {"beam": 3, "split": "test", "max_len": 19})
    _log(f"eval resolved config: {json.dumps(cfg, sort_keys=True)}")
    dataset = load_split(args.data, cfg["split"])
    model = _load_model(args.ckpt)
    candidates = decode_dataset(model, dataset, beam=cfg["beam"], max_len=cfg["max_len"])
    report = score_candidates(candidates, dataset)
    table = format_table({Path(args.ckpt).stem: report})
    print(table, end="")
    out = Path(args.out if args.out else "eval_report.json")
    out.write_text(report.to_json(), encoding="utf-8")
    _log(f"report written to {out}")
    return EXIT_OK


def _cmd_caption(args) -> int:
    cfg = _resolve(args, {"beam": 3, "max_len": 19})
    _log(f"caption resolved config: {json.dumps(cfg, sort_keys=True)}")
    ckpt = Path(args.ckpt)
    vocab_path = Path(args.vocab) if args.vocab else ckpt.with_suffix(ckpt.suffix + ".vocab.txt")
    vocab = data_io.load_vocab(vocab_path)
    model = _load_model(ckpt)
    if model.dims.vocab_size != vocab.size:
        raise data_io.ShapeConflict(
            f"vocab {vocab_path} has {vocab.size} tokens, checkpoint expects {model.dims.vocab_size}"
        )
    for feat_path in args.features:
        record = data_io.read_rtdf(feat_path)
        results = beam_decode(record, model, width=cfg["beam"], max_len=cfg["max_len"])
        text = results[0].caption.to_text(vocab) if results else ""
        print(f"{record.image_id}\t{text}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = _resolve(args, {
        "seeds": 3, "epochs": 15, "beam": 1, "batch_size": 64,
        "learning_rate": 1e-2, "train_split": "train", "eval_split": "test",
    })
    _log(f"ablate resolved config: {json.dumps(cfg, sort_keys=True)}")
    train_set = load_split(args.data, cfg["train_split"])
    eval_set = load_split(args.data, cfg["eval_split"])
    base = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
    )
    result = run_ablation(
        train_set, eval_set, base, variants=ABLATION_VARIANTS,
        seeds=tuple(range(cfg["seeds"])), beam=cfg["beam"],
    )
    print(format_table(result.median_reports()), end="")
    if args.out:
        payload = {
            "schema_version": 1,
            "seeds": cfg["seeds"],
            "rows": [
                {
                    "variant": r.variant,
                    "seed": r.seed,
                    "cider": r.report.cider,
                    "avg_bleu": r.report.avg_bleu,
                    "rouge_l": r.report.rouge_l,
                    "meteor_lite": r.report.meteor_lite,
                }
                for r in result.runs
            ],
        }
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        _log(f"per-seed results written to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = _resolve(args, {"seeds": 5, "tolerance": 1e-4})
    _log(f"gradcheck resolved config: {json.dumps(cfg, sort_keys=True)}")
    worst = check_blocks(seeds=range(cfg["seeds"]))
    failed = False
    for name, err in worst.items():
        status = "ok" if err < cfg["tolerance"] else "FAIL"
        print(f"{name:8s} max relative error {err:.3e}  {status}")
        failed |= err >= cfg["tolerance"]
    if failed:
        raise NumericalError("gradient check failed")
    return EXIT_OK


def _cmd_bench_pooling(args) -> int:
    cfg = _resolve(args, {"trials": 300, "seed": 0, "noise_sigma": 0.0})
    _log(f"bench-pooling resolved config: {json.dumps(cfg, sort_keys=True)}")
    snr = SnrConfig() if not cfg["noise_sigma"] else replace(SnrConfig(), noise_sigma=cfg["noise_sigma"])
    modes = list(POOLING_MODES) if args.mode == "all" else [args.mode]
    for mode in modes:
        acc = planted_signal_benchmark(mode, trials=cfg["trials"], snr=snr, seed=cfg["seed"])
        print(f"{mode:20s} accuracy {acc:.3f}")
    return EXIT_OK


# -- wiring ------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="rescap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset (RTDF + manifests + vocab)")
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--min-entities", dest="min_entities", type=int)
    p.add_argument("--max-entities", dest="max_entities", type=int)
    p.add_argument("--deterministic-surface", dest="deterministic_surface",
                   action="store_const", const=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model variant; writes checkpoint + TrainLog CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=("BU_Only", "BU+Td", "BU+ResTd", "TD"))
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="decode a split and score it; EvalReport JSON + table")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("caption", help="caption RTDF feature files")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab")
    p.add_argument("--beam", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_caption)

    p = sub.add_parser("ablate", help="variant comparison table (medians over seeds)")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every learnable block")
    p.add_argument("--seeds", type=int)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("bench-pooling", help="planted-signal pooling benchmark")
    p.add_argument("--mode", choices=("average", "attention", "residual_attention", "all"),
                   default="all")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_bench_pooling)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (data_io.DataFormatError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
