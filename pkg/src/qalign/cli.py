"""Operator command line: split, augment, pretrain, finetune, evaluate, inspect.

Configuration is a flat ``key = value`` file (``#`` starts a comment); any key
can be overridden on the command line with ``--set key=value`` (the override
wins).  Every command is idempotent: identical inputs and flags produce
byte-identical outputs (nothing embeds a timestamp).

Exit codes: 0 success, 2 usage/input error, 3 adapter/external error,
4 numeric failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import augment as aug
from .corpus import load_dataset, save_records, stratified_split, write_split
from .encoder import EncoderConfig, load_checkpoint, num_params
from .errors import AdapterError, InputError, NumericError
from .evaluation import (
    DecodeConfig,
    evaluate,
    write_per_record_csv,
    write_report,
)
from .features import FeatureConfig
from .tokenizer import build_vocab, load_vocab, save_vocab
from .trainer import TrainConfig, pretrain_qa_head, train

CONFIG_KEYS = {
    "data.train": "path to the training records (JSONL)",
    "data.validation": "path to the validation records (JSONL)",
    "data.format": "dataset format: jsonl or csv (default jsonl)",
    "vocab.path": "path to a vocabulary file (one piece per line)",
    "vocab.size": "vocabulary size to induce from the training texts (default 8192)",
    "features.max_length": "tokens per feature (default 384)",
    "features.doc_stride": "context-token overlap between windows (default 128)",
    "encoder.d_model": "hidden width (default 64)",
    "encoder.n_layers": "number of transformer blocks (default 4)",
    "encoder.n_heads": "attention heads (default 4)",
    "encoder.d_ffn": "feed-forward width (default 256)",
    "encoder.max_positions": "maximum sequence length (default 512)",
    "encoder.tap_layer": "block whose output feeds the contrastive pooling (default 3)",
    "train.batch_size": "batch size (default 16)",
    "train.max_steps": "optimization steps (default 5000)",
    "train.learning_rate": "AdamW learning rate (default 3e-5)",
    "train.weight_decay": "decoupled weight decay (default 0.01)",
    "train.w_contrastive": "contrastive loss weight (default 0.05)",
    "train.contrastive_interval": "apply the contrastive loss on step multiples of this (default 500)",
    "train.max_contrastive_steps": "last step eligible for the contrastive loss (default 1000)",
    "train.eval_interval": "evaluate + checkpoint every this many steps (default 500)",
    "train.seed": "training seed (default 0)",
    "train.grad_clip": "global-norm gradient clip; unset disables (default off)",
    "train.drop_unanswerable": "drop training windows without the answer (default false)",
    "decode.n_best": "candidate start/end positions per window (default 20)",
    "decode.max_answer_tokens": "maximum answer span length in tokens (default 30)",
    "init.checkpoint": "checkpoint directory to warm-start from",
    "out.dir": "output directory for checkpoints and logs",
}


def _config_epilog() -> str:
    lines = ["configuration file keys (flat `key = value`, `#` comments):"]
    for key, doc in CONFIG_KEYS.items():
        lines.append(f"  {key:30s} {doc}")
    return "\n".join(lines)


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    config: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
            config[key] = value
    return config


def apply_overrides(config: dict[str, str], sets: list[str]) -> dict[str, str]:
    for item in sets or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise InputError(f"unknown config key {key!r}")
        config[key] = value
    return config


def _get(config, key, default, cast):
    if key not in config:
        return default
    raw = config[key]
    if cast is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise InputError(f"config key {key}: expected true/false, got {raw!r}")
    try:
        return cast(raw)
    except ValueError:
        raise InputError(f"config key {key}: cannot parse {raw!r} as {cast.__name__}")


def _require_path(config, key):
    raw = config.get(key)
    if raw is None:
        raise InputError(f"config key {key} is required")
    path = Path(raw)
    if not path.exists():
        raise InputError(f"config key {key}: path does not exist: {path}")
    return path


def _build_configs(config):
    feature_cfg = FeatureConfig(
        max_length=_get(config, "features.max_length", 384, int),
        doc_stride=_get(config, "features.doc_stride", 128, int),
    )
    train_cfg = TrainConfig(
        batch_size=_get(config, "train.batch_size", 16, int),
        max_steps=_get(config, "train.max_steps", 5000, int),
        learning_rate=_get(config, "train.learning_rate", 3e-5, float),
        weight_decay=_get(config, "train.weight_decay", 0.01, float),
        w_contrastive=_get(config, "train.w_contrastive", 0.05, float),
        contrastive_interval=_get(config, "train.contrastive_interval", 500, int),
        max_contrastive_steps=_get(config, "train.max_contrastive_steps", 1000, int),
        eval_interval=_get(config, "train.eval_interval", 500, int),
        seed=_get(config, "train.seed", 0, int),
        grad_clip=_get(config, "train.grad_clip", None, float),
        drop_unanswerable=_get(config, "train.drop_unanswerable", False, bool),
    )
    decode_cfg = DecodeConfig(
        n_best=_get(config, "decode.n_best", 20, int),
        max_answer_tokens=_get(config, "decode.max_answer_tokens", 30, int),
    )
    return feature_cfg, train_cfg, decode_cfg


def _encoder_config(config, vocab_len):
    return EncoderConfig(
        vocab_size=vocab_len,
        d_model=_get(config, "encoder.d_model", 64, int),
        n_layers=_get(config, "encoder.n_layers", 4, int),
        n_heads=_get(config, "encoder.n_heads", 4, int),
        d_ffn=_get(config, "encoder.d_ffn", 256, int),
        max_positions=_get(config, "encoder.max_positions", 512, int),
        tap_layer=_get(config, "encoder.tap_layer", 3, int),
    )


def _load_or_build_vocab(config, records, out_dir):
    if "vocab.path" in config:
        vocab = load_vocab(_require_path(config, "vocab.path"))
    else:
        corpus = [r.context for r in records] + [r.question for r in records]
        vocab = build_vocab(corpus, _get(config, "vocab.size", 8192, int))
    save_vocab(vocab, out_dir / "vocab.txt")
    return vocab


# ---------------------------------------------------------------------------
# Augmentation plan files


def _adapter_from_spec(spec: dict, kind: str, adapters_dir: Path | None):
    adapter = spec.get("adapter")
    source = spec.get("source")
    target = spec.get("target")
    if adapter is None or source is None or target is None:
        raise InputError(f"adapter spec needs adapter/source/target: {spec}")
    if adapter == "identity":
        return aug.IdentityTransformer(source, target, kind=kind)
    if adapter == "shift":
        if "offset" not in spec:
            raise InputError(f"shift adapter needs an offset: {spec}")
        return aug.CodePointShiftTransformer(source, target, int(spec["offset"]), kind=kind)
    if adapter == "word_map":
        mapping = spec.get("mapping")
        if mapping is None and "path" in spec:
            with open(spec["path"], encoding="utf-8") as fh:
                mapping = json.load(fh)
        if not isinstance(mapping, dict):
            raise InputError(f"word_map adapter needs a mapping or a path: {spec}")
        return aug.WordMapTransformer(source, target, mapping, kind=kind)
    if adapter == "file":
        if "path" in spec:
            path = Path(spec["path"])
        else:
            if adapters_dir is None:
                raise InputError("file adapter needs --adapters DIR or an explicit path")
            path = adapters_dir / f"{source}-{target}.jsonl"
        return aug.FileBackedTransformer(source, target, path, kind=kind)
    raise InputError(f"unknown adapter type {adapter!r}")


def load_plan_file(path: str | Path, adapters_dir: Path | None) -> list[aug.AugmentPlan]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"plan file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc.msg})") from exc
    entries = doc.get("plans") if isinstance(doc, dict) else doc
    if not isinstance(entries, list) or not entries:
        raise InputError(f"{path}: expected a non-empty list of plans")
    plans = []
    for entry in entries:
        for key in ("source", "target", "kind", "chain"):
            if key not in entry:
                raise InputError(f"{path}: plan missing key {key!r}: {entry}")
        kind = entry["kind"]
        if kind not in (aug.TRANSLATION, aug.TRANSLITERATION):
            raise InputError(f"{path}: unknown kind {kind!r}")
        chain = tuple(
            _adapter_from_spec(spec, kind, adapters_dir) for spec in entry["chain"]
        )
        plans.append(aug.AugmentPlan(entry["source"], entry["target"], kind, chain))
    return plans


# ---------------------------------------------------------------------------
# Subcommands


def cmd_split(args) -> int:
    records = load_dataset(args.input, args.format)
    split = stratified_split(records, args.test_size, args.val_size, args.seed)
    manifest = write_split(split, args.out)
    print(json.dumps(manifest, sort_keys=True))
    return 0


def cmd_augment(args) -> int:
    records = load_dataset(args.input, args.format)
    adapters_dir = Path(args.adapters) if args.adapters else None
    plans = load_plan_file(args.plan, adapters_dir)
    groups, report = aug.build_groups(records, plans)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    combined = []
    for group in groups:
        combined.append(group.original)
        combined.extend(group.variants[lang] for lang in sorted(group.variants))
    save_records(combined, out_dir / "augmented.jsonl")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    totals = report.totals()
    print(
        f"attempted={totals.attempted} succeeded={totals.succeeded} "
        f"dropped={totals.dropped} -> {out_dir / 'augmented.jsonl'}"
    )
    return 0


def _run_training(args, stage: str) -> int:
    config = parse_config_file(args.config) if args.config else {}
    apply_overrides(config, args.set)
    out_dir = Path(config.get("out.dir", args.out or "."))
    out_dir.mkdir(parents=True, exist_ok=True)

    fmt = config.get("data.format", "jsonl")
    train_records = load_dataset(_require_path(config, "data.train"), fmt)
    validation_records = []
    if "data.validation" in config:
        validation_records = load_dataset(_require_path(config, "data.validation"), fmt)

    vocab = _load_or_build_vocab(config, train_records, out_dir)
    feature_cfg, train_cfg, decode_cfg = _build_configs(config)
    encoder_cfg = _encoder_config(config, len(vocab))

    init_from = None
    if "init.checkpoint" in config:
        init_from = load_checkpoint(_require_path(config, "init.checkpoint")).params

    if stage == "pretrain":
        result = pretrain_qa_head(
            train_records,
            validation_records,
            vocab,
            encoder_cfg,
            feature_cfg,
            train_cfg,
            out_dir,
            decode_cfg=decode_cfg,
            resume=args.resume,
        )
    else:
        groups = aug.groups_from_records(train_records)
        result = train(
            train_records,
            validation_records,
            groups,
            vocab,
            encoder_cfg,
            feature_cfg,
            train_cfg,
            out_dir,
            init_from=init_from,
            decode_cfg=decode_cfg,
            resume=args.resume,
        )
    summary = {
        "stage": stage,
        "best_step": result.best_step,
        "best_jaccard": result.best_jaccard,
        "best_checkpoint": str(result.best_checkpoint),
        "final_step": result.final_step,
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_pretrain(args) -> int:
    return _run_training(args, "pretrain")


def cmd_finetune(args) -> int:
    return _run_training(args, "finetune")


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(Path(args.checkpoint))
    vocab = load_vocab(args.vocab)
    if len(vocab) != ckpt.config.vocab_size:
        raise InputError(
            f"vocabulary has {len(vocab)} pieces but the checkpoint expects "
            f"{ckpt.config.vocab_size}"
        )
    records = load_dataset(args.input, args.format)
    config = apply_overrides({}, args.set)
    feature_cfg, _, decode_cfg = _build_configs(config)
    report = evaluate(ckpt.params, ckpt.config, records, vocab, feature_cfg, decode_cfg)
    write_report(report, args.out)
    if args.per_record:
        write_per_record_csv(report, records, args.per_record)
    print(json.dumps({"overall": float(report.overall)}))
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(Path(args.checkpoint))
        print(
            json.dumps(
                {
                    "step": ckpt.step,
                    "seed": ckpt.seed,
                    "config": ckpt.config.__dict__,
                    "parameters": num_params(ckpt.config),
                },
                sort_keys=True,
            )
        )
        return 0
    if args.input:
        records = load_dataset(args.input, args.format)
        histogram: dict[str, int] = {}
        for record in records:
            histogram[record.language] = histogram.get(record.language, 0) + 1
        print(
            json.dumps(
                {"records": len(records), "languages": dict(sorted(histogram.items()))},
                sort_keys=True,
            )
        )
        return 0
    raise InputError("inspect needs --input or --checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qalign",
        description="Cross-lingual extractive QA fine-tuning pipeline",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="deterministic language-stratified split")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="jsonl", choices=("jsonl", "csv"))
    p.add_argument("--test-size", type=int, default=100)
    p.add_argument("--val-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="translate/transliterate records per a plan file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="jsonl", choices=("jsonl", "csv"))
    p.add_argument("--plan", required=True, help="JSON plan file")
    p.add_argument("--adapters", help="directory of parallel-corpus files (<src>-<tgt>.jsonl)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    for name, func, doc in (
        ("pretrain", cmd_pretrain, "head pretraining on a high-resource dataset"),
        ("finetune", cmd_finetune, "fine-tune with augmentation and contrastive pairing"),
    ):
        p = sub.add_parser(name, help=doc, epilog=_config_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory (fallback for out.dir)")
        p.add_argument("--resume", action="store_true",
                       help="resume from the latest checkpoint in the output directory")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="decode a dataset and report Jaccard scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="jsonl", choices=("jsonl", "csv"))
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--per-record", help="optional per-record CSV path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override features.*/decode.* keys")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="summarize a dataset or a checkpoint")
    p.add_argument("--input")
    p.add_argument("--format", default="jsonl", choices=("jsonl", "csv"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
