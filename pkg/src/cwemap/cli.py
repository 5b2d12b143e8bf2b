"""Command line interface.

One binary with subcommands covering the whole pipeline: ingest,
taxonomy-check, build-splits, train-baseline, predict, evaluate,
sample-disagreements.  Each reads files, writes files, and prints a
one-line JSON summary (evaluate prints a small table instead).  Exit
status: 0 on success, 1 when inputs fail validation or a contract is
violated, 2 on environment and I/O failures such as a missing path.

All randomness flows from the single config seed; nothing in any output
depends on the clock or process entropy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__, baseline, corpus, metrics, pipeline
from .errors import CwemapError
from .jsonio import canonical_digest, dumps_compact, sha256_file, write_json
from .taxonomy import TAXONOMY_FORMATS, CweTaxonomy, load_vocabulary, parse_taxonomy

CONFIG_ENV_VAR = "CWEMAP_CONFIG"

CONFIG_SCHEMA_VERSION = 1

DEFAULT_CONFIG: dict = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 20240601,
    "paths": {
        "feed": None,
        "records": None,
        "rejects": None,
        "ai_labels": None,
        "taxonomy": None,
        "vocabulary": None,
        "banned": None,
        "output_dir": None,
    },
    "taxonomy_format": "edge-csv",
    "filter": {
        "min_length": corpus.DEFAULT_MIN_LENGTH,
        "reject_markers": list(corpus.DEFAULT_REJECT_MARKERS),
    },
    "split": {
        "eval_fraction": pipeline.DEFAULT_EVAL_FRACTION,
        "val_share": pipeline.DEFAULT_VAL_SHARE,
        "equivalence_depth": 1,
    },
    "vectorizer": {
        "max_features": 50000,
        "ngram_min": 1,
        "ngram_max": 2,
        "lowercase": True,
    },
    "trainer": {
        "learning_rate": 0.5,
        "batch_size": 256,
        "l2_lambda": 1e-6,
        "epochs": 30,
        "early_stop_patience": 3,
    },
    "evaluation": {
        "k": [1, 3],
        "alpha": 0.05,
        "depth": 1,
        "band_thresholds": [0.3, 0.8],
    },
    "predict": {"top_k": 10},
}


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    """Defaults overlaid by the config file, then by --seed.

    Unknown keys at any level are rejected rather than silently ignored.
    """
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path:
        with open(path, "rb") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CwemapError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise CwemapError(f"config {path} must hold a JSON object")
        declared = user.get("schema_version", CONFIG_SCHEMA_VERSION)
        if declared != CONFIG_SCHEMA_VERSION:
            raise CwemapError(
                f"config schema_version {declared!r} is not supported (expected "
                f"{CONFIG_SCHEMA_VERSION})"
            )
        for key, value in user.items():
            if key not in config:
                raise CwemapError(f"unknown config key {key!r} in {path}")
            if isinstance(config[key], dict):
                if not isinstance(value, dict):
                    raise CwemapError(f"config key {key!r} must hold an object")
                for sub, sub_value in value.items():
                    if sub not in config[key]:
                        raise CwemapError(f"unknown config key {key}.{sub} in {path}")
                    config[key][sub] = sub_value
            else:
                config[key] = value
    if seed_override is not None:
        config["seed"] = seed_override
    return config


def _emit(summary: dict) -> None:
    print(dumps_compact(summary))


def _resolve(args: argparse.Namespace, config: dict, flag: str, path_key: str) -> str:
    value = getattr(args, flag, None) or config["paths"].get(path_key)
    if not value:
        raise CwemapError(
            f"no {path_key.replace('_', ' ')} given: pass --{flag.replace('_', '-')} "
            f"or set paths.{path_key} in the config"
        )
    return value


def _output_dir(args: argparse.Namespace, config: dict) -> Path | None:
    value = getattr(args, "output_dir", None) or config["paths"].get("output_dir")
    return Path(value) if value else None


def _derived(
    args: argparse.Namespace, config: dict, flag: str, filename: str
) -> str:
    """A file flag that falls back to <output_dir>/<filename>."""
    value = getattr(args, flag, None)
    if value:
        return value
    out = _output_dir(args, config)
    if out is None:
        raise CwemapError(
            f"no path for --{flag.replace('_', '-')}; pass it or set an output dir"
        )
    return str(out / filename)


def _load_taxonomy(args: argparse.Namespace, config: dict, vocabulary=()) -> CweTaxonomy:
    path = _resolve(args, config, "taxonomy", "taxonomy")
    fmt = getattr(args, "taxonomy_format", None) or config["taxonomy_format"]
    with open(path, "rb") as fh:
        return parse_taxonomy(fh, format=fmt, vocabulary=vocabulary)


def _load_records(path: str, strict: bool) -> list[corpus.CveRecord]:
    with open(path, "rb") as fh:
        result = corpus.parse_feed(fh, format="record-jsonl", strict=strict)
    if result.rejects:
        first = result.rejects[0]
        raise CwemapError(
            f"{path}: {len(result.rejects)} unusable line(s), "
            f"first at line {first['line']}: {first['reason']}"
        )
    return result.records


def _load_vocab(args: argparse.Namespace, config: dict):
    path = getattr(args, "vocabulary", None) or config["paths"].get("vocabulary")
    if not path:
        return ()
    with open(path, "rb") as fh:
        return load_vocabulary(fh)


def _merged_from_args(args: argparse.Namespace, config: dict) -> list[pipeline.MergedRecord]:
    records = _load_records(_resolve(args, config, "records", "records"), args.strict)
    with open(_resolve(args, config, "ai_labels", "ai_labels"), "rb") as fh:
        ai = pipeline.load_ai_labels(fh)
    taxonomy = _load_taxonomy(args, config, _load_vocab(args, config))
    return pipeline.merge_labels(
        records, ai, taxonomy, depth=config["split"]["equivalence_depth"]
    )


def _cmd_ingest(args: argparse.Namespace, config: dict) -> int:
    feed = _resolve(args, config, "feed", "feed")
    out = _resolve(args, config, "out", "records")
    with open(feed, "rb") as fh:
        result = corpus.parse_feed(fh, format=args.format, strict=args.strict)
    deduped = corpus.deduplicate(result.records)
    desc_filter = corpus.DescriptionFilter(
        min_length=config["filter"]["min_length"],
        reject_markers=tuple(config["filter"]["reject_markers"]),
    )
    kept, dropped = corpus.filter_insufficient(deduped, desc_filter)
    corpus.export_records(kept, out)
    rejects_path = getattr(args, "rejects", None) or config["paths"].get("rejects")
    if rejects_path:
        corpus.write_rejects_report(result.rejects, rejects_path)
    summary = {
        "command": "ingest",
        "read": len(result.records) + len(result.rejects),
        "rejected": len(result.rejects),
        "duplicates": len(result.records) - len(deduped),
        "insufficient": len(dropped),
        "kept": len(kept),
        "out": str(out),
    }
    write_json(
        Path(str(out) + ".meta.json"),
        dict(summary, config_digest=canonical_digest(config), out_sha256=sha256_file(out)),
    )
    _emit(summary)
    return 0


def _cmd_taxonomy_check(args: argparse.Namespace, config: dict) -> int:
    vocabulary = _load_vocab(args, config)
    taxonomy = _load_taxonomy(args, config, vocabulary)
    missing = taxonomy.validate_vocabulary()
    edges = sum(len(node.parents) for node in taxonomy.nodes.values())
    _emit(
        {
            "command": "taxonomy-check",
            "nodes": len(taxonomy.nodes),
            "edges": edges,
            "vocabulary": len(vocabulary),
            "missing": [c.value for c in missing],
        }
    )
    return 1 if missing else 0


def _cmd_build_splits(args: argparse.Namespace, config: dict) -> int:
    merged = _merged_from_args(args, config)
    stats = pipeline.agreement_stats(merged)
    removed_count = 0
    not_found: list[str] = []
    banned_path = getattr(args, "banned", None) or config["paths"].get("banned")
    if banned_path:
        with open(banned_path, "rb") as fh:
            banned = pipeline.load_banned_ids(fh)
        result = pipeline.decontaminate(merged, banned)
        merged = result.clean
        removed_count = len(result.removed)
        not_found = result.not_found
    vocabulary = _load_vocab(args, config)
    if not vocabulary:
        raise CwemapError("build-splits needs a vocabulary (--vocabulary or config)")
    cfg = pipeline.SplitConfig(
        seed=config["seed"],
        vocabulary=vocabulary,
        eval_fraction=config["split"]["eval_fraction"],
        val_share=config["split"]["val_share"],
        equivalence_depth=config["split"]["equivalence_depth"],
    )
    assignment = pipeline.build_splits(merged, cfg)
    out_dir = _output_dir(args, config)
    if out_dir is None:
        raise CwemapError("build-splits needs --output-dir or paths.output_dir")
    summary = pipeline.write_splits(
        assignment,
        out_dir,
        cfg,
        stats=stats,
        extra_summary={
            "decontamination": {"removed": removed_count, "not_found": not_found},
            "config_digest": canonical_digest(config),
        },
    )
    if not assignment.train and not assignment.val and not assignment.test:
        print("warning: all records were excluded; splits are empty", file=sys.stderr)
    _emit(
        {
            "command": "build-splits",
            "sizes": summary["sizes"],
            "removed": removed_count,
            "output_dir": str(out_dir),
        }
    )
    return 0


def _cmd_train_baseline(args: argparse.Namespace, config: dict) -> int:
    train_path = _derived(args, config, "train", "train.jsonl")
    val_path = _derived(args, config, "val", "val.jsonl")
    model_path = _derived(args, config, "model", "baseline.model")
    with open(train_path, "rb") as fh:
        train = pipeline.load_split_file(fh)
    with open(val_path, "rb") as fh:
        val = pipeline.load_split_file(fh)
    vec_cfg = baseline.VectorizerConfig(**config["vectorizer"])
    train_cfg = baseline.TrainConfig(seed=config["seed"], **config["trainer"])
    model = baseline.train_baseline(train, val, vec_cfg, train_cfg)
    model.save(model_path)
    best = model.linear.history[-1]
    summary = {
        "command": "train-baseline",
        "train_size": len(train),
        "val_size": len(val),
        "classes": len(model.classes),
        "best_epoch": best["best_epoch"],
        "best_val_accuracy": best["best_val_accuracy"],
        "model": str(model_path),
        "model_sha256": sha256_file(model_path),
    }
    write_json(
        Path(str(model_path) + ".summary.json"),
        dict(
            summary,
            history=model.linear.history,
            config_digest=canonical_digest(config),
            schema_version=1,
        ),
    )
    _emit(summary)
    return 0


def _cmd_predict(args: argparse.Namespace, config: dict) -> int:
    model_path = _derived(args, config, "model", "baseline.model")
    input_path = _derived(args, config, "input", "test.jsonl")
    out_path = _derived(args, config, "out", "predictions.jsonl")
    model = baseline.BaselineModel.load(model_path)
    with open(input_path, "rb") as fh:
        examples = pipeline.load_split_file(fh)
    top_k = args.top_k if args.top_k is not None else config["predict"]["top_k"]
    if top_k < 1:
        raise CwemapError(f"--top-k must be >= 1, got {top_k}")
    k = min(top_k, len(model.classes), metrics.MAX_RANKED)
    ranked = model.predict_ranked([ex.description for ex in examples], k=k)
    predictions = {
        ex.cve_id: tuple(r) for ex, r in zip(examples, ranked)
    }
    meta = {
        "command": "predict",
        "model_sha256": sha256_file(model_path),
        "input": str(input_path),
        "input_sha256": sha256_file(input_path),
        "top_k": k,
        "config_digest": canonical_digest(config),
    }
    metrics.write_predictions(predictions, out_path, meta=meta)
    if args.gold_out:
        metrics.write_gold({ex.cve_id: ex.label for ex in examples}, args.gold_out)
    _emit({"command": "predict", "examples": len(examples), "out": str(out_path)})
    return 0


def _cmd_evaluate(args: argparse.Namespace, config: dict) -> int:
    gold_path = _derived(args, config, "gold", "gold.jsonl")
    predictions_path = _derived(args, config, "predictions", "predictions.jsonl")
    with open(gold_path, "rb") as fh:
        gold = metrics.read_gold(fh)
    with open(predictions_path, "rb") as fh:
        predictions = metrics.read_predictions(fh)
    taxonomy = _load_taxonomy(args, config)
    eval_cfg = config["evaluation"]
    options = metrics.EvalOptions(
        k=tuple(eval_cfg["k"]),
        alpha=eval_cfg["alpha"],
        depth=eval_cfg["depth"],
        band_thresholds=tuple(eval_cfg["band_thresholds"]),
    )
    report = metrics.evaluate(predictions, gold, taxonomy, options)
    report_path = getattr(args, "report", None)
    if report_path is None and _output_dir(args, config) is not None:
        report_path = str(_output_dir(args, config) / "report.json")
    if report_path:
        payload = report.to_dict()
        payload["inputs"] = {
            "gold": str(gold_path),
            "gold_sha256": sha256_file(gold_path),
            "predictions": str(predictions_path),
            "predictions_sha256": sha256_file(predictions_path),
        }
        payload["config_digest"] = canonical_digest(config)
        metrics.write_report(payload, report_path)
    print(metrics.render_report_table(report))
    return 0


def _cmd_sample_disagreements(args: argparse.Namespace, config: dict) -> int:
    merged = _merged_from_args(args, config)
    rows = pipeline.sample_disagreements(merged, args.n, config["seed"])
    pipeline.write_worksheet(rows, args.out)
    write_json(
        Path(str(args.out) + ".meta.json"),
        {
            "command": "sample-disagreements",
            "sampled": len(rows),
            "seed": config["seed"],
            "config_digest": canonical_digest(config),
        },
    )
    _emit({"command": "sample-disagreements", "sampled": len(rows), "out": str(args.out)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=os.environ.get(CONFIG_ENV_VAR),
        help=f"JSON config file (default: ${CONFIG_ENV_VAR} if set)",
    )
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument(
        "--output-dir", default=None, help="directory for derived output paths"
    )
    common.add_argument(
        "--strict",
        action="store_true",
        help="treat recoverable input irregularities as errors",
    )

    parser = argparse.ArgumentParser(
        prog="cwemap",
        description="CVE-to-CWE dataset construction, baseline training, and scoring.",
    )
    parser.add_argument("--version", action="version", version=f"cwemap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def taxonomy_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--taxonomy", default=None, help="taxonomy file")
        p.add_argument(
            "--taxonomy-format",
            choices=TAXONOMY_FORMATS,
            default=None,
            help="taxonomy file format (default: edge-csv)",
        )

    p = sub.add_parser(
        "ingest", parents=[common], help="normalize a vulnerability feed to record JSONL"
    )
    p.add_argument("--feed", default=None, help="input feed file")
    p.add_argument(
        "--format",
        choices=corpus.FEED_FORMATS,
        default="nvd-json-2",
        help="feed format (default: nvd-json-2)",
    )
    p.add_argument("--out", default=None, help="output records JSONL")
    p.add_argument("--rejects", default=None, help="optional rejects report JSON")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("taxonomy-check", parents=[common], help="validate a taxonomy file")
    taxonomy_args(p)
    p.add_argument("--vocabulary", default=None, help="class list to check for coverage")
    p.set_defaults(func=_cmd_taxonomy_check)

    p = sub.add_parser(
        "build-splits", parents=[common], help="merge labels and emit train/val/test"
    )
    p.add_argument("--records", default=None, help="records JSONL")
    p.add_argument("--ai-labels", default=None, help="AI label JSONL")
    taxonomy_args(p)
    p.add_argument("--vocabulary", default=None, help="class list file")
    p.add_argument("--banned", default=None, help="banned CVE id list")
    p.set_defaults(func=_cmd_build_splits)

    p = sub.add_parser(
        "train-baseline", parents=[common], help="train the TF-IDF logistic baseline"
    )
    p.add_argument("--train", default=None, help="training split JSONL")
    p.add_argument("--val", default=None, help="validation split JSONL")
    p.add_argument("--model", default=None, help="output model file")
    p.set_defaults(func=_cmd_train_baseline)

    p = sub.add_parser("predict", parents=[common], help="rank classes for each example")
    p.add_argument("--model", default=None, help="trained model file")
    p.add_argument("--input", default=None, help="split JSONL to predict on")
    p.add_argument("--out", default=None, help="output predictions JSONL")
    p.add_argument("--top-k", type=int, default=None, help="entries per prediction")
    p.add_argument(
        "--gold-out", default=None, help="also write the input labels as gold JSONL"
    )
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser(
        "evaluate", parents=[common], help="score predictions against gold labels"
    )
    p.add_argument("--gold", default=None, help="gold JSONL")
    p.add_argument("--predictions", default=None, help="predictions JSONL")
    taxonomy_args(p)
    p.add_argument("--report", default=None, help="output report JSON")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "sample-disagreements",
        parents=[common],
        help="draw a review worksheet of label disagreements",
    )
    p.add_argument("--records", default=None, help="records JSONL")
    p.add_argument("--ai-labels", default=None, help="AI label JSONL")
    taxonomy_args(p)
    p.add_argument("--vocabulary", default=None, help="class list file")
    p.add_argument("--n", type=int, required=True, help="sample size")
    p.add_argument("--out", required=True, help="output worksheet CSV")
    p.set_defaults(func=_cmd_sample_disagreements)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.seed)
        return args.func(args, config)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CwemapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
