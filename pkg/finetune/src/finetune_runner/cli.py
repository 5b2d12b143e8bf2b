"""Command line front end: phase1, phase2, predict."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .config import load_manifest
from .errors import RunnerError
from .predictions import emit_predictions
from .runner import run_phase1, run_phase2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finetune-runner",
        description="Two-phase fine-tuning and prediction export for CWE classifiers.",
    )
    parser.add_argument("--version", action="version", version=f"finetune-runner {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phase1", help="train with the bottom of the encoder frozen")
    p.add_argument("--manifest", required=True, help="run manifest JSON")
    p.add_argument("--train", required=True, help="training split JSONL")
    p.add_argument("--val", required=True, help="validation split JSONL")
    p.add_argument("--out", required=True, help="output checkpoint directory")

    p = sub.add_parser("phase2", help="release all weights and keep training")
    p.add_argument("--manifest", required=True, help="run manifest JSON")
    p.add_argument("--checkpoint", required=True, help="phase-1 checkpoint directory")
    p.add_argument("--train", required=True, help="training split JSONL")
    p.add_argument("--val", required=True, help="validation split JSONL")
    p.add_argument("--out", required=True, help="output checkpoint directory")

    p = sub.add_parser("predict", help="write ranked predictions for a split")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint directory")
    p.add_argument("--input", required=True, help="split JSONL to predict on")
    p.add_argument("--out", required=True, help="output predictions JSONL")
    p.add_argument("--top-k", type=int, default=5, help="ranked entries per record")

    return parser


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _train_summary(command: str, result) -> dict:
    return {
        "command": command,
        "out": str(result.out_dir),
        "steps": len(result.step_losses),
        "final_loss": result.step_losses[-1],
        "best_epoch": result.best_epoch,
        "best_val_accuracy": result.best_val_accuracy,
        "frozen_parameters": len(result.frozen),
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "phase1":
            result = run_phase1(load_manifest(args.manifest), args.train, args.val, args.out)
            _emit(_train_summary("phase1", result))
        elif args.command == "phase2":
            result = run_phase2(
                load_manifest(args.manifest), args.checkpoint, args.train, args.val, args.out
            )
            _emit(_train_summary("phase2", result))
        elif args.command == "predict":
            emitted = emit_predictions(args.checkpoint, args.input, args.out, args.top_k)
            _emit(
                {
                    "command": "predict",
                    "out": str(emitted.path),
                    "count": emitted.count,
                    "k": emitted.k,
                    "manifest_digest": emitted.manifest_digest,
                }
            )
    except (RunnerError, ValueError) as exc:
        print(f"finetune-runner: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"finetune-runner: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
