"""End-to-end gates for the runner, one verdict line per scenario.

The first gate exercises the two-phase protocol on a tiny random
encoder; the second feeds runner output to the dataset toolkit's
evaluate command, touching it only through the installed CLI and the
shared file formats.
"""

import contextlib
import json
import shutil
import subprocess
import time

import pytest

from runner_fixtures import LABELS, corpus_words, make_corpus, tiny_manifest

from finetune_runner import (
    PhaseConfig,
    emit_predictions,
    load_checkpoint,
    make_tiny_checkpoint,
    parameter_digests,
    run_phase1,
    run_phase2,
)


@contextlib.contextmanager
def criterion(request, name: str, budget: float | None = None):
    failures: list[str] = []
    started = time.perf_counter()
    crashed = True
    try:
        yield failures
        crashed = False
    finally:
        elapsed = time.perf_counter() - started
        if budget is not None and elapsed > budget:
            failures.append(f"runtime {elapsed:.2f}s over the {budget:.0f}s budget")
        if crashed and not failures:
            failures.append("crashed before all checks ran")
        status = "FAIL" if failures else "PASS"
        tw = request.config.get_terminal_writer()
        tw.write("\n")
        tw.line(f"[{status}] {name} ({elapsed:.2f}s)")
    assert not failures, f"{name}: " + " | ".join(failures)


def test_two_phase_tiny_encoder(request, tmp_path):
    """Freeze contract, full release, and a 100-sample learning smoke."""
    with criterion(request, "two-phase protocol on a tiny encoder", budget=120.0) as failures:
        base = make_tiny_checkpoint(tmp_path / "base", LABELS, corpus_words(), seed=11)
        train = make_corpus(tmp_path / "train.jsonl", 100, seed=15)
        val = make_corpus(tmp_path / "val.jsonl", 30, seed=16, start=50001)
        manifest = tiny_manifest(
            base,
            phase1=PhaseConfig(frozen_layers=1, learning_rate=5e-3, epochs=8),
            phase2=PhaseConfig(
                frozen_layers=0,
                learning_rate=2e-3,
                epochs=4,
                warmup_fraction=0.06,
                early_stop_patience=10,
            ),
        )

        base_digests = parameter_digests(load_checkpoint(base).model)
        phase1 = run_phase1(manifest, train, val, tmp_path / "phase1")
        p1_digests = parameter_digests(load_checkpoint(phase1.out_dir).model)

        if not phase1.frozen:
            failures.append("phase 1 froze nothing")
        drifted = [n for n in phase1.frozen if base_digests[n] != p1_digests[n]]
        if drifted:
            failures.append(f"{len(drifted)} frozen parameter digests changed in phase 1")
        if base_digests["classifier.weight"] == p1_digests["classifier.weight"]:
            failures.append("classifier head did not change in phase 1")

        if len(phase1.step_losses) < 50:
            failures.append(f"smoke run too short: {len(phase1.step_losses)} steps")
        if not phase1.step_losses[-1] < phase1.step_losses[0]:
            failures.append(
                f"no learning signal: first loss {phase1.step_losses[0]:.4f}, "
                f"final loss {phase1.step_losses[-1]:.4f}"
            )

        phase2 = run_phase2(manifest, phase1.out_dir, train, val, tmp_path / "phase2")
        p2_digests = parameter_digests(load_checkpoint(phase2.out_dir).model)
        stuck = [n for n in p1_digests if p1_digests[n] == p2_digests[n]]
        if stuck:
            failures.append(f"{len(stuck)} parameters did not move in phase 2 (e.g. {stuck[0]})")


def test_predictions_interop(request, phase2_run, splits, tmp_path):
    """Runner output scores through the dataset toolkit CLI unchanged."""
    with criterion(request, "predictions interop with the evaluation CLI", budget=60.0) as failures:
        cwemap = shutil.which("cwemap")
        if cwemap is None:
            failures.append("cwemap CLI not installed")
            return

        emitted = emit_predictions(phase2_run.out_dir, splits["test"], tmp_path / "predictions.jsonl", 3)

        examples = [json.loads(line) for line in splits["test"].read_text().splitlines()]
        gold_path = tmp_path / "gold.jsonl"
        gold_path.write_text(
            "\n".join(
                json.dumps({"cve_id": ex["cve_id"], "label": ex["label"]}) for ex in examples
            )
            + "\n"
        )
        taxonomy_path = tmp_path / "taxonomy.csv"
        taxonomy_path.write_text(
            "child,parent,child_name\n"
            "CWE-79,CWE-74,Cross-site Scripting\n"
            "CWE-89,CWE-74,SQL Injection\n"
            "CWE-787,CWE-119,Out-of-bounds Write\n"
        )
        report_path = tmp_path / "report.json"

        proc = subprocess.run(
            [
                cwemap,
                "evaluate",
                "--gold",
                str(gold_path),
                "--predictions",
                str(emitted.path),
                "--taxonomy",
                str(taxonomy_path),
                "--report",
                str(report_path),
            ],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            failures.append(
                f"cwemap evaluate exited {proc.returncode}: {proc.stderr.strip() or proc.stdout.strip()}"
            )
            return
        if "strict accuracy" not in proc.stdout:
            failures.append("evaluate output missing the strict accuracy line")

        report = json.loads(report_path.read_text())
        if report["n"] != len(examples):
            failures.append(f"report n {report['n']} != {len(examples)} inputs")

        gold = {ex["cve_id"]: ex["label"] for ex in examples}
        hits = 0
        for line in emitted.path.read_text().splitlines():
            row = json.loads(line)
            if row["ranked"][0]["cwe"] == gold[row["cve_id"]]:
                hits += 1
        expected = hits / len(examples)
        if abs(report["strict"]["accuracy"] - expected) > 1e-6:
            failures.append(
                f"strict accuracy {report['strict']['accuracy']} != recomputed top-1 {expected:.6f}"
            )
