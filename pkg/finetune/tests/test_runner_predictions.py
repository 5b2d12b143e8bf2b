"""Prediction export: schema shape, ordering, clamping, determinism."""

import hashlib
import json

import pytest

from runner_fixtures import LABELS, corpus_words, make_corpus

from finetune_runner import (
    ConfigurationError,
    DataError,
    cve_sort_key,
    cwe_number,
    emit_predictions,
    make_tiny_checkpoint,
    manifest_digest,
)


@pytest.fixture(scope="module")
def emitted(phase2_run, splits, tmp_path_factory):
    out = tmp_path_factory.mktemp("preds") / "predictions.jsonl"
    result = emit_predictions(phase2_run.out_dir, splits["test"], out, 3)
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    return result, rows


class TestShape:
    def test_one_row_per_input_with_exact_keys(self, emitted, splits):
        result, rows = emitted
        n_inputs = len(splits["test"].read_text().splitlines())
        assert result.count == len(rows) == n_inputs
        for row in rows:
            assert set(row) == {"cve_id", "ranked"}
            assert len(row["ranked"]) == 3
            for entry in row["ranked"]:
                assert set(entry) == {"cwe", "score"}
                assert entry["cwe"] in LABELS
                assert isinstance(entry["score"], float)

    def test_rows_sorted_by_numeric_cve_id(self, emitted):
        _, rows = emitted
        ids = [row["cve_id"] for row in rows]
        assert ids == sorted(ids, key=cve_sort_key)
        assert len(set(ids)) == len(ids)

    def test_scores_non_increasing_with_numeric_tiebreak(self, emitted):
        _, rows = emitted
        for row in rows:
            entries = row["ranked"]
            for a, b in zip(entries, entries[1:]):
                assert a["score"] >= b["score"]
                if a["score"] == b["score"]:
                    assert cwe_number(a["cwe"]) < cwe_number(b["cwe"])

    def test_cwes_unique_within_a_row(self, emitted):
        _, rows = emitted
        for row in rows:
            cwes = [entry["cwe"] for entry in row["ranked"]]
            assert len(set(cwes)) == len(cwes)


class TestScores:
    def test_full_ranking_sums_to_one(self, phase2_run, splits, tmp_path):
        out = tmp_path / "full.jsonl"
        emit_predictions(phase2_run.out_dir, splits["test"], out, len(LABELS))
        for line in out.read_text().splitlines():
            total = sum(entry["score"] for entry in json.loads(line)["ranked"])
            assert abs(total - 1.0) <= 1e-6


class TestK:
    def test_k_one_yields_single_entries(self, phase2_run, splits, tmp_path):
        out = tmp_path / "top1.jsonl"
        result = emit_predictions(phase2_run.out_dir, splits["test"], out, 1)
        assert result.k == 1
        assert all(len(json.loads(line)["ranked"]) == 1 for line in out.read_text().splitlines())

    def test_k_clamps_to_label_count(self, phase2_run, splits, tmp_path):
        result = emit_predictions(phase2_run.out_dir, splits["test"], tmp_path / "o.jsonl", 25)
        assert result.k == len(LABELS)

    @pytest.mark.parametrize("k", [0, -1, 1.5, True])
    def test_k_must_be_a_positive_integer(self, phase2_run, splits, tmp_path, k):
        with pytest.raises(ValueError):
            emit_predictions(phase2_run.out_dir, splits["test"], tmp_path / "o.jsonl", k)


class TestProvenance:
    def test_sidecar_embeds_manifest_digest(self, emitted, manifest, splits, phase2_run):
        result, _ = emitted
        meta = json.loads(result.path.with_name(result.path.name + ".meta.json").read_text())
        assert meta["manifest_digest"] == result.manifest_digest == manifest_digest(manifest)
        assert meta["checkpoint"] == str(phase2_run.out_dir)
        assert meta["count"] == result.count
        assert meta["k"] == 3
        assert meta["input_sha256"] == hashlib.sha256(splits["test"].read_bytes()).hexdigest()

    def test_reruns_are_byte_identical(self, phase2_run, splits, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        emit_predictions(phase2_run.out_dir, splits["test"], a, 3)
        emit_predictions(phase2_run.out_dir, splits["test"], b, 3)
        assert a.read_bytes() == b.read_bytes()


class TestErrors:
    def test_checkpoint_without_manifest_is_rejected(self, splits, tmp_path):
        bare = make_tiny_checkpoint(tmp_path / "bare", LABELS, corpus_words(), seed=3)
        with pytest.raises(ConfigurationError, match="manifest.json"):
            emit_predictions(bare, splits["test"], tmp_path / "o.jsonl", 1)

    def test_duplicate_input_ids_are_rejected(self, phase2_run, tmp_path):
        dup = tmp_path / "dup.jsonl"
        row = {"cve_id": "CVE-2024-10001", "description": "sql injection", "label": "CWE-89"}
        dup.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
        with pytest.raises(DataError, match="duplicate"):
            emit_predictions(phase2_run.out_dir, dup, tmp_path / "o.jsonl", 1)

    def test_unlabeled_records_are_scoreable(self, phase2_run, tmp_path):
        unlabeled = tmp_path / "unlabeled.jsonl"
        unlabeled.write_text(json.dumps({"cve_id": "CVE-2024-10001", "description": "buffer overflow write"}) + "\n")
        result = emit_predictions(phase2_run.out_dir, unlabeled, tmp_path / "o.jsonl", 2)
        assert result.count == 1
