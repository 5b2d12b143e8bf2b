"""Split-file reader: accepted shapes and rejection diagnostics."""

import json

import pytest

from finetune_runner import DataError, cve_sort_key, cwe_number, read_examples


def write_lines(path, rows):
    path.write_text("\n".join(json.dumps(r) if isinstance(r, dict) else r for r in rows) + "\n")
    return path


def test_reads_labeled_records(tmp_path):
    path = write_lines(
        tmp_path / "split.jsonl",
        [
            {"cve_id": "CVE-2024-10001", "description": "sql injection", "label": "CWE-89"},
            {"cve_id": "cve-2024-10002", "description": "overflow", "label": "CWE-787"},
        ],
    )
    examples = read_examples(path)
    assert [ex.cve_id for ex in examples] == ["CVE-2024-10001", "CVE-2024-10002"]
    assert examples[1].label == "CWE-787"


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "split.jsonl"
    path.write_text(
        '{"cve_id": "CVE-2024-10001", "description": "x y", "label": "CWE-89"}\n\n'
    )
    assert len(read_examples(path)) == 1


def test_extra_keys_are_tolerated(tmp_path):
    path = write_lines(
        tmp_path / "split.jsonl",
        [{"cve_id": "CVE-2024-10001", "description": "x", "label": "CWE-89", "source": "feed"}],
    )
    assert read_examples(path)[0].label == "CWE-89"


def test_label_optional_only_when_not_required(tmp_path):
    path = write_lines(tmp_path / "split.jsonl", [{"cve_id": "CVE-2024-10001", "description": "x"}])
    assert read_examples(path, require_label=False)[0].label is None
    with pytest.raises(DataError, match="missing label"):
        read_examples(path)


@pytest.mark.parametrize(
    "row, message",
    [
        ("{broken", "invalid JSON"),
        ('"just a string"', "JSON object"),
        ({"cve_id": "NOT-AN-ID", "description": "x", "label": "CWE-89"}, "invalid cve_id"),
        ({"cve_id": "CVE-24-1", "description": "x", "label": "CWE-89"}, "invalid cve_id"),
        ({"cve_id": "CVE-2024-10001", "description": "", "label": "CWE-89"}, "description"),
        ({"cve_id": "CVE-2024-10001", "description": 5, "label": "CWE-89"}, "description"),
        ({"cve_id": "CVE-2024-10001", "description": "x", "label": "CWE-089"}, "invalid label"),
        ({"cve_id": "CVE-2024-10001", "description": "x", "label": 89}, "invalid label"),
    ],
)
def test_rejects_malformed_rows(tmp_path, row, message):
    good = {"cve_id": "CVE-2024-10001", "description": "x", "label": "CWE-89"}
    path = write_lines(tmp_path / "split.jsonl", [good, row])
    with pytest.raises(DataError, match=message) as exc:
        read_examples(path)
    assert ":2:" in str(exc.value)


def test_rejects_empty_file(tmp_path):
    path = tmp_path / "split.jsonl"
    path.write_text("\n")
    with pytest.raises(DataError, match="no records"):
        read_examples(path)


def test_sort_keys():
    assert cve_sort_key("CVE-2020-10000") > cve_sort_key("CVE-2020-9999")
    assert sorted(["CVE-2021-5", "CVE-2020-10000"], key=cve_sort_key) == [
        "CVE-2020-10000",
        "CVE-2021-5",
    ]
    assert cwe_number("CWE-787") == 787
