#!/usr/bin/env python3
"""Deterministic builder for tests/fixtures.

Every expected value the tests assert against is computed here with
self-contained logic: an own copy of the keyed-hash rule, an own
parent table and equivalence check, own agreement arithmetic, and own
file serialization.  Nothing imports the package under test, so the
generated manifest acts as an independent oracle.  Rerunning the
script reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
from pathlib import Path

SEED = 20240601
EVAL_FRACTION = 0.3111
VAL_SHARE = 0.5010

# child, parent, child name
EDGES = [
    (20, 707, "Improper Input Validation"),
    (22, 668, "Path Traversal"),
    (74, 707, "Injection"),
    (77, 74, "Command Injection"),
    (78, 77, "OS Command Injection"),
    (79, 74, "Cross-site Scripting"),
    (89, 74, "SQL Injection"),
    (89, 943, "SQL Injection"),
    (943, 74, "Improper Neutralization in Data Query Logic"),
    (119, 118, "Improper Restriction of Memory Buffer Operations"),
    (121, 787, "Stack-based Buffer Overflow"),
    (122, 787, "Heap-based Buffer Overflow"),
    (125, 119, "Out-of-bounds Read"),
    (787, 119, "Out-of-bounds Write"),
    (200, 668, "Exposure of Sensitive Information"),
    (287, 284, "Improper Authentication"),
    (306, 287, "Missing Authentication for Critical Function"),
    (352, 345, "Cross-Site Request Forgery"),
    (416, 825, "Use After Free"),
]

VOCAB = [20, 22, 77, 78, 79, 89, 119, 121, 122, 125, 200, 287, 306, 352, 416, 787]

PARENTS: dict[int, set[int]] = {}
for child, parent, _ in EDGES:
    PARENTS.setdefault(child, set()).add(parent)


def equivalent(a: int, b: int) -> bool:
    """Equal or one direct ChildOf step apart (depth 1)."""
    if a == b:
        return True
    return b in PARENTS.get(a, ()) or a in PARENTS.get(b, ())


# Corpus composition: role -> count.  parent_ai rows carry an AI label
# (CWE-74) that sits in the taxonomy but outside the vocabulary.
COMPOSITION = [
    ("exact", 580),
    ("hier", 120),
    ("disagree", 100),
    ("nvd_only", 60),
    ("ai_only", 60),
    ("unlabeled", 40),
    ("parent_ai", 40),
]

ROLE_TO_AGREEMENT = {
    "exact": "exact",
    "hier": "hierarchy_only",
    "disagree": "disagree",
    "nvd_only": "nvd_only",
    "ai_only": "ai_only",
    "unlabeled": "unlabeled",
    "parent_ai": "hierarchy_only",
}

# Long-tail class weights, percent.
LABEL_WEIGHTS = [
    (787, 24), (79, 14), (89, 10), (125, 8), (20, 8), (22, 6), (119, 5),
    (200, 5), (352, 4), (416, 4), (121, 3), (122, 3), (77, 2), (78, 2),
    (287, 1), (306, 1),
]

# (nvd, ai) pairs one ChildOf step apart, both inside the vocabulary.
HIER_PAIRS = [
    (121, 787), (787, 121), (122, 787), (125, 119),
    (119, 125), (78, 77), (306, 287), (287, 306),
]

# (nvd, ai) pairs with no depth-1 relation.
DISAGREE_PAIRS = [
    (79, 89), (89, 79), (20, 200), (22, 352),
    (416, 125), (121, 122), (200, 20), (352, 22),
]

PARENT_AI_NVD = [79, 89, 77]

PHRASES = {
    20: "improper validation of crafted input fields",
    22: "directory traversal through dot dot sequences in archive entries",
    74: "injection of attacker controlled elements into downstream output",
    77: "command injection through unsanitized shell metacharacters",
    78: "os command injection in the management interface",
    79: "cross site scripting via reflected search parameters",
    89: "sql injection in the login form parameter",
    119: "memory buffer operations outside the intended bounds",
    121: "a stack based buffer overflow when parsing long header fields",
    122: "a heap based buffer overflow in the image decoder",
    125: "an out of bounds read while parsing malformed font tables",
    200: "exposure of sensitive configuration data to unauthorized actors",
    287: "improper authentication allowing session bypass",
    306: "access to a critical maintenance function without authentication",
    352: "cross site request forgery against the settings endpoint",
    416: "a use after free in the scripting engine object lifecycle",
    787: "an out of bounds write due to unchecked length arithmetic",
    None: "insufficient hardening of the administrative interface",
}

PRODUCTS = [
    "AcmeHTTPD", "Cévisto Gateway", "OpenRelay", "DataForge", "NetScreen OS",
    "Quill CMS", "BorealDB", "FluxRouter", "PaperTrail Agent", "ZenCart Plus",
    "IronGate VPN", "MilleFeuille UI",
]

VECTORS = [
    "request", "packet", "configuration file", "HTTP header",
    "archive", "upload", "query string", "session token",
]


def sort_key(cve_id: str) -> tuple[int, int]:
    _, year, seq = cve_id.split("-")
    return int(year), int(seq)


def unit(seed: int, domain: bytes, cve_id: str) -> float:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(
        cve_id.upper().encode("utf-8"), key=key, person=domain, digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def compact(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def pick_label(rng: random.Random) -> int:
    return rng.choices(
        [c for c, _ in LABEL_WEIGHTS], weights=[w for _, w in LABEL_WEIGHTS]
    )[0]


def make_description(i: int, label: int | None) -> str:
    product = PRODUCTS[i % len(PRODUCTS)]
    version = f"{1 + i % 9}.{i % 10}.{i % 4}"
    vector = VECTORS[(i * 3) % len(VECTORS)]
    return (
        f"{product} {version} allows remote attackers to trigger "
        f"{PHRASES[label]} via a crafted {vector}."
    )


def build_rows() -> list[dict]:
    order_rng = random.Random(4242)
    indices = list(range(1000))
    order_rng.shuffle(indices)
    roles: dict[int, str] = {}
    pos = 0
    for role, count in COMPOSITION:
        for i in indices[pos : pos + count]:
            roles[i] = role
        pos += count
    assert pos == 1000

    label_rng = random.Random(31337)
    rows = []
    for i in range(1000):
        role = roles[i]
        nvd = ai = None
        if role == "exact":
            nvd = ai = pick_label(label_rng)
        elif role == "hier":
            nvd, ai = HIER_PAIRS[label_rng.randrange(len(HIER_PAIRS))]
        elif role == "disagree":
            nvd, ai = DISAGREE_PAIRS[label_rng.randrange(len(DISAGREE_PAIRS))]
        elif role == "nvd_only":
            nvd = pick_label(label_rng)
        elif role == "ai_only":
            ai = pick_label(label_rng)
        elif role == "parent_ai":
            nvd = PARENT_AI_NVD[label_rng.randrange(len(PARENT_AI_NVD))]
            ai = 74
        year = 2017 + i % 8
        rows.append(
            {
                "i": i,
                "cve_id": f"CVE-{year}-{10000 + i}",
                "role": role,
                "nvd": nvd,
                "ai": ai,
                "description": make_description(i, ai if ai is not None else nvd),
                "last_modified": (
                    f"2025-{1 + i % 6:02d}-{1 + (i * 7) % 28:02d}"
                    f"T{i % 24:02d}:{(i * 11) % 60:02d}:{(i * 17) % 60:02d}.{i % 1000:03d}"
                ),
            }
        )

    for row in rows:
        got = classify(row["nvd"], row["ai"])
        assert got == ROLE_TO_AGREEMENT[row["role"]], (row, got)
    return rows


def classify(nvd: int | None, ai: int | None) -> str:
    if nvd is not None and ai is not None:
        if nvd == ai:
            return "exact"
        if equivalent(nvd, ai):
            return "hierarchy_only"
        return "disagree"
    if nvd is not None:
        return "nvd_only"
    if ai is not None:
        return "ai_only"
    return "unlabeled"


def feed_entry(row: dict) -> dict:
    i = row["i"]
    cve: dict = {
        "id": row["cve_id"],
        "sourceIdentifier": "cve@mitre.org",
        "published": f"20{17 + i % 8}-{1 + i % 12:02d}-{1 + i % 28:02d}T12:00:00.000",
        "lastModified": row["last_modified"],
        "vulnStatus": "Analyzed",
    }
    descriptions = []
    if i % 9 == 4:
        descriptions.append(
            {"lang": "es", "value": "Una vulnerabilidad en el componente afectado."}
        )
    descriptions.append({"lang": "en", "value": row["description"]})
    cve["descriptions"] = descriptions

    nvd = row["nvd"]
    if nvd is not None:
        value = f"CWE-{nvd}"
        if i % 13 == 6:
            # Primary listed after a useless Secondary; must still win.
            cve["weaknesses"] = [
                {
                    "source": "nvd@nist.gov",
                    "type": "Secondary",
                    "description": [{"lang": "en", "value": "NVD-CWE-noinfo"}],
                },
                {
                    "source": "nvd@nist.gov",
                    "type": "Primary",
                    "description": [{"lang": "en", "value": value}],
                },
            ]
        elif i % 13 == 2:
            # Primary holds no usable id; fall through to the Secondary.
            cve["weaknesses"] = [
                {
                    "source": "nvd@nist.gov",
                    "type": "Primary",
                    "description": [{"lang": "en", "value": "NVD-CWE-Other"}],
                },
                {
                    "source": "134c704f-9b21-4f2e-91b3-4a467353bcc0",
                    "type": "Secondary",
                    "description": [{"lang": "en", "value": value}],
                },
            ]
        else:
            cve["weaknesses"] = [
                {
                    "source": "nvd@nist.gov",
                    "type": "Primary",
                    "description": [{"lang": "en", "value": value}],
                }
            ]
    elif i % 2 == 1:
        cve["weaknesses"] = [
            {
                "source": "nvd@nist.gov",
                "type": "Primary",
                "description": [{"lang": "en", "value": "NVD-CWE-noinfo"}],
            }
        ]

    if i % 5 == 0:
        cve["metrics"] = {
            "cvssMetricV31": [{"cvssData": {"baseScore": 7.5 + (i % 3) * 0.7}}]
        }
    if i % 4 == 1:
        cve["references"] = [
            {"url": f"https://example.org/advisories/{row['cve_id'].lower()}"}
        ]
    return {"cve": cve}


def build_feed(rows: list[dict]) -> dict:
    entries = [feed_entry(row) for row in rows]
    random.Random(99).shuffle(entries)

    stale_twin = next(row for row in rows if row["i"] == 500)
    stale = {
        "cve": {
            "id": stale_twin["cve_id"],
            "published": "2019-12-31T23:59:59.000",
            "lastModified": "2020-01-01T00:00:00.000",
            "vulnStatus": "Modified",
            "descriptions": [
                {
                    "lang": "en",
                    "value": "Superseded duplicate entry retained only for earlier analysis.",
                }
            ],
        }
    }
    bad_id = {
        "cve": {
            "id": "CVE-2024-03",
            "descriptions": [
                {"lang": "en", "value": "Malformed identifier entry in the upstream feed."}
            ],
        }
    }
    no_english = {
        "cve": {
            "id": "CVE-2016-88888",
            "lastModified": "2024-05-05T00:00:00.000",
            "descriptions": [
                {"lang": "fr", "value": "Une description suffisante en français seulement."}
            ],
        }
    }
    withdrawn = {
        "cve": {
            "id": "CVE-2016-99999",
            "lastModified": "2024-06-06T00:00:00.000",
            "descriptions": [
                {
                    "lang": "en",
                    "value": "** REJECT ** DO NOT USE THIS CANDIDATE NUMBER. Withdrawn by its CNA.",
                }
            ],
        }
    }
    entries.insert(17, stale)
    entries.insert(100, bad_id)
    entries.insert(400, no_english)
    entries.insert(900, withdrawn)
    assert len(entries) == 1004
    return {
        "resultsPerPage": len(entries),
        "startIndex": 0,
        "totalResults": len(entries),
        "format": "NVD_CVE",
        "version": "2.0",
        "timestamp": "2025-07-01T00:00:00.000",
        "vulnerabilities": entries,
    }


def record_line(row: dict) -> str:
    return compact(
        {
            "cve_id": row["cve_id"],
            "description": row["description"],
            "nvd_cwe": f"CWE-{row['nvd']}" if row["nvd"] is not None else None,
            "last_modified": row["last_modified"],
            "attack_techniques": None,
        }
    )


def build_banned(rows: list[dict]) -> tuple[str, list[str], list[str]]:
    by_role: dict[str, list[str]] = {}
    for row in rows:
        by_role.setdefault(row["role"], []).append(row["cve_id"])
    rng = random.Random(2718)
    present: list[str] = []
    for role, count in [("exact", 12), ("hier", 3), ("disagree", 2), ("ai_only", 2), ("unlabeled", 1)]:
        present.extend(rng.sample(by_role[role], count))
    absent = [
        "CVE-2015-10001",
        "CVE-2015-10002",
        "CVE-2014-12345",
        "CVE-2015-20202",
        "CVE-2026-99990",
    ]
    lines = [
        "# CVE ids that leaked into a public benchmark; keep them out of",
        "# every training and evaluation split.",
        "",
    ]
    entries = present + absent
    for pos, cve_id in enumerate(entries):
        shown = cve_id.lower() if pos % 3 == 2 else cve_id
        if pos % 7 == 4:
            shown = f"  {shown}   # flagged during review"
        lines.append(shown)
    lines.append(present[0].lower() + "  # duplicate on purpose")
    lines.append("")
    return "\n".join(lines), present, absent


def build_split_expectations(rows: list[dict], banned_present: list[str]) -> dict:
    banned = {b.upper() for b in banned_present}
    vocab = set(VOCAB)
    splits: dict[str, list[dict]] = {"train": [], "val": [], "test": []}
    excluded: list[dict] = []
    for row in sorted(rows, key=lambda r: sort_key(r["cve_id"])):
        if row["cve_id"].upper() in banned:
            continue
        ai = row["ai"]
        if ai is None:
            excluded.append({"cve_id": row["cve_id"], "reason": "ai-label-missing"})
            continue
        if ai not in vocab:
            excluded.append({"cve_id": row["cve_id"], "reason": "label-not-in-vocabulary"})
            continue
        line = {
            "cve_id": row["cve_id"],
            "description": row["description"],
            "label": f"CWE-{ai}",
        }
        if classify(row["nvd"], ai) == "exact" and unit(
            SEED, b"cwemap.assign", row["cve_id"]
        ) < EVAL_FRACTION:
            name = "val" if unit(SEED, b"cwemap.valtest", row["cve_id"]) < VAL_SHARE else "test"
        else:
            name = "train"
        splits[name].append(line)

    digests = {}
    for name, lines in splits.items():
        body = "".join(compact(line) + "\n" for line in lines)
        digests[f"{name}.jsonl"] = sha256(body.encode("utf-8"))
    body = "".join(compact(line) + "\n" for line in excluded)
    digests["excluded.jsonl"] = sha256(body.encode("utf-8"))

    reasons: dict[str, int] = {}
    for line in excluded:
        reasons[line["reason"]] = reasons.get(line["reason"], 0) + 1
    return {
        "sizes": {
            "train": len(splits["train"]),
            "val": len(splits["val"]),
            "test": len(splits["test"]),
            "excluded": len(excluded),
        },
        "excluded_reasons": reasons,
        "digests": digests,
        "val_ids": [line["cve_id"] for line in splits["val"]],
        "test_ids": [line["cve_id"] for line in splits["test"]],
    }


def build_eval_fixture() -> tuple[str, str, dict]:
    """Gold plus ranked predictions with exactly 756 strict hits, 109
    depth-1 rescues, gold at rank 3 for 60 rows and rank 5 for 40, and
    35 rows without gold anywhere."""
    rng = random.Random(1123)
    golds = [pick_label(rng) for _ in range(1000)]

    statuses = (
        ["strict"] * 756 + ["rescued"] * 109 + ["rank3"] * 60 + ["rank5"] * 40 + ["absent"] * 35
    )
    random.Random(5151).shuffle(statuses)

    # Includes non-vocabulary parents so every class has a rescue partner.
    partners = {
        c: sorted(
            {p for p in PARENTS.get(c, ()) if p != c}
            | {ch for ch, ps in PARENTS.items() if c in ps}
        )
        for c in VOCAB
    }
    all_ids = sorted(set(VOCAB) | {74, 707, 668, 943, 118, 284, 345, 825})

    gold_lines = []
    pred_lines = []
    strict = rescued = top3 = top5 = 0
    for j in range(1000):
        cve_id = f"CVE-2025-{20000 + j}"
        gold = golds[j]
        status = statuses[j]
        wrong_pool = [c for c in VOCAB if c != gold and not equivalent(c, gold)]

        if status == "strict":
            ranked = [gold]
            length = 3 + j % 5
        elif status == "rescued":
            partner = partners[gold][j % len(partners[gold])]
            ranked = [partner, gold]
            length = 3 + j % 4
        elif status == "rank3":
            ranked = [wrong_pool[j % len(wrong_pool)], wrong_pool[(j + 1) % len(wrong_pool)], gold]
            length = 3 + j % 3
        elif status == "rank5":
            ranked = [wrong_pool[(j + r) % len(wrong_pool)] for r in range(4)] + [gold]
            length = 5 + j % 3
        else:
            ranked = [wrong_pool[j % len(wrong_pool)]]
            length = 4 + j % 4

        fillers = [c for c in all_ids if c != gold and c not in ranked]
        while len(ranked) < length and fillers:
            ranked.append(fillers.pop(j % len(fillers)))
        if status == "absent":
            assert gold not in ranked and not equivalent(ranked[0], gold)
        assert len(ranked) == len(set(ranked)) <= 10

        if ranked[0] == gold:
            strict += 1
        elif equivalent(ranked[0], gold):
            rescued += 1
        if gold in ranked[:3]:
            top3 += 1
        if gold in ranked[:5]:
            top5 += 1

        gold_lines.append(compact({"cve_id": cve_id, "label": f"CWE-{gold}"}))
        entries = [
            {"cwe": f"CWE-{c}", "score": round(0.97 - 0.05 * r - (j % 7) * 0.0005, 6)}
            for r, c in enumerate(ranked)
        ]
        pred_lines.append(compact({"cve_id": cve_id, "ranked": entries}))

    assert strict == 756 and rescued == 109, (strict, rescued)
    assert top3 == 925 and top5 == 965, (top3, top5)
    gold_text = "\n".join(gold_lines) + "\n"
    pred_text = "\n".join(pred_lines) + "\n"
    expectations = {
        "n": 1000,
        "strict_correct": strict,
        "rescued": rescued,
        "strict_acc": strict / 1000,
        "hier_acc": (strict + rescued) / 1000,
        "top1": strict / 1000,
        "top3": top3 / 1000,
        "top5": top5 / 1000,
        "gold_sha256": sha256(gold_text.encode("utf-8")),
        "predictions_sha256": sha256(pred_text.encode("utf-8")),
    }
    return gold_text, pred_text, expectations


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures"),
        help="fixture directory to write",
    )
    args = parser.parse_args()
    out = Path(args.out)
    (out / "eval").mkdir(parents=True, exist_ok=True)

    taxonomy_lines = ["child,parent,child_name"]
    for child, parent, name in EDGES:
        taxonomy_lines.append(f"CWE-{child},CWE-{parent},{name}")
    (out / "taxonomy.csv").write_text("\n".join(taxonomy_lines) + "\n", encoding="utf-8")

    vocab_lines = ["# Target classes, one per line; order defines nothing."]
    vocab_lines += [f"CWE-{c}" for c in VOCAB]
    (out / "vocabulary.txt").write_text("\n".join(vocab_lines) + "\n", encoding="utf-8")

    rows = build_rows()
    feed = build_feed(rows)
    (out / "feed_nvd2.json").write_text(
        json.dumps(feed, separators=(",", ":"), ensure_ascii=False), encoding="utf-8"
    )

    ordered = sorted(rows, key=lambda r: sort_key(r["cve_id"]))
    records_text = "".join(record_line(row) + "\n" for row in ordered)
    (out / "records.jsonl").write_text(records_text, encoding="utf-8")

    ai_lines = [
        compact({"cve_id": row["cve_id"], "ai_cwe": f"CWE-{row['ai']}"})
        for row in ordered
        if row["ai"] is not None
    ]
    (out / "ai_labels.jsonl").write_text("\n".join(ai_lines) + "\n", encoding="utf-8")

    banned_text, present, absent = build_banned(rows)
    (out / "banned.txt").write_text(banned_text, encoding="utf-8")

    counts = {a: 0 for a in set(ROLE_TO_AGREEMENT.values())}
    for row in rows:
        counts[classify(row["nvd"], row["ai"])] += 1
    n_both = counts["exact"] + counts["hierarchy_only"] + counts["disagree"]

    gold_text, pred_text, eval_expect = build_eval_fixture()
    (out / "eval" / "gold.jsonl").write_text(gold_text, encoding="utf-8")
    (out / "eval" / "predictions.jsonl").write_text(pred_text, encoding="utf-8")

    per_year: dict[str, int] = {}
    for row in rows:
        year = row["cve_id"].split("-")[1]
        per_year[year] = per_year.get(year, 0) + 1

    manifest = {
        "seed": SEED,
        "split_config": {
            "eval_fraction": EVAL_FRACTION,
            "val_share": VAL_SHARE,
            "equivalence_depth": 1,
        },
        "corpus": {
            "feed_entries": 1004,
            "rejected": 2,
            "duplicates": 1,
            "insufficient": 1,
            "kept": 1000,
            "per_year": per_year,
            "records_sha256": sha256(records_text.encode("utf-8")),
        },
        "agreement": {
            "n_both": n_both,
            "exact_rate": round(counts["exact"] / n_both, 4),
            "hierarchy_rate": round(
                (counts["exact"] + counts["hierarchy_only"]) / n_both, 4
            ),
            "counts": counts,
        },
        "decontamination": {
            "listed": len(present) + len(absent),
            "removed": len(present),
            "not_found": absent,
        },
        "splits": build_split_expectations(rows, present),
        "disagree_pool": counts["disagree"],
        "eval": eval_expect,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )

    sizes = manifest["splits"]["sizes"]
    print(f"wrote fixtures to {out}")
    print(f"  agreement: {manifest['agreement']}")
    print(f"  splits: {sizes}")
    print(f"  eval: strict={eval_expect['strict_correct']} rescued={eval_expect['rescued']}")


if __name__ == "__main__":
    main()
