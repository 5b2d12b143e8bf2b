"""Evaluation: ranked-prediction scoring, confidence intervals, rescue.

Predictions are a mapping cve_id -> ranked (CweId, score) list; gold is a
mapping cve_id -> CweId.  Every metric requires a prediction for every
gold id; prediction ids without gold are ignored.  The confidence
interval is the exact binomial interval computed from log-space tails
and bisection rather than a normal approximation, so it is valid at any
sample size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping, Sequence

from .corpus import CVE_ID_RE, cve_sort_key
from .errors import ParseError, ValidationError
from .jsonio import dumps_compact, iter_jsonl, read_bytes, source_name, write_json
from .taxonomy import CweId, CweTaxonomy

MAX_RANKED = 10

PredictionSet = Mapping[str, Sequence[tuple[CweId, float]]]
GoldLabels = Mapping[str, CweId]

REPORT_SCHEMA_VERSION = 1


def read_gold(source: bytes | str | BinaryIO) -> dict[str, CweId]:
    """Gold JSONL: {"cve_id": str, "label": str}, one per line, ids unique."""
    name = source_name(source)
    gold: dict[str, CweId] = {}
    for lineno, obj in iter_jsonl(read_bytes(source), name):
        if not isinstance(obj, dict) or set(obj) != {"cve_id", "label"}:
            raise ParseError(
                "expected exactly the fields cve_id and label", source=name, line=lineno
            )
        cve_id = obj["cve_id"]
        if not isinstance(cve_id, str) or not CVE_ID_RE.match(cve_id):
            raise ParseError(f"invalid cve_id {cve_id!r}", source=name, line=lineno)
        if cve_id in gold:
            raise ParseError(f"duplicate cve_id {cve_id}", source=name, line=lineno)
        label = CweId.try_parse(obj["label"]) if isinstance(obj["label"], str) else None
        if label is None:
            raise ParseError(
                f"invalid label {obj['label']!r} for {cve_id}", source=name, line=lineno
            )
        gold[cve_id] = label
    return gold


def read_predictions(source: bytes | str | BinaryIO) -> dict[str, tuple[tuple[CweId, float], ...]]:
    """Prediction JSONL: {"cve_id": str, "ranked": [{"cwe", "score"}, ...]}.

    Each line carries 1 to 10 entries: ids valid and unique within the
    line, scores finite and descending, score ties ordered by CWE number.
    """
    name = source_name(source)
    predictions: dict[str, tuple[tuple[CweId, float], ...]] = {}
    for lineno, obj in iter_jsonl(read_bytes(source), name):
        if not isinstance(obj, dict) or set(obj) != {"cve_id", "ranked"}:
            raise ParseError(
                "expected exactly the fields cve_id and ranked", source=name, line=lineno
            )
        cve_id = obj["cve_id"]
        if not isinstance(cve_id, str) or not CVE_ID_RE.match(cve_id):
            raise ParseError(f"invalid cve_id {cve_id!r}", source=name, line=lineno)
        if cve_id in predictions:
            raise ParseError(f"duplicate cve_id {cve_id}", source=name, line=lineno)
        raw = obj["ranked"]
        if not isinstance(raw, list) or not 1 <= len(raw) <= MAX_RANKED:
            raise ParseError(
                f"ranked must hold 1..{MAX_RANKED} entries", source=name, line=lineno
            )
        entries: list[tuple[CweId, float]] = []
        used: set[CweId] = set()
        prev: tuple[CweId, float] | None = None
        for item in raw:
            if not isinstance(item, dict) or set(item) != {"cwe", "score"}:
                raise ParseError(
                    "ranked entries need exactly the fields cwe and score",
                    source=name,
                    line=lineno,
                )
            cwe = CweId.try_parse(item["cwe"]) if isinstance(item["cwe"], str) else None
            if cwe is None:
                raise ParseError(f"invalid cwe {item['cwe']!r}", source=name, line=lineno)
            if cwe in used:
                raise ParseError(f"repeated cwe {cwe}", source=name, line=lineno)
            used.add(cwe)
            score = item["score"]
            if isinstance(score, bool) or not isinstance(score, (int, float)):
                raise ParseError(f"invalid score {score!r}", source=name, line=lineno)
            score = float(score)
            if not math.isfinite(score):
                raise ParseError(f"non-finite score for {cve_id}", source=name, line=lineno)
            if prev is not None:
                if score > prev[1]:
                    raise ParseError(
                        f"scores increase at {cwe} for {cve_id}", source=name, line=lineno
                    )
                if score == prev[1] and cwe < prev[0]:
                    raise ParseError(
                        f"tied scores out of CWE order at {cwe} for {cve_id}",
                        source=name,
                        line=lineno,
                    )
            prev = (cwe, score)
            entries.append((cwe, score))
        predictions[cve_id] = tuple(entries)
    return predictions


def write_predictions(
    predictions: PredictionSet, path: str | Path, meta: Mapping | None = None
) -> None:
    """Write prediction JSONL sorted by CVE id; any metadata goes to a
    sidecar json next to it, keeping the lines themselves schema-exact."""
    with open(path, "wb") as fh:
        for cve_id in sorted(predictions, key=cve_sort_key):
            row = {
                "cve_id": cve_id,
                "ranked": [{"cwe": c.value, "score": s} for c, s in predictions[cve_id]],
            }
            fh.write(dumps_compact(row).encode("utf-8"))
            fh.write(b"\n")
    if meta is not None:
        write_json(Path(str(path) + ".meta.json"), dict(meta))


def write_gold(gold: GoldLabels, path: str | Path) -> None:
    with open(path, "wb") as fh:
        for cve_id in sorted(gold, key=cve_sort_key):
            row = {"cve_id": cve_id, "label": gold[cve_id].value}
            fh.write(dumps_compact(row).encode("utf-8"))
            fh.write(b"\n")


def _check_aligned(p: PredictionSet, g: GoldLabels) -> list[str]:
    """Gold ids in deterministic order; every one must have a prediction."""
    if not g:
        raise ValidationError("gold labels are empty")
    missing = sorted((i for i in g if i not in p), key=cve_sort_key)
    if missing:
        shown = ", ".join(missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise ValidationError(f"{len(missing)} gold id(s) lack predictions: {shown}{more}")
    return sorted(g, key=cve_sort_key)


def strict_accuracy(p: PredictionSet, g: GoldLabels) -> tuple[int, int, float]:
    """Exact rank-1 match: (correct, n, accuracy)."""
    ids = _check_aligned(p, g)
    correct = sum(1 for i in ids if p[i][0][0] == g[i])
    return correct, len(ids), correct / len(ids)


def topk_accuracy(p: PredictionSet, g: GoldLabels, k: int) -> float:
    """Fraction of gold ids whose label appears in the first k entries.

    Lists shorter than k are used as-is.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids = _check_aligned(p, g)
    hits = sum(1 for i in ids if any(c == g[i] for c, _ in p[i][:k]))
    return hits / len(ids)


@dataclass(frozen=True)
class ClassScore:
    cwe: CweId
    support: int
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    @property
    def accuracy(self) -> float:
        """Within-class accuracy over gold members; equals recall."""
        return self.tp / self.support if self.support else 0.0


@dataclass(frozen=True)
class F1Result:
    rows: tuple[ClassScore, ...]
    macro_f1: float
    weighted_f1: float


def f1_scores(p: PredictionSet, g: GoldLabels) -> F1Result:
    """Per-class precision/recall/F1 over rank-1 predictions.

    Rows exist only for classes that appear in gold; a prediction of a
    class outside gold counts as a false negative for the example's gold
    class but earns no row of its own.  Macro-F1 is the unweighted mean
    over the rows, weighted-F1 the support-weighted mean.
    """
    ids = _check_aligned(p, g)
    classes = sorted({g[i] for i in ids})
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    support = {c: 0 for c in classes}
    for i in ids:
        truth = g[i]
        pred = p[i][0][0]
        support[truth] += 1
        if pred == truth:
            tp[truth] += 1
        else:
            fn[truth] += 1
            if pred in fp:
                fp[pred] += 1
    rows = tuple(
        ClassScore(cwe=c, support=support[c], tp=tp[c], fp=fp[c], fn=fn[c])
        for c in classes
    )
    total = sum(support.values())
    macro = sum(r.f1 for r in rows) / len(rows)
    weighted = sum(r.f1 * r.support for r in rows) / total
    return F1Result(rows=rows, macro_f1=macro, weighted_f1=weighted)


DEFAULT_BAND_THRESHOLDS = (0.3, 0.8)


def f1_band_breakdown(
    rows: Sequence[ClassScore],
    thresholds: tuple[float, float] = DEFAULT_BAND_THRESHOLDS,
) -> dict[str, tuple[int, int]]:
    """Group classes by F1 into three bands: (class count, summed support).

    With thresholds (lo, hi): high is f1 >= hi, medium is lo <= f1 < hi,
    low is f1 < lo; both cut points are inclusive on their upper band.
    """
    lo, hi = thresholds
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"thresholds must satisfy 0 <= lo < hi <= 1, got {thresholds}")
    bands = {"high": [0, 0], "medium": [0, 0], "low": [0, 0]}
    for row in rows:
        if row.f1 >= hi:
            band = "high"
        elif row.f1 >= lo:
            band = "medium"
        else:
            band = "low"
        bands[band][0] += 1
        bands[band][1] += row.support
    return {name: (counts[0], counts[1]) for name, counts in bands.items()}


def _log_choose(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _log_tail_ge(s: int, n: int, p: float) -> float:
    """log P[Binomial(n, p) >= s]."""
    if p <= 0.0:
        return 0.0 if s <= 0 else -math.inf
    if p >= 1.0:
        return 0.0
    terms = [
        _log_choose(n, k) + k * math.log(p) + (n - k) * math.log1p(-p)
        for k in range(s, n + 1)
    ]
    peak = max(terms)
    return peak + math.log(sum(math.exp(t - peak) for t in terms))


def _log_tail_le(s: int, n: int, p: float) -> float:
    """log P[Binomial(n, p) <= s]."""
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 0.0 if s >= n else -math.inf
    terms = [
        _log_choose(n, k) + k * math.log(p) + (n - k) * math.log1p(-p)
        for k in range(0, s + 1)
    ]
    peak = max(terms)
    return peak + math.log(sum(math.exp(t - peak) for t in terms))


def clopper_pearson(successes: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval, absolute tolerance 1e-8.

    The lower bound solves P[Bin(n,p) >= successes] = alpha/2 (0 when
    successes is 0); the upper solves P[Bin(n,p) <= successes] = alpha/2
    (1 when successes is n).  Tails are computed in log space and
    inverted by bisection.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= successes <= n:
        raise ValueError(f"successes out of range: {successes} of {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha out of (0,1): {alpha}")
    log_half_alpha = math.log(alpha / 2.0)

    if successes == 0:
        lo = 0.0
    else:
        # P[X >= s] grows with p; bisect to the crossing.
        a, b = 0.0, 1.0
        while b - a > 1e-9:
            mid = (a + b) / 2.0
            if _log_tail_ge(successes, n, mid) < log_half_alpha:
                a = mid
            else:
                b = mid
        lo = (a + b) / 2.0

    if successes == n:
        hi = 1.0
    else:
        # P[X <= s] falls with p; bisect to the crossing.
        a, b = 0.0, 1.0
        while b - a > 1e-9:
            mid = (a + b) / 2.0
            if _log_tail_le(successes, n, mid) > log_half_alpha:
                a = mid
            else:
                b = mid
        hi = (a + b) / 2.0

    return lo, hi


def hierarchy_aware_accuracy(
    p: PredictionSet, g: GoldLabels, t: CweTaxonomy, depth: int = 1
) -> dict:
    """Strict scoring plus parent/child rescue of rank-1 misses.

    A miss is rescued when its rank-1 prediction is hierarchy-equivalent
    to the gold label within `depth` ChildOf steps.  The rescued set is
    disjoint from the strict-correct set by construction.
    """
    ids = _check_aligned(p, g)
    strict_correct = 0
    rescued_ids: list[str] = []
    for i in ids:
        pred = p[i][0][0]
        if pred == g[i]:
            strict_correct += 1
        elif t.is_hierarchy_equivalent(pred, g[i], depth):
            rescued_ids.append(i)
    n = len(ids)
    return {
        "strict_correct": strict_correct,
        "rescued": len(rescued_ids),
        "rescued_ids": rescued_ids,
        "hier_acc": (strict_correct + len(rescued_ids)) / n,
    }


def per_class_report(p: PredictionSet, g: GoldLabels) -> list[tuple[CweId, int, float]]:
    """(class, support, within-class accuracy), largest support first,
    ties by CWE number."""
    rows = f1_scores(p, g).rows
    ordered = sorted(rows, key=lambda r: (-r.support, r.cwe))
    return [(r.cwe, r.support, r.accuracy) for r in ordered]


DEFAULT_TOP_KS = (1, 3)


@dataclass(frozen=True)
class EvalOptions:
    k: tuple[int, ...] = DEFAULT_TOP_KS
    alpha: float = 0.05
    depth: int = 1
    band_thresholds: tuple[float, float] = DEFAULT_BAND_THRESHOLDS


def _six_significant(value: float) -> float:
    return float(f"{value:.6g}")


def _ci_outward(lo: float, hi: float) -> tuple[float, float]:
    # Floor/ceil at the third decimal so a printed interval never
    # overclaims; round first to absorb float noise like 0.75*1000=749.9996.
    return (
        math.floor(round(lo * 1000.0, 6)) / 1000.0,
        math.ceil(round(hi * 1000.0, 6)) / 1000.0,
    )


HIERARCHY_NOTE = "supplementary; not directly comparable to strict scores"


@dataclass
class EvalReport:
    n: int
    strict_correct: int
    strict_acc: float
    ci: tuple[float, float]
    alpha: float
    topk_acc: dict[int, float]
    macro_f1: float
    weighted_f1: float
    per_class: tuple[ClassScore, ...]
    hierarchy: dict
    bands: dict[str, tuple[int, int]]
    band_thresholds: tuple[float, float] = DEFAULT_BAND_THRESHOLDS
    conventions: dict = field(
        default_factory=lambda: {
            "macro_f1": "unweighted mean over classes present in gold",
            "hierarchy": HIERARCHY_NOTE,
        }
    )

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "n": self.n,
            "strict": {
                "correct": self.strict_correct,
                "accuracy": _six_significant(self.strict_acc),
                "ci": [self.ci[0], self.ci[1]],
                "alpha": self.alpha,
            },
            "top_k": {str(k): _six_significant(v) for k, v in self.topk_acc.items()},
            "macro_f1": _six_significant(self.macro_f1),
            "weighted_f1": _six_significant(self.weighted_f1),
            "per_class": [
                {
                    "cwe": r.cwe.value,
                    "support": r.support,
                    "tp": r.tp,
                    "fp": r.fp,
                    "fn": r.fn,
                    "precision": _six_significant(r.precision),
                    "recall": _six_significant(r.recall),
                    "f1": _six_significant(r.f1),
                    "accuracy": _six_significant(r.accuracy),
                }
                for r in self.per_class
            ],
            "hierarchy": {
                "note": HIERARCHY_NOTE,
                "depth": self.hierarchy["depth"],
                "rescued": self.hierarchy["rescued"],
                "rescued_ids": list(self.hierarchy["rescued_ids"]),
                "accuracy": _six_significant(self.hierarchy["hier_acc"]),
            },
            "bands": {
                name: {"classes": c, "samples": s} for name, (c, s) in self.bands.items()
            },
            "band_thresholds": list(self.band_thresholds),
            "conventions": dict(self.conventions),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValidationError(
                f"unsupported report schema version {data.get('schema_version')!r}"
            )
        strict = data["strict"]
        per_class = tuple(
            ClassScore(
                cwe=CweId.parse(row["cwe"]),
                support=row["support"],
                tp=row["tp"],
                fp=row["fp"],
                fn=row["fn"],
            )
            for row in data["per_class"]
        )
        hierarchy = data["hierarchy"]
        return cls(
            n=data["n"],
            strict_correct=strict["correct"],
            strict_acc=strict["accuracy"],
            ci=(strict["ci"][0], strict["ci"][1]),
            alpha=strict["alpha"],
            topk_acc={int(k): v for k, v in data["top_k"].items()},
            macro_f1=data["macro_f1"],
            weighted_f1=data["weighted_f1"],
            per_class=per_class,
            hierarchy={
                "depth": hierarchy["depth"],
                "rescued": hierarchy["rescued"],
                "rescued_ids": list(hierarchy["rescued_ids"]),
                "hier_acc": hierarchy["accuracy"],
            },
            bands={
                name: (entry["classes"], entry["samples"])
                for name, entry in data["bands"].items()
            },
            band_thresholds=tuple(data["band_thresholds"]),
            conventions=dict(data["conventions"]),
        )


def evaluate(
    p: PredictionSet,
    g: GoldLabels,
    t: CweTaxonomy,
    options: EvalOptions | None = None,
) -> EvalReport:
    """Full scoring pass; composes the individual metrics above.

    The reported interval is rounded outward at the third decimal; all
    other fields keep full precision until serialization."""
    options = options or EvalOptions()
    correct, n, acc = strict_accuracy(p, g)
    lo, hi = clopper_pearson(correct, n, options.alpha)
    f1 = f1_scores(p, g)
    hierarchy = hierarchy_aware_accuracy(p, g, t, options.depth)
    hierarchy = dict(hierarchy, depth=options.depth)
    return EvalReport(
        n=n,
        strict_correct=correct,
        strict_acc=acc,
        ci=_ci_outward(lo, hi),
        alpha=options.alpha,
        topk_acc={k: topk_accuracy(p, g, k) for k in options.k},
        macro_f1=f1.macro_f1,
        weighted_f1=f1.weighted_f1,
        per_class=f1.rows,
        hierarchy=hierarchy,
        bands=f1_band_breakdown(f1.rows, options.band_thresholds),
        band_thresholds=options.band_thresholds,
    )


def render_report_table(report: EvalReport, max_class_rows: int = 10) -> str:
    """Plain-text rendering of the headline numbers plus the largest
    classes by support."""
    lines = [
        f"examples            {report.n}",
        (
            f"strict accuracy     {report.strict_acc:.4f}"
            f"  (CI {report.ci[0]:.3f}..{report.ci[1]:.3f}, alpha {report.alpha})"
        ),
    ]
    for k in sorted(report.topk_acc):
        lines.append(f"top-{k} accuracy      {report.topk_acc[k]:.4f}")
    lines.append(f"macro F1            {report.macro_f1:.4f}")
    lines.append(f"weighted F1         {report.weighted_f1:.4f}")
    lo, hi = report.band_thresholds
    bands = report.bands
    lines.append(
        "F1 bands (classes/samples)  "
        f"f1>={hi}: {bands['high'][0]}/{bands['high'][1]}  "
        f"{lo}<=f1<{hi}: {bands['medium'][0]}/{bands['medium'][1]}  "
        f"f1<{lo}: {bands['low'][0]}/{bands['low'][1]}"
    )
    lines.append(
        "hierarchy-aware (supplementary)  "
        f"accuracy {report.hierarchy['hier_acc']:.4f}  "
        f"rescued {report.hierarchy['rescued']}  depth {report.hierarchy['depth']}"
    )
    ordered = sorted(report.per_class, key=lambda r: (-r.support, r.cwe))
    lines.append("")
    lines.append("class      support  accuracy  f1")
    for row in ordered[:max_class_rows]:
        lines.append(
            f"{row.cwe.value:<10} {row.support:>7}  {row.accuracy:>8.4f}  {row.f1:.4f}"
        )
    if len(ordered) > max_class_rows:
        lines.append(f"... {len(ordered) - max_class_rows} more classes in the JSON report")
    return "\n".join(lines)


def write_report(report: Mapping, path: str | Path) -> None:
    write_json(path, dict(report))
