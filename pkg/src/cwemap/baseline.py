"""Sparse TF-IDF features and a multinomial logistic regression baseline.

Everything here is written for bit-reproducibility: the vectorizer breaks
document-frequency ties lexicographically, the trainer starts from zero
weights and draws its shuffles from a seeded PCG64 stream, and the model
container is a flat binary format with no timestamps, so retraining with
the same inputs and seed yields an identical file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ParseError, TrainingDivergedError, ValidationError
from .pipeline import SplitExample
from .taxonomy import CweId

# Maximal runs of Unicode letters and digits; underscore excluded.
_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class VectorizerConfig:
    max_features: int = 50000
    ngram_min: int = 1
    ngram_max: int = 2
    lowercase: bool = True

    def __post_init__(self) -> None:
        if self.max_features < 1:
            raise ValueError(f"max_features must be >= 1, got {self.max_features}")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ValueError(f"bad ngram range ({self.ngram_min}, {self.ngram_max})")

    def to_dict(self) -> dict:
        return {
            "max_features": self.max_features,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "lowercase": self.lowercase,
        }


def tokenize(text: str, cfg: VectorizerConfig | None = None) -> list[str]:
    """Split text into n-gram terms.

    Base tokens are maximal runs of letters and digits, kept when at
    least two characters long or purely numeric.  N-grams of the orders
    in the config's range are joined by single spaces.
    """
    cfg = cfg or VectorizerConfig()
    raw = text.lower() if cfg.lowercase else text
    tokens = [t for t in _TOKEN_RE.findall(raw) if len(t) >= 2 or t.isdigit()]
    terms: list[str] = []
    for n in range(cfg.ngram_min, cfg.ngram_max + 1):
        if n == 1:
            terms.extend(tokens)
        else:
            terms.extend(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return terms


@dataclass
class VectorizerModel:
    """Fitted TF-IDF vocabulary: term -> index plus per-feature idf."""

    config: VectorizerConfig
    terms: tuple[str, ...]
    idf: np.ndarray
    n_docs: int

    def __post_init__(self) -> None:
        self.term_index: dict[str, int] = {t: i for i, t in enumerate(self.terms)}


def fit_vectorizer(docs: Sequence[str], cfg: VectorizerConfig | None = None) -> VectorizerModel:
    """Build the vocabulary and idf weights from the fitting corpus.

    Vocabulary keeps the max_features most document-frequent terms,
    equal counts broken toward the lexicographically smaller term; the
    cap is applied before idf.  idf(t) = ln((1 + N) / (1 + df(t))) + 1.
    """
    cfg = cfg or VectorizerConfig()
    if not docs:
        raise ValidationError("cannot fit a vectorizer on zero documents")
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(tokenize(doc, cfg)):
            df[term] = df.get(term, 0) + 1
    if not df:
        raise ValidationError("no terms survive tokenization; all documents empty")
    ranked = sorted(df.items(), key=lambda item: (-item[1], item[0]))
    kept = sorted(term for term, _ in ranked[: cfg.max_features])
    n = len(docs)
    counts = np.array([df[t] for t in kept], dtype=np.float64)
    idf = np.log((1.0 + n) / (1.0 + counts)) + 1.0
    return VectorizerModel(config=cfg, terms=tuple(kept), idf=idf, n_docs=n)


def transform_docs(v: VectorizerModel, docs: Sequence[str]) -> sparse.csr_matrix:
    """Term counts scaled by idf, each non-empty row L2-normalized."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for doc in docs:
        row: dict[int, int] = {}
        for term in tokenize(doc, v.config):
            idx = v.term_index.get(term)
            if idx is not None:
                row[idx] = row.get(idx, 0) + 1
        for idx in sorted(row):
            indices.append(idx)
            data.append(float(row[idx]))
        indptr.append(len(indices))
    x = sparse.csr_matrix(
        (
            np.array(data, dtype=np.float64),
            np.array(indices, dtype=np.int64),
            np.array(indptr, dtype=np.int64),
        ),
        shape=(len(docs), len(v.terms)),
    )
    x = x.multiply(v.idf).tocsr()
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    norms[norms == 0.0] = 1.0
    return (sparse.diags(1.0 / norms) @ x).tocsr()


def transform(v: VectorizerModel, doc: str) -> sparse.csr_matrix:
    """One document as a 1 x n_features unit-norm sparse row."""
    return transform_docs(v, [doc])


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    learning_rate: float = 0.5
    batch_size: int = 256
    l2_lambda: float = 1e-6
    epochs: int = 30
    early_stop_patience: int = 3

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.early_stop_patience < 1:
            raise ValueError(
                f"early_stop_patience must be >= 1, got {self.early_stop_patience}"
            )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "l2_lambda": self.l2_lambda,
            "epochs": self.epochs,
            "early_stop_patience": self.early_stop_patience,
        }


@dataclass
class LinearModel:
    weights: np.ndarray  # (num_classes, num_features)
    bias: np.ndarray  # (num_classes,)
    class_labels: tuple[CweId, ...]
    history: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.weights.shape[0] != len(self.class_labels):
            raise ValidationError(
                f"{self.weights.shape[0]} weight rows for {len(self.class_labels)} classes"
            )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: sparse.csr_matrix,
    y: np.ndarray,
    l2_lambda: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean softmax cross-entropy plus (l2/2)||W||^2, bias unpenalized,
    with its analytic gradient."""
    m = x.shape[0]
    logits = np.asarray(x @ weights.T) + bias
    probs = _softmax_rows(logits)
    picked = np.clip(probs[np.arange(m), y], 1e-300, None)
    loss = float(-np.log(picked).mean() + 0.5 * l2_lambda * (weights * weights).sum())
    grad_logits = probs
    grad_logits[np.arange(m), y] -= 1.0
    grad_logits /= m
    grad_w = np.asarray((x.T @ grad_logits)).T + l2_lambda * weights
    grad_b = grad_logits.sum(axis=0)
    return loss, grad_w, grad_b


def train_logreg(
    x: sparse.csr_matrix,
    y: np.ndarray,
    cfg: TrainConfig,
    val: tuple[sparse.csr_matrix, np.ndarray] | None = None,
    *,
    class_labels: Sequence[CweId],
) -> LinearModel:
    """Mini-batch gradient descent at a fixed learning rate from zero init.

    The per-epoch shuffle comes from a PCG64 stream seeded by cfg.seed,
    so training is bit-reproducible.  With a validation pair supplied,
    the parameters from the epoch with the best validation top-1 are
    kept and training stops once early_stop_patience consecutive epochs
    fail to improve it.
    """
    n = x.shape[0]
    if n == 0 or len(y) != n:
        raise ValidationError(f"bad training shapes: x has {n} rows, y has {len(y)}")
    labels = tuple(class_labels)
    n_classes = len(labels)
    if n_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {n_classes}")
    if y.max() >= n_classes or y.min() < 0:
        raise ValidationError("class index out of range")

    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    history: list[dict] = []
    best_w, best_b = w.copy(), b.copy()
    best_acc = -1.0
    best_epoch = 0
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grad_w, grad_b = loss_and_grad(w, b, x[batch], y[batch], cfg.l2_lambda)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}; "
                    "learning rate is likely too high"
                )
            w -= cfg.learning_rate * grad_w
            b -= cfg.learning_rate * grad_b
            total_loss += loss * len(batch)
        entry = {"epoch": epoch, "train_loss": round(total_loss / n, 6)}

        if val is not None:
            x_val, y_val = val
            val_logits = np.asarray(x_val @ w.T) + b
            val_acc = float((val_logits.argmax(axis=1) == y_val).mean())
            entry["val_accuracy"] = round(val_acc, 6)
            history.append(entry)
            if val_acc > best_acc:
                best_acc, best_epoch = val_acc, epoch
                best_w, best_b = w.copy(), b.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    break
        else:
            history.append(entry)
            best_w, best_b, best_epoch = w, b, epoch

    if val is not None:
        history.append({"best_epoch": best_epoch, "best_val_accuracy": round(best_acc, 6)})
    return LinearModel(weights=best_w, bias=best_b, class_labels=labels, history=history)


def predict_ranked(m: LinearModel, x: sparse.csr_matrix, k: int) -> list[tuple[CweId, float]]:
    """Top-k classes for one vector by softmax probability, descending;
    equal probabilities keep class_labels order."""
    if not 1 <= k <= len(m.class_labels):
        raise ValueError(f"k must be in 1..{len(m.class_labels)}, got {k}")
    logits = (np.asarray(x @ m.weights.T) + m.bias).ravel()
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    order = np.argsort(-probs, kind="stable")[:k]
    return [(m.class_labels[i], float(probs[i])) for i in order]


_MAGIC = b"CWEMAP-BASELINE-1\n"


@dataclass
class BaselineModel:
    """Vectorizer plus classifier, with a deterministic binary container."""

    vectorizer: VectorizerModel
    linear: LinearModel
    train_config: TrainConfig

    @property
    def classes(self) -> tuple[CweId, ...]:
        return self.linear.class_labels

    def predict_proba(self, docs: Sequence[str]) -> np.ndarray:
        x = transform_docs(self.vectorizer, docs)
        return _softmax_rows(np.asarray(x @ self.linear.weights.T) + self.linear.bias)

    def predict_ranked(
        self, docs: Sequence[str], k: int = 10
    ) -> list[list[tuple[CweId, float]]]:
        if not 1 <= k <= len(self.classes):
            raise ValueError(f"k must be in 1..{len(self.classes)}, got {k}")
        probs = self.predict_proba(docs)
        out: list[list[tuple[CweId, float]]] = []
        for row in probs:
            order = np.argsort(-row, kind="stable")[:k]
            out.append([(self.classes[i], float(row[i])) for i in order])
        return out

    def save(self, path: str | Path) -> None:
        arrays = [
            ("idf", self.vectorizer.idf.astype("<f8")),
            ("weights", self.linear.weights.astype("<f8")),
            ("bias", self.linear.bias.astype("<f8")),
        ]
        header = {
            "format": "cwemap-baseline",
            "format_version": 1,
            "classes": [c.value for c in self.classes],
            "vectorizer": {
                "config": self.vectorizer.config.to_dict(),
                "n_docs": self.vectorizer.n_docs,
                "terms": list(self.vectorizer.terms),
            },
            "train_config": self.train_config.to_dict(),
            "history": self.linear.history,
            "arrays": [
                {"name": name, "dtype": "<f8", "shape": list(arr.shape)}
                for name, arr in arrays
            ],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for _, arr in arrays:
                fh.write(np.ascontiguousarray(arr).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "BaselineModel":
        raw = Path(path).read_bytes()
        if not raw.startswith(_MAGIC):
            raise ParseError("not a baseline model file", source=str(path))
        pos = len(_MAGIC)
        header_len = int.from_bytes(raw[pos : pos + 8], "little")
        pos += 8
        try:
            header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"corrupt model header: {exc}", source=str(path)) from None
        pos += header_len
        if header.get("format") != "cwemap-baseline" or header.get("format_version") != 1:
            raise ParseError("unsupported model format", source=str(path))
        loaded: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            nbytes = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
            if pos + nbytes > len(raw):
                raise ParseError("model file truncated", source=str(path))
            arr = np.frombuffer(raw[pos : pos + nbytes], dtype=dtype).reshape(shape)
            loaded[entry["name"]] = arr.copy()
            pos += nbytes
        if pos != len(raw):
            raise ParseError("trailing bytes after model arrays", source=str(path))
        vec = VectorizerModel(
            config=VectorizerConfig(**header["vectorizer"]["config"]),
            terms=tuple(header["vectorizer"]["terms"]),
            idf=loaded["idf"],
            n_docs=int(header["vectorizer"]["n_docs"]),
        )
        linear = LinearModel(
            weights=loaded["weights"],
            bias=loaded["bias"],
            class_labels=tuple(CweId.parse(c) for c in header["classes"]),
            history=list(header["history"]),
        )
        return cls(vectorizer=vec, linear=linear, train_config=TrainConfig(**header["train_config"]))


def train_baseline(
    train_examples: Sequence[SplitExample],
    val_examples: Sequence[SplitExample],
    vectorizer_config: VectorizerConfig | None = None,
    train_config: TrainConfig | None = None,
) -> BaselineModel:
    """Fit the vectorizer on the training texts and train the classifier.

    Classes are the training labels sorted numerically.  Validation
    examples whose label is absent from training can never score a
    top-1 hit; they stay in the early-stopping denominator.
    """
    if not train_examples:
        raise ValidationError("training set is empty")
    if not val_examples:
        raise ValidationError("validation set is empty")
    tcfg = train_config or TrainConfig()
    vec = fit_vectorizer([ex.description for ex in train_examples], vectorizer_config)
    x_train = transform_docs(vec, [ex.description for ex in train_examples])
    x_val = transform_docs(vec, [ex.description for ex in val_examples])
    classes = tuple(sorted({ex.label for ex in train_examples}))
    index = {c: i for i, c in enumerate(classes)}
    y_train = np.array([index[ex.label] for ex in train_examples], dtype=np.int64)
    y_val = np.array([index.get(ex.label, -1) for ex in val_examples], dtype=np.int64)
    linear = train_logreg(
        x_train, y_train, tcfg, val=(x_val, y_val), class_labels=classes
    )
    return BaselineModel(vectorizer=vec, linear=linear, train_config=tcfg)
