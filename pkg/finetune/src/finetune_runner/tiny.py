"""Offline test double: a randomly initialized two-layer encoder.

Real runs start from a pretrained 12-layer checkpoint; CI cannot
download one, so tests build this instead.  The word-level vocab keeps
the tokenizer deterministic and dependency-free.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .data import CWE_ID_RE
from .errors import ConfigurationError
from .runner import LABELS_FILE, _quiet_transformers

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


def make_tiny_checkpoint(
    out_dir: str | Path,
    labels: Sequence[str],
    vocab_words: Iterable[str],
    *,
    hidden_size: int = 32,
    num_layers: int = 2,
    num_attention_heads: int = 2,
    intermediate_size: int = 64,
    max_position_embeddings: int = 384,
    seed: int = 0,
) -> Path:
    """Write a loadable checkpoint directory with random weights.

    No manifest is included: a base checkpoint is an input to training,
    and the phases attach the manifest they were run with.
    """
    _quiet_transformers()
    from transformers import BertConfig, BertForSequenceClassification, BertTokenizer

    labels = list(labels)
    if not labels or len(set(labels)) != len(labels):
        raise ConfigurationError("labels must be a non-empty list of unique CWE ids")
    for label in labels:
        if not isinstance(label, str) or not CWE_ID_RE.fullmatch(label):
            raise ConfigurationError(f"invalid label {label!r}")
    words = sorted({w.lower() for w in vocab_words if w.strip()})
    if not words:
        raise ConfigurationError("vocab_words must contain at least one word")
    if hidden_size % num_attention_heads != 0:
        raise ConfigurationError("hidden_size must be divisible by num_attention_heads")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = list(SPECIAL_TOKENS) + words
    (out_dir / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")

    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden_size,
        num_hidden_layers=num_layers,
        num_attention_heads=num_attention_heads,
        intermediate_size=intermediate_size,
        max_position_embeddings=max_position_embeddings,
        num_labels=len(labels),
    )
    torch.manual_seed(seed)
    model = BertForSequenceClassification(config)
    model.save_pretrained(str(out_dir))
    tokenizer = BertTokenizer(str(out_dir / "vocab.txt"))
    tokenizer.save_pretrained(str(out_dir))
    (out_dir / LABELS_FILE).write_text(json.dumps(labels, indent=2) + "\n", encoding="utf-8")
    return out_dir
