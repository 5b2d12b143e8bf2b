"""Two-phase training: freeze the bottom of the encoder, then release it.

Phase 1 holds the embeddings and the first N encoder blocks bit-identical
while the rest adapts; phase 2 trains everything at a lower rate.  Both
phases pick the epoch with the best validation top-1 and store the model
with its manifest next to the weights, so a checkpoint directory is
self-describing.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .config import RunManifest, PhaseConfig, save_manifest, load_manifest
from .data import CWE_ID_RE, Example, read_examples
from .errors import ConfigurationError, DataError, RunnerError

LABELS_FILE = "labels.json"
MANIFEST_FILE = "manifest.json"

_quieted = False


def _quiet_transformers() -> None:
    # Progress bars and info logs would interleave with CLI JSON output.
    global _quieted
    if _quieted:
        return
    from transformers.utils import logging as hf_logging

    hf_logging.set_verbosity_error()
    hf_logging.disable_progress_bar()
    _quieted = True


@dataclass
class Checkpoint:
    """A loaded model directory: weights, tokenizer, ordered label list."""

    model: torch.nn.Module
    tokenizer: object
    labels: tuple[str, ...]
    path: Path
    manifest: RunManifest | None


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Load a checkpoint directory (weights + tokenizer + labels.json).

    The label list is index-aligned with the classifier head; a
    manifest.json is attached when present (training phases write one).
    """
    _quiet_transformers()
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    path = Path(path)
    if not path.is_dir():
        raise ConfigurationError(f"checkpoint directory not found: {path}")
    labels_path = path / LABELS_FILE
    if not labels_path.is_file():
        raise ConfigurationError(f"{path}: missing {LABELS_FILE}")
    try:
        raw = json.loads(labels_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{labels_path}: invalid JSON: {exc.msg}") from exc
    if (
        not isinstance(raw, list)
        or not raw
        or any(not isinstance(lab, str) or not CWE_ID_RE.fullmatch(lab) for lab in raw)
    ):
        raise ConfigurationError(f"{labels_path}: expected a non-empty list of canonical CWE ids")
    if len(set(raw)) != len(raw):
        raise ConfigurationError(f"{labels_path}: duplicate labels")
    labels = tuple(raw)

    model = AutoModelForSequenceClassification.from_pretrained(str(path))
    tokenizer = AutoTokenizer.from_pretrained(str(path))
    if int(model.config.num_labels) != len(labels):
        raise ConfigurationError(
            f"{path}: head has {model.config.num_labels} outputs but {LABELS_FILE} lists {len(labels)}"
        )
    model.eval()
    manifest_path = path / MANIFEST_FILE
    manifest = load_manifest(manifest_path) if manifest_path.is_file() else None
    return Checkpoint(model=model, tokenizer=tokenizer, labels=labels, path=path, manifest=manifest)


def save_checkpoint(
    checkpoint: Checkpoint, out_dir: str | Path, manifest: RunManifest
) -> Path:
    """Write weights, tokenizer, labels, and the manifest into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint.model.save_pretrained(str(out_dir))
    checkpoint.tokenizer.save_pretrained(str(out_dir))
    (out_dir / LABELS_FILE).write_text(json.dumps(list(checkpoint.labels), indent=2) + "\n", encoding="utf-8")
    save_manifest(manifest, out_dir / MANIFEST_FILE)
    return out_dir


def parameter_digests(model: torch.nn.Module) -> dict[str, str]:
    """sha256 per named parameter, over shape, dtype, and raw bytes."""
    digests: dict[str, str] = {}
    for name, param in model.named_parameters():
        tensor = param.detach().cpu().contiguous()
        h = hashlib.sha256()
        h.update(str(tuple(tensor.shape)).encode("ascii"))
        h.update(str(tensor.dtype).encode("ascii"))
        h.update(tensor.numpy().tobytes())
        digests[name] = h.hexdigest()
    return digests


def _encoder_layers(model: torch.nn.Module) -> list[torch.nn.Module]:
    base = getattr(model, "base_model", None)
    encoder = getattr(base, "encoder", None)
    layers = getattr(encoder, "layer", None)
    if layers is None or not hasattr(base, "embeddings"):
        raise ConfigurationError("model is not a layered encoder classifier (no embeddings/encoder.layer)")
    return list(layers)


def frozen_parameter_names(model: torch.nn.Module, frozen_layers: int) -> tuple[str, ...]:
    """Names covered by a freeze of the embeddings plus the first N blocks.

    frozen_layers == 0 freezes nothing, embeddings included: that is the
    fully trainable configuration.
    """
    if frozen_layers == 0:
        return ()
    prefix = model.base_model_prefix
    covered = [f"{prefix}.embeddings."]
    covered.extend(f"{prefix}.encoder.layer.{i}." for i in range(frozen_layers))
    return tuple(
        name for name, _ in model.named_parameters() if any(name.startswith(p) for p in covered)
    )


def apply_freeze(model: torch.nn.Module, frozen_layers: int) -> tuple[str, ...]:
    """Set requires_grad so exactly the frozen slice is excluded from training."""
    n_layers = len(_encoder_layers(model))
    if frozen_layers > n_layers:
        raise ConfigurationError(f"cannot freeze {frozen_layers} layers; the encoder has {n_layers}")
    frozen = set(frozen_parameter_names(model, frozen_layers))
    for name, param in model.named_parameters():
        param.requires_grad = name not in frozen
    return tuple(sorted(frozen))


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    """Leading ramp length: floor of the fraction of the full step budget."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    return math.floor(warmup_fraction * total_steps)


def cosine_lr(step: int, total_steps: int, warmup: int, base_lr: float) -> float:
    """Learning rate at a 0-based step: linear ramp, then half-cosine decay.

    The ramp reaches base_lr on the last warmup step; the cosine spans the
    remaining steps and never quite reaches zero inside the budget.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside 0..{total_steps - 1}")
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total_steps - warmup, 1)
    progress = (step - warmup) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TrainResult:
    """What a phase produced: the checkpoint directory plus its history."""

    out_dir: Path
    frozen: tuple[str, ...]
    step_losses: tuple[float, ...]
    val_accuracy: tuple[float, ...]
    best_epoch: int
    best_val_accuracy: float
    total_steps: int
    warmup: int


def _encode(tokenizer, texts: Sequence[str], max_tokens: int):
    return tokenizer(
        list(texts),
        truncation=True,
        max_length=max_tokens,
        padding="longest",
        return_tensors="pt",
    )


def _label_indices(examples: Sequence[Example], labels: tuple[str, ...], which: str) -> list[int]:
    index = {label: i for i, label in enumerate(labels)}
    out = []
    for ex in examples:
        if ex.label not in index:
            raise DataError(f"{which} label {ex.label} for {ex.cve_id} is not in the checkpoint label set")
        out.append(index[ex.label])
    return out


def _top1_accuracy(model, tokenizer, texts: list[str], ys: list[int], manifest: RunManifest) -> float:
    model.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, len(texts), manifest.batch_size):
            batch = texts[start : start + manifest.batch_size]
            logits = model(**_encode(tokenizer, batch, manifest.max_tokens)).logits
            pred = logits.argmax(dim=-1)
            target = torch.tensor(ys[start : start + manifest.batch_size])
            hits += int((pred == target).sum())
    return hits / len(texts)


def _check_depth(model: torch.nn.Module, manifest: RunManifest) -> None:
    depth = int(model.config.num_hidden_layers)
    if depth != manifest.expected_layers:
        raise ConfigurationError(
            f"checkpoint has {depth} encoder layers, manifest expects {manifest.expected_layers}"
        )


def _train(
    manifest: RunManifest,
    phase: PhaseConfig,
    checkpoint: Checkpoint,
    train: list[Example],
    val: list[Example],
) -> tuple[list[float], list[float], int, float, int, int]:
    model, tokenizer = checkpoint.model, checkpoint.tokenizer
    train_y = _label_indices(train, checkpoint.labels, "train")
    val_y = _label_indices(val, checkpoint.labels, "val")
    train_x = [manifest.input_template.format(text=ex.text) for ex in train]
    val_x = [manifest.input_template.format(text=ex.text) for ex in val]

    torch.manual_seed(manifest.seed)
    trainable = [p for p in model.parameters() if p.requires_grad]
    if not trainable:
        raise ConfigurationError("no trainable parameters after freezing")
    optimizer = torch.optim.AdamW(trainable, lr=phase.learning_rate, weight_decay=manifest.weight_decay)
    loss_fn = torch.nn.CrossEntropyLoss(label_smoothing=manifest.label_smoothing)

    steps_per_epoch = math.ceil(len(train) / manifest.batch_size)
    total_steps = steps_per_epoch * phase.epochs
    warmup = warmup_steps(total_steps, phase.warmup_fraction)

    step_losses: list[float] = []
    val_accuracy: list[float] = []
    order = list(range(len(train)))
    shuffler = random.Random(manifest.seed)
    best_state: dict | None = None
    best_epoch = -1
    best_acc = -1.0
    stale = 0
    step = 0

    for epoch in range(phase.epochs):
        shuffler.shuffle(order)
        model.train()
        for start in range(0, len(order), manifest.batch_size):
            picks = order[start : start + manifest.batch_size]
            enc = _encode(tokenizer, [train_x[i] for i in picks], manifest.max_tokens)
            target = torch.tensor([train_y[i] for i in picks])
            lr = cosine_lr(step, total_steps, warmup, phase.learning_rate)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = loss_fn(model(**enc).logits, target)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, manifest.grad_clip)
            optimizer.step()
            step_losses.append(float(loss.item()))
            step += 1
        acc = _top1_accuracy(model, tokenizer, val_x, val_y, manifest)
        val_accuracy.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            stale = 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if phase.early_stop_patience is not None and stale >= phase.early_stop_patience:
                break

    # Checkpoint selection: roll back to the best validation top-1 epoch.
    assert best_state is not None
    model.load_state_dict(best_state)
    return step_losses, val_accuracy, best_epoch, best_acc, total_steps, warmup


def _run_phase(
    manifest: RunManifest,
    phase: PhaseConfig,
    source: str | Path,
    train_path: str | Path,
    val_path: str | Path,
    out_dir: str | Path,
    phase_name: str,
) -> TrainResult:
    checkpoint = load_checkpoint(source)
    _check_depth(checkpoint.model, manifest)
    train = read_examples(train_path)
    val = read_examples(val_path)
    frozen = apply_freeze(checkpoint.model, phase.frozen_layers)
    before = parameter_digests(checkpoint.model)

    step_losses, val_accuracy, best_epoch, best_acc, total_steps, warmup = _train(
        manifest, phase, checkpoint, train, val
    )

    after = parameter_digests(checkpoint.model)
    changed = [name for name in frozen if before[name] != after[name]]
    if changed:
        raise RunnerError(f"{phase_name} mutated frozen parameters, first: {changed[0]}")

    out = save_checkpoint(checkpoint, out_dir, manifest)
    return TrainResult(
        out_dir=out,
        frozen=frozen,
        step_losses=tuple(step_losses),
        val_accuracy=tuple(val_accuracy),
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
        total_steps=total_steps,
        warmup=warmup,
    )


def run_phase1(
    manifest: RunManifest,
    train_path: str | Path,
    val_path: str | Path,
    out_dir: str | Path,
) -> TrainResult:
    """Fine-tune the base checkpoint with the bottom of the encoder frozen."""
    return _run_phase(
        manifest, manifest.phase1, manifest.base_checkpoint, train_path, val_path, out_dir, "phase 1"
    )


def run_phase2(
    manifest: RunManifest,
    checkpoint_dir: str | Path,
    train_path: str | Path,
    val_path: str | Path,
    out_dir: str | Path,
) -> TrainResult:
    """Continue from a phase-1 checkpoint with the whole network trainable
    (unless the phase-2 config freezes layers again)."""
    return _run_phase(
        manifest, manifest.phase2, checkpoint_dir, train_path, val_path, out_dir, "phase 2"
    )
