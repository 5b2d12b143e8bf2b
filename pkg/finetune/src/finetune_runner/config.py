"""Run manifests: the full hyperparameter surface of a two-phase run.

A manifest is immutable, validates on construction, and round-trips
through JSON.  Its sha256 digest identifies the configuration in
predictions metadata, so serialization must stay canonical.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigurationError

SCHEDULES = ("cosine",)
PRECISIONS = ("float32",)

# Freezing more than 12 blocks is outside the supported encoder family.
MAX_FROZEN_LAYERS = 12

DEFAULT_TEMPLATE = "CVE Description: {text}"


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)


def _is_real(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass(frozen=True)
class PhaseConfig:
    """Optimizer settings for one training phase.

    frozen_layers counts the encoder blocks (plus the embeddings) held
    bit-identical for the whole phase; 0 means everything trains.
    """

    frozen_layers: int
    learning_rate: float
    epochs: int
    schedule: str = "cosine"
    warmup_fraction: float = 0.0
    early_stop_patience: int | None = None

    def __post_init__(self) -> None:
        _require(
            _is_int(self.frozen_layers) and 0 <= self.frozen_layers <= MAX_FROZEN_LAYERS,
            f"frozen_layers must be an integer in 0..{MAX_FROZEN_LAYERS}, got {self.frozen_layers!r}",
        )
        _require(
            _is_real(self.learning_rate) and self.learning_rate > 0,
            f"learning_rate must be a positive finite number, got {self.learning_rate!r}",
        )
        _require(
            _is_int(self.epochs) and self.epochs >= 1,
            f"epochs must be a positive integer, got {self.epochs!r}",
        )
        _require(
            self.schedule in SCHEDULES,
            f"schedule must be one of {SCHEDULES}, got {self.schedule!r}",
        )
        _require(
            _is_real(self.warmup_fraction) and 0.0 <= self.warmup_fraction < 1.0,
            f"warmup_fraction must satisfy 0 <= f < 1, got {self.warmup_fraction!r}",
        )
        if self.early_stop_patience is not None:
            _require(
                _is_int(self.early_stop_patience) and self.early_stop_patience >= 1,
                f"early_stop_patience must be None or a positive integer, got {self.early_stop_patience!r}",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "frozen_layers": self.frozen_layers,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "schedule": self.schedule,
            "warmup_fraction": self.warmup_fraction,
            "early_stop_patience": self.early_stop_patience,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PhaseConfig":
        if not isinstance(data, Mapping):
            raise ConfigurationError(f"phase config must be an object, got {type(data).__name__}")
        expected = {f.name for f in fields(cls)}
        unknown = set(data) - expected
        _require(not unknown, f"unknown phase config keys: {sorted(unknown)}")
        missing = expected - set(data)
        _require(not missing, f"missing phase config keys: {sorted(missing)}")
        return cls(**dict(data))


DEFAULT_PHASE1 = PhaseConfig(
    frozen_layers=8,
    learning_rate=1e-4,
    epochs=4,
    schedule="cosine",
    warmup_fraction=0.0,
    early_stop_patience=None,
)

DEFAULT_PHASE2 = PhaseConfig(
    frozen_layers=0,
    learning_rate=2e-5,
    epochs=9,
    schedule="cosine",
    warmup_fraction=0.06,
    early_stop_patience=10,
)


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run, minus the data files.

    Defaults are the production settings; scaled-down runs override
    explicitly.  expected_layers guards against silently fine-tuning a
    checkpoint from a different encoder family: training refuses to
    start when the checkpoint's depth disagrees.
    """

    base_checkpoint: str
    input_template: str = DEFAULT_TEMPLATE
    max_tokens: int = 384
    batch_size: int = 32
    label_smoothing: float = 0.1
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    precision: str = "float32"
    expected_layers: int = 12
    seed: int = 20240601
    phase1: PhaseConfig = field(default_factory=lambda: DEFAULT_PHASE1)
    phase2: PhaseConfig = field(default_factory=lambda: DEFAULT_PHASE2)

    def __post_init__(self) -> None:
        _require(
            isinstance(self.base_checkpoint, str) and self.base_checkpoint.strip() != "",
            "base_checkpoint must be a non-empty path or identifier",
        )
        _require(
            isinstance(self.input_template, str) and "{text}" in self.input_template,
            "input_template must contain the {text} placeholder",
        )
        try:
            self.input_template.format(text="probe")
        except (KeyError, IndexError, ValueError) as exc:
            raise ConfigurationError(f"input_template is not formattable: {exc}") from exc
        _require(
            _is_int(self.max_tokens) and self.max_tokens >= 8,
            f"max_tokens must be an integer >= 8, got {self.max_tokens!r}",
        )
        _require(
            _is_int(self.batch_size) and self.batch_size >= 1,
            f"batch_size must be a positive integer, got {self.batch_size!r}",
        )
        _require(
            _is_real(self.label_smoothing) and 0.0 <= self.label_smoothing < 1.0,
            f"label_smoothing must satisfy 0 <= s < 1, got {self.label_smoothing!r}",
        )
        _require(
            _is_real(self.weight_decay) and self.weight_decay >= 0.0,
            f"weight_decay must be a finite number >= 0, got {self.weight_decay!r}",
        )
        _require(
            _is_real(self.grad_clip) and self.grad_clip > 0.0,
            f"grad_clip must be a positive finite number, got {self.grad_clip!r}",
        )
        _require(
            self.precision in PRECISIONS,
            f"precision must be one of {PRECISIONS}, got {self.precision!r}",
        )
        _require(
            _is_int(self.expected_layers) and self.expected_layers >= 1,
            f"expected_layers must be a positive integer, got {self.expected_layers!r}",
        )
        _require(_is_int(self.seed) and self.seed >= 0, f"seed must be a non-negative integer, got {self.seed!r}")
        for name, phase in (("phase1", self.phase1), ("phase2", self.phase2)):
            _require(isinstance(phase, PhaseConfig), f"{name} must be a PhaseConfig")
            _require(
                phase.frozen_layers <= self.expected_layers,
                f"{name} freezes {phase.frozen_layers} layers but the encoder has {self.expected_layers}",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "base_checkpoint": self.base_checkpoint,
            "input_template": self.input_template,
            "max_tokens": self.max_tokens,
            "batch_size": self.batch_size,
            "label_smoothing": self.label_smoothing,
            "weight_decay": self.weight_decay,
            "grad_clip": self.grad_clip,
            "precision": self.precision,
            "expected_layers": self.expected_layers,
            "seed": self.seed,
            "phase1": self.phase1.to_dict(),
            "phase2": self.phase2.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunManifest":
        if not isinstance(data, Mapping):
            raise ConfigurationError(f"manifest must be an object, got {type(data).__name__}")
        _require(data.get("schema_version") == 1, f"unsupported manifest schema_version {data.get('schema_version')!r}")
        expected = {f.name for f in fields(cls)} | {"schema_version"}
        unknown = set(data) - expected
        _require(not unknown, f"unknown manifest keys: {sorted(unknown)}")
        missing = expected - set(data)
        _require(not missing, f"missing manifest keys: {sorted(missing)}")
        body = {k: v for k, v in data.items() if k != "schema_version"}
        body["phase1"] = PhaseConfig.from_dict(body["phase1"])
        body["phase2"] = PhaseConfig.from_dict(body["phase2"])
        return cls(**body)


def manifest_digest(manifest: RunManifest) -> str:
    """sha256 over the canonical (sorted-key, compact) JSON form."""
    payload = json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_manifest(manifest: RunManifest, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid manifest JSON: {exc.msg}") from exc
    return RunManifest.from_dict(data)
