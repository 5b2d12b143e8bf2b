"""Two-phase fine-tuning runner for CWE sequence classifiers.

Phase 1 trains with the embeddings and the first N encoder blocks
frozen; phase 2 releases everything at a lower learning rate.  The
package exchanges data with the dataset toolkit purely through files:
labeled split JSONL in, ranked predictions JSONL out.
"""

from .config import (
    DEFAULT_PHASE1,
    DEFAULT_PHASE2,
    DEFAULT_TEMPLATE,
    MAX_FROZEN_LAYERS,
    PRECISIONS,
    SCHEDULES,
    PhaseConfig,
    RunManifest,
    load_manifest,
    manifest_digest,
    save_manifest,
)
from .data import Example, cve_sort_key, cwe_number, read_examples
from .errors import ConfigurationError, DataError, RunnerError
from .predictions import EmitResult, emit_predictions
from .runner import (
    Checkpoint,
    TrainResult,
    apply_freeze,
    cosine_lr,
    frozen_parameter_names,
    load_checkpoint,
    parameter_digests,
    run_phase1,
    run_phase2,
    save_checkpoint,
    warmup_steps,
)
from .tiny import make_tiny_checkpoint

__version__ = "1.0.0"

__all__ = [
    "Checkpoint",
    "ConfigurationError",
    "DataError",
    "DEFAULT_PHASE1",
    "DEFAULT_PHASE2",
    "DEFAULT_TEMPLATE",
    "EmitResult",
    "Example",
    "MAX_FROZEN_LAYERS",
    "PRECISIONS",
    "PhaseConfig",
    "RunManifest",
    "RunnerError",
    "SCHEDULES",
    "TrainResult",
    "apply_freeze",
    "cosine_lr",
    "cve_sort_key",
    "cwe_number",
    "emit_predictions",
    "frozen_parameter_names",
    "load_checkpoint",
    "load_manifest",
    "make_tiny_checkpoint",
    "manifest_digest",
    "parameter_digests",
    "read_examples",
    "run_phase1",
    "run_phase2",
    "save_checkpoint",
    "save_manifest",
    "warmup_steps",
    "__version__",
]
