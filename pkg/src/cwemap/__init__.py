"""Tools for building CVE-to-CWE classification datasets and baselines.

The package covers the full loop: normalize vulnerability feeds, merge
AI-proposed labels with NVD labels, strip banned ids, derive reproducible
train/val/test splits keyed on the CVE id, train a sparse logistic
baseline, and score ranked predictions with exact confidence intervals
and hierarchy-aware accuracy.
"""

__version__ = "1.0.0"

from .baseline import (
    BaselineModel,
    LinearModel,
    TrainConfig,
    VectorizerConfig,
    VectorizerModel,
    fit_vectorizer,
    loss_and_grad,
    predict_ranked,
    tokenize,
    train_baseline,
    train_logreg,
    transform,
    transform_docs,
)
from .corpus import (
    CveRecord,
    DescriptionFilter,
    FeedParseResult,
    cve_sort_key,
    deduplicate,
    export_records,
    filter_insufficient,
    parse_feed,
)
from .errors import (
    CwemapError,
    ParseError,
    TaxonomyCycleError,
    TrainingDivergedError,
    ValidationError,
)
from .metrics import (
    ClassScore,
    EvalOptions,
    EvalReport,
    F1Result,
    clopper_pearson,
    evaluate,
    f1_band_breakdown,
    f1_scores,
    hierarchy_aware_accuracy,
    per_class_report,
    read_gold,
    read_predictions,
    render_report_table,
    strict_accuracy,
    topk_accuracy,
    write_gold,
    write_predictions,
    write_report,
)
from .pipeline import (
    Agreement,
    AiLabel,
    DecontaminationResult,
    MergedRecord,
    SplitAssignment,
    SplitConfig,
    SplitExample,
    agreement_stats,
    build_splits,
    decontaminate,
    load_ai_labels,
    load_banned_ids,
    load_split_file,
    merge_labels,
    sample_disagreements,
    unit_hash,
    WorksheetRow,
    write_splits,
    write_worksheet,
)
from .taxonomy import CweId, CweNode, CweTaxonomy, load_vocabulary, parse_taxonomy

__all__ = [
    "Agreement",
    "agreement_stats",
    "AiLabel",
    "BaselineModel",
    "build_splits",
    "ClassScore",
    "clopper_pearson",
    "cve_sort_key",
    "CveRecord",
    "CweId",
    "CwemapError",
    "CweNode",
    "CweTaxonomy",
    "decontaminate",
    "DecontaminationResult",
    "deduplicate",
    "DescriptionFilter",
    "EvalOptions",
    "EvalReport",
    "evaluate",
    "export_records",
    "f1_band_breakdown",
    "f1_scores",
    "F1Result",
    "FeedParseResult",
    "filter_insufficient",
    "fit_vectorizer",
    "hierarchy_aware_accuracy",
    "LinearModel",
    "load_ai_labels",
    "load_banned_ids",
    "load_split_file",
    "load_vocabulary",
    "loss_and_grad",
    "merge_labels",
    "MergedRecord",
    "parse_feed",
    "parse_taxonomy",
    "ParseError",
    "per_class_report",
    "predict_ranked",
    "read_gold",
    "read_predictions",
    "render_report_table",
    "sample_disagreements",
    "SplitAssignment",
    "SplitConfig",
    "SplitExample",
    "strict_accuracy",
    "TaxonomyCycleError",
    "tokenize",
    "topk_accuracy",
    "train_baseline",
    "train_logreg",
    "TrainConfig",
    "TrainingDivergedError",
    "transform",
    "transform_docs",
    "unit_hash",
    "ValidationError",
    "VectorizerConfig",
    "VectorizerModel",
    "WorksheetRow",
    "write_gold",
    "write_predictions",
    "write_report",
    "write_splits",
    "write_worksheet",
    "__version__",
]
