"""Uncertainty-guided progressive pseudo-label refinement on synthetic domains.

The library generates a shifted, noisy target domain with hidden identities,
clusters it into pseudo labels, scores each label's reliability with a
KL-based uncertainty, and alternates closed-form sample selection with
gradient refinement of a linear embedding model tracked by a mean teacher.
"""

from .clusterer import ClusterModel, assign, cluster_purity, kmeans, wrong_label_mask
from .embedder import (
    EmbeddingModel,
    TeacherState,
    classifier_grad,
    ema_update,
    embed,
    identity_model,
    load_checkpoint,
    refine_model,
    refine_model_and_classifier,
    save_checkpoint,
    selection_loss,
    selection_loss_grad,
    teacher_model,
)
from .errors import (
    ConfigurationError,
    EmptySelectionWarning,
    FileFormatError,
    InputError,
    P2LRError,
    SingularNormalizationError,
)
from .evalkit import DetectionOutcome, RetrievalResult, auroc, detection_metrics, retrieval_eval
from .refinery import (
    ABLATION_SCHEMA,
    CRITERIA,
    REPORT_SCHEMA,
    AblationTable,
    RefineryConfig,
    RefineryReport,
    StepRecord,
    config_from_dict,
    report_from_dict,
    run_ablation,
    run_refinery,
)
from .selector import (
    SelectionState,
    brute_force_selection,
    exp_reweight,
    schedule_fraction,
    select_lowest,
    selection_objective,
    selection_threshold,
)
from .synthgen import (
    IdentityPrototypes,
    TargetDomain,
    corrupt_labels,
    generate_prototypes,
    sample_target,
)
from .uncertainty import (
    UncertaintyRecord,
    centroid_classifier_probs,
    classifier_probs,
    consistency_records,
    consistency_scores,
    ideal_distribution,
    kl_divergence,
    kl_ideal_records,
    kl_ideal_scores,
    l2_records,
    l2_scores,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_SCHEMA",
    "CRITERIA",
    "REPORT_SCHEMA",
    "AblationTable",
    "ClusterModel",
    "ConfigurationError",
    "DetectionOutcome",
    "EmbeddingModel",
    "EmptySelectionWarning",
    "FileFormatError",
    "IdentityPrototypes",
    "InputError",
    "P2LRError",
    "RefineryConfig",
    "RefineryReport",
    "RetrievalResult",
    "SelectionState",
    "SingularNormalizationError",
    "StepRecord",
    "TargetDomain",
    "TeacherState",
    "UncertaintyRecord",
    "assign",
    "auroc",
    "brute_force_selection",
    "centroid_classifier_probs",
    "classifier_grad",
    "classifier_probs",
    "cluster_purity",
    "config_from_dict",
    "consistency_records",
    "consistency_scores",
    "corrupt_labels",
    "detection_metrics",
    "ema_update",
    "embed",
    "exp_reweight",
    "generate_prototypes",
    "ideal_distribution",
    "identity_model",
    "kl_divergence",
    "kl_ideal_records",
    "kl_ideal_scores",
    "kmeans",
    "l2_records",
    "l2_scores",
    "load_checkpoint",
    "refine_model",
    "refine_model_and_classifier",
    "report_from_dict",
    "retrieval_eval",
    "run_ablation",
    "run_refinery",
    "sample_target",
    "save_checkpoint",
    "schedule_fraction",
    "select_lowest",
    "selection_loss",
    "selection_loss_grad",
    "selection_objective",
    "selection_threshold",
    "teacher_model",
    "wrong_label_mask",
    "__version__",
]
