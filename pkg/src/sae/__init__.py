"""Saliency-map adversarial examples.

A small numpy library and CLI for crafting and evaluating L0
adversarial examples with saliency-map attacks (plain, probability-
weighted, and Taylor-weighted; targeted, non-targeted, and maximal),
plus the pieces the experiments need end to end: a feed-forward network
engine with exact reverse-mode Jacobians, a deterministic Adam trainer,
Jacobian-based dataset augmentation for black-box substitutes, a
fast-gradient-sign baseline, and an evaluation harness with dominance
statistics and JSON/CSV reports.
"""

from .architectures import ARCHITECTURES, build_architecture
from .attacks import AttackConfig, AttackResult, targeted_attack
from .engine import (
    Conv2D,
    Dense,
    Flatten,
    GlobalAveragePool,
    MaxPool2D,
    Model,
    ReLU,
    Softmax,
    build_model,
    class_logit_gradient,
    forward,
    forward_batch,
    forward_and_jacobian,
    forward_with_pullback,
    jacobian_logits,
    jacobian_probs,
    log_prob_gradient,
    predict,
    predict_batch,
)
from .errors import (
    BlobLengthError,
    ConfigurationError,
    DataFormatError,
    EvaluationError,
    FormatVersionError,
    ModelFormatError,
    OracleError,
    SaeError,
    TrainingError,
    UnknownLayerError,
    UnsupportedDtypeError,
)
from .evaluation import (
    BlackboxReport,
    EvaluationReport,
    emit_report,
    evaluate_blackbox,
    evaluate_nontargeted,
    evaluate_targeted,
)
from .metrics import l_norms
from .nontargeted import NtConfig, fgsm, maximal_attack, nt_attack
from .saliency import (
    SaliencyComponents,
    max_iter_from_gamma,
    nt_pair_score,
    pair_score,
    per_feature_components,
    select_best_feature,
    select_best_pair,
)
from .store import (
    Dataset,
    load_dataset,
    load_idx,
    load_model,
    load_raw_tensor,
    save_idx_images,
    save_idx_labels,
    save_model,
    save_raw_tensor,
)
from .synthetic import synthetic_digits, write_idx_pair
from .training import (
    Adam,
    EpochStats,
    JbdaConfig,
    TrainConfig,
    accuracy,
    augment_with_adversarial,
    balanced_seed,
    jbda_round,
    train,
    train_substitute,
)

__version__ = "0.1.0"
