"""Multiclass error correction laboratory.

A staged neural base classifier with extractable intermediate latents, a
from-scratch gradient-boosted corrector trained on held-out data, policy
composition of the two, a retention/harm/gain metric calculus, and a
class-exclusion experiment harness that ties them together reproducibly.
"""

__version__ = "0.1.0"

from .basemodel import (
    LatentLayout,
    LatentRecord,
    ModelConfig,
    StagedModel,
    TrainConfig,
    TrainingHistory,
    extract_latents,
    load_model,
    predict_batch,
    save_model,
    stack_latents,
    train,
    weighted_ce_loss,
)
from .composer import (
    CorrectedPrediction,
    DecisionPolicy,
    PredictionLog,
    compose,
    compose_batch,
    read_prediction_log,
    write_prediction_log,
)
from .core import (
    NEW_CLASS,
    ClassLabel,
    LabeledDataset,
    Rng,
    SplitSpec,
    class_weights,
    datasets_equal,
    default_names,
    derived_seed,
    exclude_class,
    largest_remainder,
    make_label_space,
    split_dataset,
)
from .corrector import (
    CorrectorEnsemble,
    GbdtConfig,
    load_ensemble,
    save_ensemble,
    split_gain,
)
from .corrector import fit as fit_corrector
from .datagen import (
    ClusterSpec,
    DatasetFormatError,
    SequenceImageSpec,
    default_profile,
    generate_gaussian,
    generate_toy_images,
    load_dataset,
    save_dataset,
)
from .harness import (
    ConfigError,
    DatasetConfig,
    ExperimentConfig,
    ProfileConfig,
    RunResult,
    SplitConfig,
    StageError,
    SweepResult,
    default_config_dict,
    load_sweep,
    normalize_config,
    render_report,
    run_single,
    run_sweep,
)
from .metrics import (
    AggregateMetrics,
    ClassMetrics,
    EvalReport,
    PairedPredictions,
    accuracy,
    brute_force_oracle,
    evaluate,
    report_to_csv,
    report_to_text,
)

__all__ = [
    "AggregateMetrics",
    "ClassLabel",
    "ClassMetrics",
    "ClusterSpec",
    "ConfigError",
    "CorrectedPrediction",
    "CorrectorEnsemble",
    "DatasetConfig",
    "DatasetFormatError",
    "DecisionPolicy",
    "EvalReport",
    "ExperimentConfig",
    "GbdtConfig",
    "LabeledDataset",
    "LatentLayout",
    "LatentRecord",
    "ModelConfig",
    "NEW_CLASS",
    "PairedPredictions",
    "PredictionLog",
    "ProfileConfig",
    "Rng",
    "RunResult",
    "SequenceImageSpec",
    "SplitConfig",
    "SplitSpec",
    "StageError",
    "StagedModel",
    "SweepResult",
    "TrainConfig",
    "TrainingHistory",
    "accuracy",
    "brute_force_oracle",
    "class_weights",
    "compose",
    "compose_batch",
    "datasets_equal",
    "default_config_dict",
    "default_names",
    "default_profile",
    "derived_seed",
    "evaluate",
    "exclude_class",
    "extract_latents",
    "fit_corrector",
    "generate_gaussian",
    "generate_toy_images",
    "largest_remainder",
    "load_dataset",
    "load_ensemble",
    "load_model",
    "load_sweep",
    "make_label_space",
    "normalize_config",
    "predict_batch",
    "read_prediction_log",
    "render_report",
    "report_to_csv",
    "report_to_text",
    "run_single",
    "run_sweep",
    "save_dataset",
    "save_ensemble",
    "save_model",
    "split_dataset",
    "split_gain",
    "stack_latents",
    "train",
    "weighted_ce_loss",
    "write_prediction_log",
    "__version__",
]
