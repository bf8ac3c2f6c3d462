"""Condition-number diagnostics and corrections for embedded-token attention.

The library builds fixed correction matrices that provably reduce the
condition number of an embedded-token matrix, computes condition-number
bounds for linear and softmax self-attention, and trains a small
transformer end to end while logging how the conditioning evolves.
"""

from .matrix import (
    ConditionReport,
    ConvergenceError,
    NonFiniteError,
    RankDeficientError,
    ShapeError,
    SvdResult,
    condition_number,
    frobenius_distance,
    matmul,
    read_matrix_csv,
    softmax_rows,
    svd,
    transpose,
    write_matrix_csv,
)
from .conditioning import (
    EXACT_SVD,
    IDENTITY_SCALED,
    AttentionConditionBounds,
    BoundCheck,
    CorrectionMatrix,
    CorrectionSpec,
    MonotonicityCheck,
    OverheadReport,
    WeylDiagnostic,
    apply_correction,
    check_attention_bounds,
    check_correction_monotonicity,
    exact_correction,
    identity_correction,
    lambda_sweep,
    linear_attention_bound,
    overhead_report,
    softmax_attention_bound,
    weyl_diagnostic,
    write_sweep_csv,
)
from .attention import (
    LINEAR,
    SOFTMAX,
    AttentionHead,
    EmbeddingLayer,
    FeedForward,
    ModelConfig,
    ProbeRecord,
    TransformerLayer,
    TransformerModel,
    build_correction_for,
    condition_probe,
    embed,
    init_model,
    layer_forward,
    linear_attention,
    load_config,
    multi_head,
    save_config,
    sinusoidal_positional_encoding,
    softmax_attention,
)
from .training import (
    ADAMW,
    SEQUENCE_COPY,
    SGD,
    TEACHER_REGRESSION,
    ComparisonSummary,
    EpochLog,
    GradientCheckReport,
    SyntheticTask,
    TrainConfig,
    TrainResult,
    backward,
    compare_runs,
    default_comparison_configs,
    gradient_check,
    make_dataset,
    probe_sample,
    train,
    write_epoch_logs_csv,
)
from .rng import Xoshiro256StarStar, derive_stream_seed, splitmix64

__version__ = "0.1.0"
