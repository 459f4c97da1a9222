"""Temporal causal discovery from multivariate time series.

Train a masked Transformer forecaster, read causal structure out of its
finite-difference sensitivities, and refine the graph by excluding links,
which the model enforces as hard attention masks at every depth.
"""

from .data import (
    DataError,
    Dataset,
    Normalizer,
    VariableSpec,
    apply_normalizer,
    fit_normalizer,
    load_dataset,
    make_windows,
    resample_series,
    save_dataset,
    window_count,
)
from .extract import (
    CausalEdge,
    CausalGraph,
    CausalScores,
    GradientMatrix,
    build_graph,
    extract_from_model,
    finite_diff_gradients,
    load_graph,
    normalize_scores,
    prediction_skill,
    save_graph,
)
from .metrics import (
    EvalReport,
    evaluate_runs,
    f1_edges,
    format_table,
    lag_mae,
    load_report,
    pod_score,
    save_report,
)
from .model import (
    ConfigError,
    ModelConfig,
    PriorKnowledge,
    TrainedForecaster,
    build_masks,
    load_checkpoint,
    save_checkpoint,
    token_schedule,
    train,
)
from .pipeline import (
    RunRecord,
    StageError,
    apply_exclusions,
    list_runs,
    load_record,
    load_run_gradients,
    load_run_graph,
    run_pipeline,
    verify_run,
)
from .synthetic import (
    GroundTruth,
    Lorenz96Config,
    MotifConfig,
    gen_motif,
    load_generated,
    load_netsim,
    load_truth,
    save_generated,
    save_truth,
    simulate_lorenz96,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "Normalizer",
    "VariableSpec",
    "apply_normalizer",
    "fit_normalizer",
    "load_dataset",
    "make_windows",
    "resample_series",
    "save_dataset",
    "window_count",
    "CausalEdge",
    "CausalGraph",
    "CausalScores",
    "GradientMatrix",
    "build_graph",
    "extract_from_model",
    "finite_diff_gradients",
    "load_graph",
    "normalize_scores",
    "prediction_skill",
    "save_graph",
    "EvalReport",
    "evaluate_runs",
    "f1_edges",
    "format_table",
    "lag_mae",
    "load_report",
    "pod_score",
    "save_report",
    "ConfigError",
    "ModelConfig",
    "PriorKnowledge",
    "TrainedForecaster",
    "build_masks",
    "load_checkpoint",
    "save_checkpoint",
    "token_schedule",
    "train",
    "RunRecord",
    "StageError",
    "apply_exclusions",
    "list_runs",
    "load_record",
    "load_run_gradients",
    "load_run_graph",
    "run_pipeline",
    "verify_run",
    "GroundTruth",
    "Lorenz96Config",
    "MotifConfig",
    "gen_motif",
    "load_generated",
    "load_netsim",
    "load_truth",
    "save_generated",
    "save_truth",
    "simulate_lorenz96",
    "__version__",
]
