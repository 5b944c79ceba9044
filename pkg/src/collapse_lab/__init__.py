"""collapse-lab: a numerical laboratory for attention collapse.

Global-attention layer dynamics on spherical tokens, token merging as a
mobility regularizer, a mean-field particle flow, spectral collapse metrics,
closed-form scaling laws with least-squares calibration, and wall-clock
benchmarks of the quadratic attention cost.
"""

from .attention import (
    DynamicsConfig,
    LayerTrace,
    attention_exact,
    attention_linearized,
    run_dynamics,
    step_layer,
)
from .bench import RuntimeSample, measure_attention_cost, measure_merged_pipeline
from .errors import (
    CollapseLabError,
    DegenerateInputError,
    FitFailureError,
    NumericalFailureError,
    RejectedInputError,
)
from .experiments import ExperimentConfig, ReportBundle, run_experiment
from .linalg import Spectrum, matmul, row_normalize_sphere, row_softmax, singular_spectrum
from .meanfield import (
    ParticleSystem,
    PdeTrace,
    compare_discrete_continuum,
    drift_field,
    init_particles,
    run_pde,
    step_euler_projected,
)
from .merging import (
    MergeConfig,
    MergeMap,
    apply_merge,
    apply_unmerge,
    build_merge_map,
    effective_downsampling,
    select_salient,
)
from .metrics import (
    AttnMatrix,
    CollapseTime,
    collapse_time,
    effective_rank,
    particle_entropy_knn,
    sv_entropy_normalized,
)
from .theory import (
    FitReport,
    TheoryModel,
    complexity_model,
    entropy_law,
    fit_constants,
    fit_entropy_vs_downsampling,
    rank_bound,
    tau_prediction,
)
from .tokens import TokenMatrix, init_tokens, make_token_matrix, mean_direction_norm

__version__ = "0.1.0"

__all__ = [
    "AttnMatrix",
    "CollapseLabError",
    "CollapseTime",
    "DegenerateInputError",
    "DynamicsConfig",
    "ExperimentConfig",
    "FitFailureError",
    "FitReport",
    "LayerTrace",
    "MergeConfig",
    "MergeMap",
    "NumericalFailureError",
    "ParticleSystem",
    "PdeTrace",
    "RejectedInputError",
    "ReportBundle",
    "RuntimeSample",
    "Spectrum",
    "TheoryModel",
    "TokenMatrix",
    "apply_merge",
    "apply_unmerge",
    "attention_exact",
    "attention_linearized",
    "build_merge_map",
    "collapse_time",
    "compare_discrete_continuum",
    "complexity_model",
    "drift_field",
    "effective_downsampling",
    "effective_rank",
    "entropy_law",
    "fit_constants",
    "fit_entropy_vs_downsampling",
    "init_particles",
    "init_tokens",
    "make_token_matrix",
    "matmul",
    "mean_direction_norm",
    "measure_attention_cost",
    "measure_merged_pipeline",
    "particle_entropy_knn",
    "rank_bound",
    "row_normalize_sphere",
    "row_softmax",
    "run_dynamics",
    "run_experiment",
    "run_pde",
    "select_salient",
    "singular_spectrum",
    "step_euler_projected",
    "step_layer",
    "sv_entropy_normalized",
    "tau_prediction",
]
