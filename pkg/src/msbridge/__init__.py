"""Multimarginal Schrödinger bridge solver for time-evolving usage profiles."""

from .core import (
    BARYCENTRIC,
    PATH,
    SERIES_PARALLEL,
    GraphStructure,
    KernelSet,
    KernelUnderflowError,
    Marginal,
    ScalingFamily,
    build_empirical_marginal,
    build_kernel_set,
    canonical_variant,
    gibbs_kernel,
    hilbert_metric,
    squared_euclidean_cost,
)
from .estimator import BridgeEstimator
from .ingest import (
    FormatError,
    ProfileDataset,
    ProfileRun,
    assemble_problem,
    barycenter_supports,
    load_profiles,
    snapshot_marginals,
)
from .metrics import (
    DEFAULT_SUPPORT_CAP,
    TransportPlan,
    kl_divergence,
    transport_plan,
    wasserstein2,
)
from .predict import (
    PredictedDistribution,
    bridge_matrix,
    interpolate,
    prediction_error,
    read_prediction_csv,
    write_prediction_csv,
)
from .projections import ProjectionWorkspace
from .sinkhorn import (
    BridgeSolution,
    SolverConfig,
    evaluate_objective,
    feasibility_residuals,
    solve,
    write_convergence_csv,
)
from .synth import CoreModel, Phase, SynthSpec, generate, load_spec, write_dataset

__version__ = "0.1.0"

__all__ = [
    "BARYCENTRIC",
    "BridgeEstimator",
    "BridgeSolution",
    "CoreModel",
    "DEFAULT_SUPPORT_CAP",
    "FormatError",
    "GraphStructure",
    "KernelSet",
    "KernelUnderflowError",
    "Marginal",
    "PATH",
    "Phase",
    "PredictedDistribution",
    "ProfileDataset",
    "ProfileRun",
    "ProjectionWorkspace",
    "SERIES_PARALLEL",
    "ScalingFamily",
    "SolverConfig",
    "SynthSpec",
    "TransportPlan",
    "assemble_problem",
    "barycenter_supports",
    "bridge_matrix",
    "build_empirical_marginal",
    "build_kernel_set",
    "canonical_variant",
    "evaluate_objective",
    "feasibility_residuals",
    "generate",
    "gibbs_kernel",
    "hilbert_metric",
    "interpolate",
    "kl_divergence",
    "load_profiles",
    "load_spec",
    "prediction_error",
    "read_prediction_csv",
    "snapshot_marginals",
    "solve",
    "squared_euclidean_cost",
    "transport_plan",
    "wasserstein2",
    "write_convergence_csv",
    "write_dataset",
    "write_prediction_csv",
    "__version__",
]
