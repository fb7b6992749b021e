"""Query-efficient input-free black-box attacks via tiled-region search gradients."""

from .attack import (
    AttackConfig,
    AttackResult,
    MetricsSummary,
    TrajectoryRecord,
    attack_full_info,
    attack_partial_info,
    compute_metrics,
    default_size_candidates,
)
from .cli_harness import ExperimentSpec, main, query_histogram, run_experiment
from .core import (
    ImageFormatError,
    Region,
    as_image,
    clip01,
    gray_image,
    l2_distortion,
    linf_distortion,
    load_image,
    ppm_bytes,
    prediction_entropy,
    save_image,
    save_ppm,
    tile_region,
)
from .distributions import (
    GAUSSIAN,
    LAPLACE,
    AntitheticBatch,
    SearchDistribution,
    derive_seed,
    sample_antithetic,
)
from .gradient import (
    GradientEstimate,
    estimate_gradient_gaussian,
    estimate_gradient_laplace,
    estimate_with_fitness,
)
from .optimizer import OptimizerState, ascent_step
from .oracle import (
    BudgetExceededError,
    LinearSoftmaxModel,
    MLPModel,
    ModelFormatError,
    ModelSpec,
    QueryLedger,
    RemoteEndpointConfig,
    RemoteTopKModel,
    ResponseParseError,
    TopKList,
    TransportError,
    classify,
    fit_linear_model,
    generate_local_model,
    load_model,
    query_full,
    query_topk,
    save_model,
    softmax,
)
from .size_select import SizeSelectionConfig, SizeSelectionReport, select_region_size

__version__ = "0.1.0"
