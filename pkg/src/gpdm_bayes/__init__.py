"""Bayesian inversion on point clouds with ghost-point diffusion maps."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    GhostSet,
    PointCloud,
    construct_ghost_points,
    generate_flat_interval,
    generate_semi_ellipse,
    generate_semi_torus,
    manufacture_rhs,
)
from .graph_ops import (  # noqa: E402
    GraphOperator,
    SpectralDecomposition,
    calibrate_epsilon,
    kernel_density,
    self_tuned_laplacian,
    spectral_decompose,
    truncated_laplacian,
    weighted_laplacian,
)
from .gpdm import build_extrapolation, gpdm_operator, solve_dirichlet_elliptic, solve_harmonic  # noqa: E402
from .prior import PriorModel, PriorSample, build_prior, normalization_constant, sample_prior  # noqa: E402
from .forward import (  # noqa: E402
    EllipticForwardModel,
    HeatForwardModel,
    Observation,
    elliptic_forward,
    generate_observations,
    heat_forward,
)
from .inference import Chain, PcnConfig, PosteriorSummary, pcn_step, potential, run_chain, summarize  # noqa: E402
from .interp import InterpConfig, knn_interpolate  # noqa: E402
