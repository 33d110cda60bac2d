"""Simulation schemes for distribution-dependent (mean-field) SDEs.

Interacting-particle Euler method, deterministic recursive quantization
in dimension one, and the hybrid particle-quantization scheme, together
with optimal-quantization machinery and error metrics.
"""

from .core import (
    BlowUp,
    ConfigError,
    CustomLaw,
    DegenerateGeometry,
    DiscreteMeasure,
    GaussianLaw,
    InstanceTooLarge,
    MeanFieldModel,
    MeasureView,
    NonFiniteOutput,
    ParticleEnsemble,
    PointMassLaw,
    QuadratureFailure,
    RngStream,
    TimeGrid,
    VlasovKernel,
    evaluate_diffusion,
    evaluate_drift,
    gaussian_increments,
)
from .quantization import (
    GaussianMixture1D,
    LloydQuantizer,
    LloydResult,
    Quantizer,
    Voronoi1D,
    gaussian_cdf,
    lloyd_optimize,
    lloyd_step_empirical,
    lloyd_step_mixture_1d,
    project,
    project_indices,
    quantile_seed,
    quantization_error,
    voronoi_weights,
)
from .schemes import (
    HybridRunConfig,
    ParticleRunConfig,
    RecursiveQState,
    TransitionMatrix,
    hybrid_step,
    particle_step,
    recursive_transition_1d,
    simulate_hybrid,
    simulate_particles,
    simulate_recursive_q,
)
from .metrics import (
    CdfGrid,
    ErrorReport,
    empirical_cdf,
    kde_density_2d,
    second_moment,
    sup_cdf_error,
    voronoi_cell_density_2d,
    wasserstein_1d,
    wasserstein_discrete_exact,
)
from .models import (
    FhnParams,
    brownian_vlasov_model,
    burgers_model,
    burgers_true_cdf,
    burgers_true_cdf_grid,
    fhn_model,
    ou_model,
    toy_models,
)

__version__ = "0.1.0"
