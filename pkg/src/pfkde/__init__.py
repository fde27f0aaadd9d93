"""Bootstrap particle filtering with kernel estimates of the filtering
density, its derivatives, and downstream MAP / entropy approximations,
validated against an exact Kalman reference on a linear-Gaussian benchmark.
"""

from ._accel import USING_NUMBA
from .analysis import (
    ErrorReport,
    Grid,
    entropy_estimate,
    fit_loglog_slope,
    functional_estimate,
    ise,
    l1_error,
    mise,
    sup_error,
    tvd,
)
from .bpf import (
    DegenerateWeightsError,
    ParticleCloud,
    WeightedStage,
    bpf_init,
    bpf_propagate_weight,
    bpf_step,
    estimate_integral,
    multinomial_resample,
    run_filter,
    systematic_resample,
)
from .kalman import (
    GaussianDensity,
    KalmanError,
    gaussian_entropy,
    gaussian_gradient,
    gaussian_pdf,
    gaussian_sample,
    kalman_step,
    run_kalman,
)
from .kde import (
    DensityEstimator,
    Hypercube,
    estimate_density,
    estimate_derivative,
    estimate_gradient,
    k_of_n,
    min_particles,
    truncated_density,
)
from .kernels import (
    Kernel,
    epanechnikov_evaluate,
    gaussian_evaluate,
    kernel_gradient,
    laplacian_evaluate,
    make_kernel,
    rescale_derivative,
    rescale_evaluate,
)
from .map_search import AscentTrace, gradient_ascent, map_report, particle_argmax
from .model import (
    LinearGaussianModel,
    ModelConfig,
    StateSpaceModel,
    Trajectory,
    linear_gaussian_likelihood,
    benchmark_model,
    parse_model_config,
    simulate,
    substream,
)

__version__ = "0.1.0"
