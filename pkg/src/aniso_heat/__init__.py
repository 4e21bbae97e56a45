"""Heat kernels, Duhamel solutions and Hoelder estimates for stable operators.

The operator ``L`` has Fourier multiplier ``m(xi) = |xi|^sigma g(xi/|xi|)``
built from a spectral measure on the unit sphere.
"""

from .errors import (
    AnisoHeatError,
    ConvergenceError,
    DegenerateMeasureError,
    GridTooCoarseError,
    OutOfRangeError,
    PVNotStabilizedError,
    ValidationError,
)
from .fields import SpaceTimeField
from .kernel import (
    CancellationResult,
    GridProfile,
    KernelProfile,
    SpatialGrid,
    build_profile,
    cancellation_integral,
    decay_slope,
    heat_kernel_eval,
    profile_equation_residual,
    read_profile_binary,
    shifted_average_difference,
    spherical_average,
    write_profile_binary,
    write_profile_csv,
)
from .product_ops import (
    BlockPartition,
    ProductProfile,
    closed_form_sigma1,
    gradient_ratio_bound,
    gradient_ratios,
    product_profile,
)
from .sigma_geometry import HolderEstimate, SigmaPoint, holder_seminorm, sigma_distance, sigma_norm
from .solver import (
    BumpTestFunction,
    Forcing,
    PvParams,
    apply_operator,
    carre_du_champ,
    excised_ball_constant,
    forcing_from_field,
    named_forcing,
    smoothing_exponent,
    solve_forced,
    solve_forced_spectral,
    solve_homogeneous,
    very_weak_residual,
)
from .spectral_measure import (
    SpectralMeasure,
    ellipticity_lambda,
    fractional_laplacian_measure,
    isotropic_measure,
    measure_from_spec,
    sum_of_laplacians_measure,
    total_mass,
)
from .symbol import SymbolField, g_eval, symbol_eval

__version__ = "0.1.0"
