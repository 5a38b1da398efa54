"""Almost sure central limit theorems for Hermite variations of fractional Brownian motion.

Exact fGn synthesis, Hermite variations and their normalizations, block-kernel
contraction arithmetic and the log-average (ASCLT) experiments built on them.
"""

__version__ = "0.1.0"

from .errors import AscltLabError, CapacityError, DomainError, EmbeddingError, FixtureSchemaError
from .fgn import (
    CovarianceSequence,
    FgnPath,
    HurstParams,
    circulant_eigenvalues,
    covariance_fbm,
    covariance_sequence,
    fbm_from_fgn,
    implied_covariance,
    rho,
    rho_asymptotic,
    sample_fgn,
    sample_fgn_batch,
)
from .hermite import hermite_eval, hermite_map
from .variation import (
    Regime,
    VariationSeries,
    classify,
    normalized_series,
    sigma_limit,
    sigma_n_exact,
    z_limit_second_moment,
    z_series,
)
from .kernels import (
    BlockKernel,
    CriterionReport,
    GeneralKernel,
    block_kernel,
    contraction_duality_check,
    contraction_norm,
    criterion_partial_sums,
    kernel_inner_product,
    rate_exponent_fit,
    stein_variance_kernel,
    symmetrized_contraction_norm,
)
from .asclt import (
    ILReport,
    LogAverageMeasure,
    SteinBoundReport,
    hermite_regime_experiment,
    il_delta_sq_exact_gaussian,
    il_delta_sq_mc,
    il_report,
    log_average_cdf_distance,
    log_average_eval,
    malliavin_norm_pathwise,
    stein_bound_report,
)
