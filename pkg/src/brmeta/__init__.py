"""Random-effects meta-analysis and meta-regression with bias-reduced
penalized likelihoods."""

__version__ = "0.1.0"

from .errors import (
    BrmetaError,
    ConfigurationError,
    DomainError,
    InsufficientDataError,
    InvalidMethodError,
    ProfileError,
    RankDeficiencyError,
)
from .estimation import FitOptions, FitResult, dl_estimate, fit, solve_psi
from .inference import (
    IntervalResult,
    ProfileTarget,
    plr_ci,
    profile_statistic,
    signed_root,
    test_pvalue,
    wald_ci,
    wald_pvalue,
)
from .io import load_dataset, read_study_csv, write_study_csv
from .model import (
    Dataset,
    Method,
    Theta,
    adjusted_score,
    adjusted_score_psi,
    expected_info,
    log_likelihood,
    median_adjustment_closed,
    median_adjustment_general,
    observed_info,
    penalized_loglik,
    score,
    weights,
    wls_beta,
)
from .simulation import (
    BootstrapDesign,
    BrockwellDesign,
    SimMetrics,
    coverage_study,
    estimation_study,
    power_study,
    pvalue_distribution_study,
)
