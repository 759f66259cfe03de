"""Beta-binomial/gamma-Poisson regression for repeated bivariate count data."""

__version__ = "0.1.0"

from .dist import (  # noqa: E402
    MomentSet,
    beta_binomial_log_pmf,
    compute_moments,
    gamma_poisson_log_pmf,
)
from .infer import (  # noqa: E402
    ConvergenceError,
    DesignRow,
    FitOptions,
    FitResult,
    InitializationError,
    JointFit,
    LrTestResult,
    UsageError,
    fit,
    fit_component,
    lr_test,
    mom_init_bb,
    mom_init_gp,
    predict_covariance,
    predict_summaries,
)
from .kernels import BACKEND  # noqa: E402
from .lik import (  # noqa: E402
    bb_hessian,
    bb_loglik,
    bb_score,
    gp_hessian,
    gp_loglik,
    gp_score,
)
from .model import (  # noqa: E402
    ConfigurationError,
    DesignSet,
    DomainError,
    NaturalParams,
    NonFiniteParameterError,
    ParamVector,
    RepeatedCountData,
    evaluate_links,
)
from .sim import SimSpec, sample_dataset  # noqa: E402
