"""Matrix-free log determinants and scalable Gaussian-process kernel learning."""

from .estimator import LogDetGPRegressor
from .estimators import (
    ChebyshevPlan,
    GradientEstimate,
    HessianEstimate,
    LogDetEstimate,
    ReferenceCorrection,
    VarianceReport,
    chebyshev_bounds,
    chebyshev_logdet_grad,
    chebyshev_plan,
    hutchinson_trace,
    lanczos_logdet_grad,
    reference_correction,
    scaled_eig_logdet,
    second_derivatives,
    slq_logdet,
    variance_diagnostic,
)
from .exceptions import (
    ConfigurationError,
    ContractViolation,
    DenseSizeError,
    GeometryError,
    InvalidProbeError,
    NumericalError,
    OutOfGridError,
)
from .gp import (
    BACKENDS,
    Budget,
    FitResult,
    LikelihoodEvaluation,
    build_logdet_surrogate,
    fit,
    log_marginal_likelihood,
    predict,
    sample_prior,
)
from .kernels import (
    DataSet,
    Family,
    Hyperparameters,
    InducingGrid,
    KernelSpec,
    build_dense_kernel,
    build_interp_weights,
    build_ski_operator,
    derivative_operator,
    derivative_operators,
    kernel_eval,
    kernel_grad,
    kernel_hessian,
    kernel_matrix,
    second_derivative_operators,
    ski_diag_correction,
)
from .lanczos import LanczosDecomposition, lanczos_decompose
from .operators import (
    CountingOperator,
    DenseOperator,
    DiagonalOperator,
    KroneckerOperator,
    LinearOperator,
    ProbeSet,
    ScaledIdentity,
    SkiOperator,
    ToeplitzOperator,
    apply,
    cg_solve,
    extremal_eigs,
    materialize,
    rademacher_probes,
)
from .surrogate import SurrogateModel, build_surrogate, choose_design_points, surrogate_eval

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
