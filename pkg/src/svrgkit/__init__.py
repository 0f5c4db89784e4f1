"""Variance-reduced stochastic methods for nonconvex finite sums."""

from .oracle import (
    RNG_ALGORITHM,
    ContractViolation,
    FiniteSum,
    IfoLedger,
    NumericError,
    Oracle,
    finite_difference_gradient,
    full_gradient,
    make_rng,
)
from .problems import (
    MlpProblem,
    NonconvexLogisticProblem,
    QuadraticProblem,
    load_libsvm,
    make_logistic,
    make_quadratic,
    make_synthetic_classification,
)
from .certificates import certify, compute_c_sequence, variance_diagnostic
from .optimizers import (
    Checkpoint,
    RunRecord,
    SvrgSchedule,
    run_gd,
    run_gd_svrg,
    run_minibatch_svrg,
    run_msvrg,
    run_sgd,
    run_svrg,
)

__version__ = "0.1.0"
