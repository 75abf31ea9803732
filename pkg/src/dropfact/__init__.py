"""Dropout-regularized matrix factorization.

Stochastic column-dropout training, its exact deterministic equivalent, the
width-adaptive rate that turns the induced penalty into a certified
factorization quasi-norm, and the closed-form squared-nuclear-norm solver.
"""

__version__ = "0.1.0"

from .core import (
    AdaptiveRate,
    BernoulliMask,
    CapacityError,
    ContractError,
    DimensionError,
    DropoutConfig,
    FactorPair,
    FixedRate,
    NumericalError,
    ParameterError,
    deterministic_objective,
    draw_mask,
    exact_expected_objective,
    frob_loss,
    lambda_d,
    masked_objective,
    monte_carlo_objective,
    omega,
    theta_adaptive,
)
from .experiments import (
    SpectrumReport,
    SynthSpec,
    TrainBudget,
    gen_synthetic,
    numerical_rank,
    run_equivalence_study,
    run_spectrum_study,
)
from .quasinorm import (
    EqualizedFactorization,
    doubling_construction,
    envelope_gap,
    equalize_diagonal,
    equalized_factorization,
    quasi_norm,
)
from .solvers import (
    ShrinkagePlan,
    SvdResult,
    l1_squared_prox,
    nuclear_norm,
    nuclear_squared_solve,
    objective_nuclear_squared,
    shrinkage_plan,
    svd,
)
from .trainers import (
    StepSchedule,
    TrainTrace,
    grad_deterministic,
    sgd_dropout_step,
    train_deterministic,
    train_stochastic,
)

__all__ = [
    "AdaptiveRate", "BernoulliMask", "CapacityError", "ContractError",
    "DimensionError", "DropoutConfig", "EqualizedFactorization", "FactorPair",
    "FixedRate", "NumericalError", "ParameterError", "ShrinkagePlan",
    "SpectrumReport", "StepSchedule", "SvdResult", "SynthSpec", "TrainBudget",
    "TrainTrace", "deterministic_objective", "doubling_construction",
    "draw_mask", "envelope_gap", "equalize_diagonal", "equalized_factorization",
    "exact_expected_objective", "frob_loss", "gen_synthetic",
    "grad_deterministic", "l1_squared_prox", "lambda_d", "masked_objective",
    "monte_carlo_objective", "nuclear_norm", "nuclear_squared_solve",
    "numerical_rank", "objective_nuclear_squared", "omega", "quasi_norm",
    "run_equivalence_study", "run_spectrum_study", "sgd_dropout_step",
    "shrinkage_plan", "svd", "theta_adaptive", "train_deterministic",
    "train_stochastic", "__version__",
]
