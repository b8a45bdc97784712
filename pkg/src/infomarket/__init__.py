"""Two-settlement market equilibrium when producer and consumer hold different beliefs about renewable output."""

from .agents import best_responses, consumer_best_response, price_update, producer_best_response
from .analysis import (
    InfeasibleError,
    StabilityReport,
    Verdict,
    demand_excess,
    eigenvalues,
    jacobian,
    price_field,
    recourse_dispatch,
    stability,
    welfare_per_outcome,
)
from .beliefs import (
    CalibrationError,
    SampleSet,
    WeightingParams,
    calibrate,
    discretize,
    labeled_distributions,
    sample_reference,
    weight_cdf,
    weighted_stats,
)
from .config import ConfigError, ExperimentConfig, default_config, load_config, parse_config
from .core import (
    BeliefSet,
    BoxSet,
    DispatchSchedule,
    MarketInstance,
    PriceVector,
    ValidationError,
    Violation,
    validate,
)
from .equilibrium import (
    EquilibriumResult,
    NumericError,
    SolverConfig,
    SolverError,
    analytic_equilibrium,
    centralized_clear,
    potential_equilibrium,
    tatonnement,
)

__version__ = "0.1.0"
