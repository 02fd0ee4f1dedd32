"""Pass-through matrices for multiproduct Bertrand oligopoly."""

__version__ = "0.1.0"

from .applications import (
    consumer_surplus_delta,
    merger_price_effects,
    merger_report,
    merger_scenario,
    percentage_passthrough,
    pseudo_tax,
    resolve_post_merger,
    upp_vector,
)
from .asymptotics import (
    estimate_tail_coefficients,
    nested_logit_limit,
    ray_sequence,
    semi_elasticity_form,
    theoretical_limit,
    thin_tail_diag_approx,
)
from .demand import CES, Aids, GammaMixing, Linear, Logit, LogNormal, MixedLogit, NestedLogit, eval_demand
from .equilibrium import solve_bertrand, soc_check
from .estimator import PassThroughEstimator
from .exceptions import InputError, NumericalError, PassmatError
from .market import Market, SimulationConfig, build_market
from .passthrough import (
    block_neumann,
    directional_analysis,
    exact_passthrough,
    jacobian_decomposition,
)
from .simulation import run_simulation

__all__ = [
    "Aids", "CES", "GammaMixing", "InputError", "Linear", "LogNormal", "Logit", "Market",
    "MixedLogit", "NestedLogit", "NumericalError", "PassThroughEstimator", "PassmatError",
    "SimulationConfig", "block_neumann", "build_market", "consumer_surplus_delta",
    "directional_analysis", "estimate_tail_coefficients", "eval_demand", "exact_passthrough",
    "jacobian_decomposition", "merger_price_effects", "merger_report", "merger_scenario",
    "nested_logit_limit", "percentage_passthrough", "pseudo_tax", "ray_sequence",
    "resolve_post_merger", "run_simulation", "semi_elasticity_form", "soc_check", "solve_bertrand",
    "theoretical_limit", "thin_tail_diag_approx", "upp_vector",
]
