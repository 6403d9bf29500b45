"""Stationary distributions and boundary-to-boundary passage quantities for
Markov-modulated Brownian motion on a strip with phase resampling at the
boundaries."""

__version__ = "0.1.0"

from .errors import (
    AssumptionViolationError,
    BranchMismatchError,
    DomainError,
    InvalidInputError,
    InvalidParamsError,
    MmbmError,
    NumericalFailureError,
    ReducibleGeneratorError,
    SolverFailureError,
    UnsupportedCaseError,
)
from .flexible import FlexibleModel, StationaryDistribution, assemble, cdf_eval, quantile, up_leg_fraction
from .model import Drift, DriftClass, MmbmParams, classify_drift, reverse_levels
from .passage import PassageSolution, exit_probabilities, passage_down, passage_up, solve_passage
from .quadratic import GeneratorPair, solve_pair
from .sojourn import SojournKit, build_kit, excursion_times, sojourn_down, sojourn_up
