"""Categorical maximum-entropy modelling.

Fit the maximum-entropy distribution over a product of categorical
attributes subject to pattern and marginal constraints, select informative
constraints greedily, and draw synthetic tuples from the result.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AttributeDef,
    PatternConstraint,
    PatternInstantiation,
    Schema,
    TupleDataset,
    empirical_frequency,
    make_constraint,
)
from .engine import FitReport, MaxEntModel, fit, log_likelihood  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .kernels import BACKEND  # noqa: E402
from .sampler import SampleSpec, sample  # noqa: E402
from .selection import SelectionTrace, bic, heuristic_h, select  # noqa: E402

__all__ = [
    "AttributeDef", "BACKEND", "FitReport", "MaxEntModel", "PatternConstraint",
    "PatternInstantiation", "SampleSpec", "Schema", "SelectionTrace", "TupleDataset",
    "bic", "empirical_frequency", "fit", "heuristic_h", "log_likelihood",
    "make_constraint", "sample", "select",
]
