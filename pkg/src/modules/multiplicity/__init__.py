"""
Allocation multiplicity: equal-utility combinatorics, Rashomon-set sampling,
allocation mappings and the metrics that compare them.
"""
from .combinatorics import (analytic_space_stats, count_equal_utility,
                            reference_least_discriminatory,
                            sample_equal_utility)
from .domain import (Allocation, CandidatePool, EqualUtilitySpace, Individual,
                     PredictionVector, RashomonSample, allocation_utility)
from .exceptions import MultiplicityError

__all__ = [
    "Allocation",
    "CandidatePool",
    "EqualUtilitySpace",
    "Individual",
    "PredictionVector",
    "RashomonSample",
    "allocation_utility",
    "count_equal_utility",
    "sample_equal_utility",
    "analytic_space_stats",
    "reference_least_discriminatory",
    "MultiplicityError",
]
