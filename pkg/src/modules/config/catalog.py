"""
Catalog of every metric written to a results archive.

Metric names are the ``metric`` column of ``records.csv`` and ``metrics.csv``.
"""

from typing import Dict, TypedDict


class MetricInfo(TypedDict):
    """Description of an emitted metric"""
    table: str  # Result table the metric belongs to
    unit: str  # Unit or range of the value
    description: str


METRIC_CATALOG: Dict[str, MetricInfo] = {
    # Rashomon sampling
    "rashomon_models": {
        "table": "models",
        "unit": "count",
        "description": "Models retained by the epsilon filter",
    },
    "validation_loss": {
        "table": "models",
        "unit": "nats",
        "description": "Mean validation cross-entropy of retained models",
    },
    "recovered_allocations": {
        "table": "models",
        "unit": "count",
        "description": "Distinct allocations produced by the mapping",
    },
    "utility": {
        "table": "models",
        "unit": "fraction",
        "description": "Mean share of selected individuals who are qualified",
    },
    # Fairness and homogenisation
    "min_threshold_ratio": {
        "table": "fairness",
        "unit": "ratio",
        "description": "Lowest Black/White selected illness ratio over the allocations",
    },
    "pairwise_consistency": {
        "table": "fairness",
        "unit": "probability",
        "description": "Chance an individual gets the same outcome in two allocations",
    },
    "age_entropy": {
        "table": "fairness",
        "unit": "bits",
        "description": "Mean Shannon entropy of selected age brackets",
    },
    # Outcome profile of qualified individuals
    "systemic_rejection": {
        "table": "outcomes",
        "unit": "fraction",
        "description": "Qualified individuals rejected by every allocation",
    },
    "multiple_outcomes": {
        "table": "outcomes",
        "unit": "fraction",
        "description": "Qualified individuals both selected and rejected",
    },
    "always_accepted": {
        "table": "outcomes",
        "unit": "fraction",
        "description": "Qualified individuals selected by every allocation",
    },
    # Ensemble
    "ensemble_age_entropy": {
        "table": "ensemble",
        "unit": "bits",
        "description": "Age-bracket entropy of the ensemble top-k allocation",
    },
    "ensemble_threshold_ratio": {
        "table": "ensemble",
        "unit": "ratio",
        "description": "Threshold ratio of the ensemble top-k allocation",
    },
    # Equal-utility baselines
    "reference_k_prime": {
        "table": "baseline",
        "unit": "count",
        "description": "Selected-qualified count defining the equal-utility space",
    },
    "analytic_consistency": {
        "table": "baseline",
        "unit": "probability",
        "description": "Exact pairwise consistency of uniform equal-utility draws",
    },
    "reference_threshold_ratio": {
        "table": "baseline",
        "unit": "ratio",
        "description": "Threshold ratio of the least-discriminatory reference allocation",
    },
    "reference_age_entropy": {
        "table": "baseline",
        "unit": "bits",
        "description": "Age-bracket entropy of the reference allocation",
    },
}


def describe_metric(name: str) -> MetricInfo:
    """Look up a metric, listing the known names on failure"""
    info = METRIC_CATALOG.get(name)
    if info is None:
        raise KeyError(f"Unknown metric '{name}'. Available metrics: {', '.join(METRIC_CATALOG)}")
    return info
