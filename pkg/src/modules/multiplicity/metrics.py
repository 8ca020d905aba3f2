"""
Evaluation quantities over sets of allocations: recovered-allocation counts,
utility, the threshold-test ratio, pairwise consistency, outcome profiles of
qualified individuals, age-bracket entropy, the ensemble allocation and
grouped risk-score summaries.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import entropy

from modules.multiplicity.domain import (AGE_BRACKETS, RACES, Allocation,
                                         CandidatePool, PredictionVector,
                                         RashomonSample, Race,
                                         allocation_utility)
from modules.multiplicity.exceptions import (DegenerateInputError,
                                             DimensionError, EmptyInputError,
                                             UndefinedRatioError)
from modules.multiplicity.mappings import top_k

logger = logging.getLogger(__name__)

RISK_QUANTILES = (0.05, 0.25, 0.50, 0.75, 0.95)


def _check_lengths(allocs: Sequence[Allocation], n: Optional[int] = None) -> int:
    lengths = {a.n for a in allocs}
    if n is not None:
        lengths.add(n)
    if len(lengths) > 1:
        raise DimensionError(f"allocations and pool have differing lengths: {sorted(lengths)}")
    return lengths.pop() if lengths else 0


def _outcome_matrix(allocs: Sequence[Allocation]) -> np.ndarray:
    return np.vstack([a.outcomes for a in allocs]).astype(np.int64)


def unique_allocations(allocs: Sequence[Allocation]) -> int:
    """Number of distinct outcome vectors."""
    _check_lengths(allocs)
    return len({a.key for a in allocs})


def allocation_utilities(allocs: Sequence[Allocation], pool: CandidatePool) -> np.ndarray:
    return np.array([allocation_utility(a, pool) for a in allocs], dtype=float)


def threshold_test_ratio(alloc: Allocation, pool: CandidatePool) -> float:
    """
    Mean illness count of selected Black patients over that of selected White patients.

    Raises:
        DimensionError: If the allocation and pool lengths differ.
        UndefinedRatioError: If either group has no selected member or White patients average zero illnesses.
    """
    _check_lengths([alloc], pool.n)
    selected = alloc.outcomes.astype(bool)
    black = selected & (pool.race == RACES.index(Race.BLACK))
    white = selected & (pool.race == RACES.index(Race.WHITE))
    if not black.any() or not white.any():
        raise UndefinedRatioError(
            f"threshold ratio needs selected Black and White patients (got {int(black.sum())} and {int(white.sum())})"
        )
    white_mean = float(pool.chronic_illnesses[white].mean())
    if white_mean == 0.0:
        raise UndefinedRatioError("selected White patients have no chronic illnesses")
    return float(pool.chronic_illnesses[black].mean()) / white_mean


def min_threshold_ratio(allocs: Sequence[Allocation], pool: CandidatePool) -> Optional[float]:
    """Smallest defined threshold ratio over a set, or None if no allocation defines one."""
    ratios: List[float] = []
    for alloc in allocs:
        try:
            ratios.append(threshold_test_ratio(alloc, pool))
        except UndefinedRatioError:
            continue
    if not ratios:
        logger.debug("No allocation of %d defines a threshold ratio", len(allocs))
        return None
    return min(ratios)


def pairwise_consistency(allocs: Sequence[Allocation]) -> float:
    """
    Probability that an individual receives the same outcome in two allocations of the set.

    Exact over all m(m−1)/2 unordered pairs: an individual selected s times
    agrees in C(s, 2) + C(m − s, 2) pairs.

    Raises:
        DegenerateInputError: If fewer than two allocations are given.
    """
    m = len(allocs)
    if m < 2:
        raise DegenerateInputError(f"pairwise consistency needs at least 2 allocations, got {m}")
    _check_lengths(allocs)
    counts = _outcome_matrix(allocs).sum(axis=0)
    rest = m - counts
    agreeing = counts * (counts - 1) // 2 + rest * (rest - 1) // 2
    return float(np.mean(agreeing / (m * (m - 1) / 2)))


class OutcomeProfile(BaseModel):
    """
    How qualified individuals fare across a set of allocations.

    Attributes:
        systemic_rejection: Share of qualified individuals never selected.
        multiple_outcomes: Share selected in some allocations but not all.
        always_accepted: Share selected in every allocation.
    """
    systemic_rejection: float = Field(ge=0, le=1)
    multiple_outcomes: float = Field(ge=0, le=1)
    always_accepted: float = Field(ge=0, le=1)


def outcome_profile(allocs: Sequence[Allocation], pool: CandidatePool) -> OutcomeProfile:
    """
    Raises:
        EmptyInputError: If no allocations are given.
        DegenerateInputError: If the pool has no qualified individuals.
    """
    if not allocs:
        raise EmptyInputError("outcome profile of an empty allocation set")
    _check_lengths(allocs, pool.n)
    if pool.n_prime == 0:
        raise DegenerateInputError("outcome profile is undefined without qualified individuals")
    counts = _outcome_matrix(allocs).sum(axis=0)[pool.qualified]
    m = len(allocs)
    never = int(np.count_nonzero(counts == 0))
    always = int(np.count_nonzero(counts == m))
    mixed = counts.shape[0] - never - always
    total = counts.shape[0]
    return OutcomeProfile(systemic_rejection=never / total, multiple_outcomes=mixed / total, always_accepted=always / total)


def age_distribution(alloc: Allocation, pool: CandidatePool) -> np.ndarray:
    """Selected individuals per age bracket."""
    _check_lengths([alloc], pool.n)
    return np.bincount(pool.age_bracket[alloc.outcomes.astype(bool)].astype(np.int64), minlength=len(AGE_BRACKETS))


def age_entropy(alloc: Allocation, pool: CandidatePool) -> float:
    """Base-2 Shannon entropy of the selected individuals' age brackets."""
    if alloc.k < 1:
        raise DegenerateInputError("age entropy needs at least one selected individual")
    return float(entropy(age_distribution(alloc, pool), base=2))


def mean_age_entropy(allocs: Sequence[Allocation], pool: CandidatePool) -> float:
    if not allocs:
        raise EmptyInputError("mean age entropy of an empty allocation set")
    return float(np.mean([age_entropy(a, pool) for a in allocs]))


def ensemble_prediction(sample: RashomonSample) -> PredictionVector:
    """Unweighted mean of the member score vectors."""
    if not sample.members:
        raise EmptyInputError("ensemble of an empty Rashomon sample")
    # sorting each column first fixes the summation order, so member order cannot change the mean
    scores = np.sort(sample.score_matrix, axis=0).mean(axis=0)
    losses = np.sort([m.validation_loss for m in sample.members])
    return PredictionVector(
        scores=np.clip(scores, 0.0, 1.0),
        validation_loss=float(losses.mean()),
        method_tag=sample.method_tag,
        model_id=f"ensemble:{sample.method_tag}",
    )


def ensemble_allocation(sample: RashomonSample, k: int) -> Allocation:
    """Top-k of the ensemble-averaged scores."""
    alloc = top_k(ensemble_prediction(sample), k)
    alloc.metadata.update({"mapping": "ensemble_top_k", "members": len(sample)})
    return alloc


class GroupRiskSummary(BaseModel):
    """Distribution of all member scores for one race at one illness level."""
    race: Race
    illness_level: int
    individuals: int
    scores: int
    mean: float
    sd: float
    quantiles: Dict[str, float]


def risk_by_group(sample: RashomonSample, pool: CandidatePool, illness_level: int) -> Dict[str, Optional[GroupRiskSummary]]:
    """
    Summarise every member's scores per race among individuals with exactly ``illness_level`` illnesses.

    Returns:
        Race name to summary; None marks an empty stratum.
    """
    if not sample.members:
        raise EmptyInputError("risk summary of an empty Rashomon sample")
    if sample.members[0].n != pool.n:
        raise DimensionError(f"sample scores {sample.members[0].n} individuals, pool has {pool.n}")
    matrix = sample.score_matrix
    at_level = pool.chronic_illnesses == illness_level
    summaries: Dict[str, Optional[GroupRiskSummary]] = {}
    for code, race in enumerate(RACES):
        stratum = at_level & (pool.race == code)
        if not stratum.any():
            summaries[race.value] = None
            continue
        values = matrix[:, stratum].ravel()
        summaries[race.value] = GroupRiskSummary(
            race=race,
            illness_level=illness_level,
            individuals=int(stratum.sum()),
            scores=int(values.size),
            mean=float(values.mean()),
            sd=float(values.std(ddof=1)) if values.size > 1 else 0.0,
            quantiles={f"q{int(round(p * 100)):02d}": float(np.quantile(values, p)) for p in RISK_QUANTILES},
        )
    return summaries


def risk_by_all_groups(sample: RashomonSample, pool: CandidatePool) -> Dict[int, Dict[str, Optional[GroupRiskSummary]]]:
    """``risk_by_group`` for every illness level present in the pool."""
    levels = sorted(int(v) for v in np.unique(pool.chronic_illnesses))
    return {level: risk_by_group(sample, pool, level) for level in levels}
