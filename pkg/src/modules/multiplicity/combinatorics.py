"""
Exact counting, uniform sampling and analytic statistics over the space of
Δ-equal-utility allocations, plus the least-discriminatory reference
allocation.
"""
import logging
import math
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from modules.multiplicity.domain import (RACES, Allocation, CandidatePool,
                                         EqualUtilitySpace, Race)
from modules.multiplicity.exceptions import InfeasibleSpaceError
from modules.multiplicity.seeding import SeedLike, make_rng

logger = logging.getLogger(__name__)

# Reference allocation tie alternation starts with this group
TIE_START = Race.BLACK

TABLE1_UTILITIES = (0.85, 0.95)
TABLE1_QUALIFICATION_RATES = (0.50, 0.75)
TABLE1_POOL_SIZES = (100, 1000)
TABLE1_SELECTION_RATES = (0.10, 0.25, 0.50)


class SpaceCount(BaseModel):
    """
    Exact number of allocations in an equal-utility space.

    Attributes:
        value: Arbitrary-precision count (0 iff the space is empty).
    """
    value: int = Field(ge=0)

    @property
    def is_empty(self) -> bool:
        return self.value == 0

    def scientific(self, digits: int = 1) -> str:
        """Render with ``digits`` significant figures, e.g. ``2e19``."""
        if self.value == 0:
            return "0"
        exponent = len(str(self.value)) - 1
        mantissa = Fraction(self.value, 10 ** exponent)
        scaled = round(mantissa * 10 ** (digits - 1))
        if scaled >= 10 ** digits:
            scaled //= 10
            exponent += 1
        text = str(scaled)
        if digits > 1:
            text = f"{text[0]}.{text[1:]}"
        return f"{text}e{exponent}"

    def __str__(self) -> str:
        return str(self.value)


class SpaceStats(BaseModel):
    """
    Marginal statistics of a uniform draw from a Δ=0 equal-utility space.

    Attributes:
        p_qualified: Selection probability of any qualified individual, k′/n′.
        p_unqualified: Selection probability of any unqualified individual, (k−k′)/(n−n′).
        pairwise_consistency: Probability an individual gets the same outcome in two independent draws.
        source: "analytic" or "sampled".
    """
    p_qualified: float
    p_unqualified: float
    pairwise_consistency: float
    source: str = "analytic"


def k_prime_from_utility(utility: float, k: int) -> int:
    """Selected-qualified count for a target utility, ⌊u·k⌋."""
    return int(math.floor(utility * k + 1e-9))


def allocation_space_size(n: int, k: int) -> int:
    """Number of allocations of k positives among n individuals, C(n, k)."""
    return math.comb(n, k)


def _term(space: EqualUtilitySpace, k_delta: int) -> int:
    rest = space.k - k_delta
    if k_delta < 0 or rest < 0:
        return 0
    return math.comb(space.n_prime, k_delta) * math.comb(space.n - space.n_prime, rest)


def count_equal_utility(space: EqualUtilitySpace) -> SpaceCount:
    """
    Count the Δ-equal-utility allocations.

    Args:
        space: The (n, k, n′, k′, Δ) description of the space.

    Returns:
        Σ over k′_δ from k′−Δ to k′ of C(n′, k′_δ)·C(n−n′, k−k′_δ), exactly.
    """
    low = max(0, space.k_prime - space.delta)
    total = sum(_term(space, kd) for kd in range(low, space.k_prime + 1))
    return SpaceCount(value=total)


def _draw_k_delta(space: EqualUtilitySpace, rng: np.random.Generator) -> int:
    candidates = space.feasible_k_primes()
    if len(candidates) == 1:
        return candidates[0]
    terms = [_term(space, kd) for kd in candidates]
    total = sum(terms)
    probabilities = np.array([float(Fraction(t, total)) for t in terms])
    probabilities /= probabilities.sum()
    return int(candidates[int(rng.choice(len(candidates), p=probabilities))])


def sample_equal_utility(
    space: EqualUtilitySpace,
    rng_seed: SeedLike,
    qualified_mask: Optional[np.ndarray] = None,
) -> Allocation:
    """
    Draw an allocation uniformly from the equal-utility space.

    The draw is compositional: k′_δ qualified ids and k−k′_δ unqualified ids
    are chosen uniformly without replacement; for Δ > 0, k′_δ is first drawn
    with probability proportional to its term in the count.

    Args:
        space: Space to sample.
        rng_seed: Seed or generator.
        qualified_mask: Boolean qualification of each id; defaults to ids 0..n′−1.

    Returns:
        The sampled allocation, with k_prime set.

    Raises:
        InfeasibleSpaceError: If the space is empty or the mask disagrees with n′.
    """
    if space.is_empty:
        raise InfeasibleSpaceError(f"equal-utility space is empty: {space}")
    if qualified_mask is None:
        qualified_mask = np.arange(space.n) < space.n_prime
    qualified_mask = np.asarray(qualified_mask, dtype=bool)
    if qualified_mask.shape != (space.n,) or int(qualified_mask.sum()) != space.n_prime:
        raise InfeasibleSpaceError("qualification mask does not match the space's n and n_prime")

    rng = make_rng(rng_seed)
    k_delta = _draw_k_delta(space, rng)
    qualified_ids = np.flatnonzero(qualified_mask)
    unqualified_ids = np.flatnonzero(~qualified_mask)
    chosen = np.concatenate([
        rng.choice(qualified_ids, size=k_delta, replace=False),
        rng.choice(unqualified_ids, size=space.k - k_delta, replace=False),
    ])
    alloc = Allocation.from_indices(chosen, space.n, mapping="equal_utility_sample", delta=space.delta)
    alloc.k_prime = k_delta
    return alloc


def _agreement(p: float) -> float:
    return p * p + (1.0 - p) * (1.0 - p)


def analytic_space_stats(space: EqualUtilitySpace) -> SpaceStats:
    """
    Closed-form selection marginals and pairwise consistency of a Δ=0 space.

    Raises:
        InfeasibleSpaceError: If the space is empty or Δ > 0.
    """
    if space.delta != 0:
        raise InfeasibleSpaceError("analytic statistics are defined for delta = 0 only")
    if space.is_empty:
        raise InfeasibleSpaceError(f"equal-utility space is empty: {space}")
    n_unqualified = space.n - space.n_prime
    p_q = space.k_prime / space.n_prime if space.n_prime else 0.0
    p_u = (space.k - space.k_prime) / n_unqualified if n_unqualified else 0.0
    consistency = (space.n_prime / space.n) * _agreement(p_q) + (n_unqualified / space.n) * _agreement(p_u)
    return SpaceStats(p_qualified=p_q, p_unqualified=p_u, pairwise_consistency=consistency)


def sampled_space_stats(space: EqualUtilitySpace, draws: int, rng_seed: SeedLike) -> SpaceStats:
    """Monte-Carlo estimate of ``analytic_space_stats`` from ``draws`` independent samples."""
    if draws < 2:
        raise InfeasibleSpaceError("at least two draws are needed to estimate pairwise consistency")
    rng = make_rng(rng_seed)
    mask = np.arange(space.n) < space.n_prime
    counts = np.zeros(space.n, dtype=np.int64)
    for _ in range(draws):
        counts += sample_equal_utility(space, rng, mask).outcomes
    rates = counts / draws
    # agreement over unordered pairs of draws, per individual
    pairs = draws * (draws - 1) / 2
    agree = (counts * (counts - 1) / 2 + (draws - counts) * (draws - counts - 1) / 2) / pairs
    p_q = float(rates[mask].mean()) if space.n_prime else 0.0
    p_u = float(rates[~mask].mean()) if space.n - space.n_prime else 0.0
    return SpaceStats(p_qualified=p_q, p_unqualified=p_u, pairwise_consistency=float(agree.mean()), source="sampled")


def _tie_order(members: np.ndarray, race: np.ndarray) -> List[int]:
    """Order one equal-illness level: alternate Black/White (starting with TIE_START), then Other by id."""
    black = [int(i) for i in sorted(members[race[members] == RACES.index(Race.BLACK)])]
    white = [int(i) for i in sorted(members[race[members] == RACES.index(Race.WHITE)])]
    other = [int(i) for i in sorted(members[race[members] == RACES.index(Race.OTHER)])]
    first, second = (black, white) if TIE_START == Race.BLACK else (white, black)
    ordered: List[int] = []
    for a, b in zip(first, second):
        ordered.extend((a, b))
    shorter = min(len(first), len(second))
    ordered.extend(first[shorter:])
    ordered.extend(second[shorter:])
    ordered.extend(other)
    return ordered


def _sickest(pool: CandidatePool, candidates: np.ndarray, count: int) -> List[int]:
    illnesses = pool.chronic_illnesses
    chosen: List[int] = []
    for level in sorted(set(int(x) for x in illnesses[candidates]), reverse=True):
        if len(chosen) == count:
            break
        # each level restarts the alternation with TIE_START
        tied = candidates[illnesses[candidates] == level]
        chosen.extend(_tie_order(tied, pool.race)[: count - len(chosen)])
    return chosen


def reference_least_discriminatory(pool: CandidatePool, k: int, k_prime: int) -> Allocation:
    """
    Equal-utility allocation selecting patients in descending order of illness.

    Takes the k′ sickest qualified individuals, then the k−k′ sickest
    unqualified ones; ties at an illness level alternate between Black and
    White patients (Black first), with Other-race patients after them by id.

    Raises:
        InfeasibleSpaceError: If k′ > n′ or k−k′ > n−n′.
    """
    if k_prime < 0 or k_prime > k or k_prime > pool.n_prime or k - k_prime > pool.n - pool.n_prime:
        raise InfeasibleSpaceError(
            f"cannot select k'={k_prime} of n'={pool.n_prime} qualified and "
            f"{k - k_prime} of {pool.n - pool.n_prime} unqualified"
        )
    qualified = np.flatnonzero(pool.qualified)
    unqualified = np.flatnonzero(~pool.qualified)
    chosen = _sickest(pool, qualified, k_prime) + _sickest(pool, unqualified, k - k_prime)
    alloc = Allocation.from_indices(chosen, pool.n, mapping="reference_least_discriminatory", tie_start=TIE_START.value)
    alloc.k_prime = k_prime
    return alloc


def table1_grid() -> List[Dict[str, object]]:
    """The 24 cells of the equal-utility count grid (utility × n′/n × n × k/n)."""
    rows: List[Dict[str, object]] = []
    for utility in TABLE1_UTILITIES:
        for qualification_rate in TABLE1_QUALIFICATION_RATES:
            for n in TABLE1_POOL_SIZES:
                for selection_rate in TABLE1_SELECTION_RATES:
                    k = int(round(selection_rate * n))
                    n_prime = int(round(qualification_rate * n))
                    space = EqualUtilitySpace(n=n, k=k, n_prime=n_prime, k_prime=k_prime_from_utility(utility, k))
                    count = count_equal_utility(space)
                    rows.append({
                        "utility": utility,
                        "qualification_rate": qualification_rate,
                        "n": n,
                        "selection_rate": selection_rate,
                        "k": k,
                        "n_prime": n_prime,
                        "k_prime": space.k_prime,
                        "count": str(count),
                        "count_1sf": count.scientific(1),
                    })
    return rows


def format_count_summary(space: EqualUtilitySpace, count: SpaceCount) -> str:
    """
    Format an equal-utility count as a human-readable summary.

    Args:
        space: The counted space.
        count: Result of count_equal_utility.

    Returns:
        Formatted string with the count and the share of all C(n, k) allocations.
    """
    total = allocation_space_size(space.n, space.k)
    share = float(Fraction(count.value, total)) if total else 0.0
    lines = [
        "Equal-Utility Allocation Count",
        "=" * 50,
        f"n={space.n}  k={space.k}  n'={space.n_prime}  k'={space.k_prime}  delta={space.delta}",
        f"Count: {count.value}",
        f"Count (1 s.f.): {count.scientific(1)}",
        f"All allocations C(n, k): {SpaceCount(value=total).scientific(3)}",
        f"Share of all allocations: {share:.6g}",
    ]
    return "\n".join(lines)
