"""
Test the evaluation metrics.
"""
import itertools
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path
src_dir = Path(__file__).parent / "src"
sys.path.insert(0, str(src_dir))

from modules.multiplicity.domain import (RACES, Allocation, CandidatePool,
                                         PredictionVector, Race,
                                         RashomonSample)
from modules.multiplicity.exceptions import (DegenerateInputError,
                                             EmptyInputError,
                                             UndefinedRatioError)
from modules.multiplicity.mappings import top_k
from modules.multiplicity.metrics import (age_distribution, age_entropy,
                                          ensemble_allocation,
                                          ensemble_prediction,
                                          min_threshold_ratio, outcome_profile,
                                          pairwise_consistency, risk_by_group,
                                          threshold_test_ratio,
                                          unique_allocations)

BLACK, WHITE, OTHER = (RACES.index(r) for r in (Race.BLACK, Race.WHITE, Race.OTHER))


def make_pool(illnesses, races, ages=None, q=1) -> CandidatePool:
    n = len(illnesses)
    return CandidatePool(
        features=np.zeros((n, 1)),
        chronic_illnesses=illnesses,
        race=races,
        age_bracket=ages if ages is not None else [0] * n,
        q=q,
    )


def sample_of(*score_vectors) -> RashomonSample:
    members = tuple(
        PredictionVector(scores=s, validation_loss=0.3, method_tag="test", model_id=f"m{i}")
        for i, s in enumerate(score_vectors)
    )
    return RashomonSample(members=members, epsilon=0.01, best_loss=0.3, method_tag="test")


def test_unique_allocations():
    a = Allocation.from_indices([0, 1], 4)
    assert unique_allocations([a, Allocation.from_indices([0, 1], 4)]) == 1
    distinct = [Allocation.from_indices([i], 4) for i in range(4)]
    assert unique_allocations(distinct) == 4


def test_threshold_test_ratio():
    """Test the Black/White ratio of selected illness means."""
    pool = make_pool([4, 2, 0, 3], [BLACK, WHITE, BLACK, WHITE])
    assert threshold_test_ratio(Allocation.from_indices([0, 1], 4), pool) == pytest.approx(2.0)
    equal = make_pool([2, 2], [BLACK, WHITE])
    assert threshold_test_ratio(Allocation.from_indices([0, 1], 2), equal) == pytest.approx(1.0)
    with pytest.raises(UndefinedRatioError):
        threshold_test_ratio(Allocation.from_indices([1, 3], 4), pool)
    with pytest.raises(UndefinedRatioError):
        threshold_test_ratio(Allocation.from_indices([0, 1], 2), make_pool([2, 0], [BLACK, WHITE]))


def test_min_threshold_ratio():
    pool = make_pool([4, 2, 1, 3], [BLACK, WHITE, BLACK, WHITE])
    allocs = [Allocation.from_indices([0, 1], 4), Allocation.from_indices([2, 3], 4), Allocation.from_indices([1, 3], 4)]
    assert min_threshold_ratio(allocs, pool) == pytest.approx(1 / 3)
    assert min_threshold_ratio(allocs[2:], pool) is None


def test_pairwise_consistency_examples():
    """Test consistency on hand-enumerated sets."""
    same = Allocation.from_indices([0, 2], 4)
    assert pairwise_consistency([same, same, same]) == pytest.approx(1.0)
    assert pairwise_consistency([Allocation.from_indices([0], 2), Allocation.from_indices([1], 2)]) == pytest.approx(0.0)
    allocs = [Allocation.from_indices([0], 2), Allocation.from_indices([0], 2), Allocation.from_indices([1], 2)]
    assert pairwise_consistency(allocs) == pytest.approx(1 / 3)
    with pytest.raises(DegenerateInputError):
        pairwise_consistency([same])


def test_pairwise_consistency_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, k, m = 8, 3, int(rng.integers(2, 7))
        allocs = [Allocation.from_indices(rng.choice(n, k, replace=False), n) for _ in range(m)]
        pairs = list(itertools.combinations(allocs, 2))
        brute = np.mean([np.mean(a.outcomes == b.outcomes) for a, b in pairs])
        assert pairwise_consistency(allocs) == pytest.approx(brute, abs=1e-12)


def test_outcome_profile():
    """Test the split of qualified individuals by how often they are selected."""
    pool = make_pool([3, 2, 2, 0, 1], [BLACK, WHITE, OTHER, WHITE, BLACK], q=2)
    single = outcome_profile([Allocation.from_indices([0, 3], 5)], pool)
    assert single.multiple_outcomes == 0.0
    assert single.always_accepted == pytest.approx(1 / 3)
    assert single.systemic_rejection == pytest.approx(2 / 3)

    profile = outcome_profile([Allocation.from_indices([0, 1], 5), Allocation.from_indices([0, 2], 5)], pool)
    assert profile.always_accepted == pytest.approx(1 / 3)
    assert profile.multiple_outcomes == pytest.approx(2 / 3)
    assert profile.systemic_rejection == 0.0
    assert math.isclose(profile.systemic_rejection + profile.multiple_outcomes + profile.always_accepted, 1.0, abs_tol=1e-12)

    with pytest.raises(DegenerateInputError):
        outcome_profile([Allocation.from_indices([0], 5)], pool.with_threshold(10))
    with pytest.raises(EmptyInputError):
        outcome_profile([], pool)


def test_age_entropy():
    """Test base-2 entropy of selected age brackets."""
    pool = make_pool([1] * 14, [WHITE] * 14, ages=[i % 7 for i in range(14)])
    assert age_entropy(Allocation.from_indices([0, 7], 14), pool) == pytest.approx(0.0)
    assert age_entropy(Allocation.from_indices(range(7), 14), pool) == pytest.approx(math.log2(7))
    assert age_entropy(Allocation.from_indices([0, 1], 14), pool) == pytest.approx(1.0)
    assert age_distribution(Allocation.from_indices([0, 7, 3], 14), pool).tolist() == [2, 0, 0, 1, 0, 0, 0]
    with pytest.raises(DegenerateInputError):
        age_entropy(Allocation(outcomes=np.zeros(14), k=0), pool)


def test_age_entropy_is_bounded():
    rng = np.random.default_rng(1)
    pool = make_pool([1] * 200, [WHITE] * 200, ages=rng.integers(0, 7, size=200))
    for _ in range(20):
        alloc = Allocation.from_indices(rng.choice(200, 50, replace=False), 200)
        assert 0.0 <= age_entropy(alloc, pool) <= math.log2(7) + 1e-12


def test_ensemble_allocation():
    """Test the ensemble top-k of averaged member scores."""
    scores = np.array([0.3, 0.9, 0.5, 0.1])
    assert ensemble_allocation(sample_of(scores), 2).key == top_k(sample_of(scores).members[0], 2).key

    opposite = sample_of(np.array([0.8, 0.2]), np.array([0.2, 0.8]))
    assert np.allclose(ensemble_prediction(opposite).scores, [0.5, 0.5])
    alloc = ensemble_allocation(opposite, 1)
    assert alloc.selected.tolist() == [0]
    assert alloc.metadata["mapping"] == "ensemble_top_k"

    with pytest.raises(EmptyInputError):
        ensemble_prediction(RashomonSample(members=(), best_loss=0.3))


def test_ensemble_ignores_member_order():
    rng = np.random.default_rng(3)
    vectors = [rng.random(30) for _ in range(7)]
    forward = ensemble_prediction(sample_of(*vectors)).scores
    backward = ensemble_prediction(sample_of(*reversed(vectors))).scores
    assert np.array_equal(forward, backward)


def test_risk_by_group():
    """Test per-race score summaries at one illness level."""
    pool = make_pool([2, 2, 2, 1], [BLACK, WHITE, OTHER, BLACK])
    summaries = risk_by_group(sample_of(np.array([0.2, 0.6, 0.4, 0.9])), pool, 2)
    assert summaries["Black"].mean == pytest.approx(0.2)
    assert summaries["White"].mean == pytest.approx(0.6)
    assert summaries["Other"].individuals == 1

    two_models = risk_by_group(sample_of(np.array([0.2, 0.6, 0.4, 0.9]), np.array([0.4, 0.6, 0.4, 0.1])), pool, 2)
    assert two_models["Black"].scores == 2
    assert two_models["Black"].mean == pytest.approx(0.3)
    assert two_models["Black"].quantiles["q50"] == pytest.approx(0.3)

    missing = risk_by_group(sample_of(np.array([0.2, 0.6, 0.4, 0.9])), pool, 1)
    assert missing["White"] is None
    assert missing["Black"].mean == pytest.approx(0.9)
