"""
Test the Rashomon-set samplers and the epsilon filter.
"""
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path
src_dir = Path(__file__).parent / "src"
sys.path.insert(0, str(src_dir))

from modules.multiplicity.datasets import Split
from modules.multiplicity.domain import (CandidatePool, PredictionVector,
                                         RashomonSample)
from modules.multiplicity.exceptions import EmptyInputError
from modules.multiplicity.learners import TrainConfig, predict, train
from modules.multiplicity.rashomon import (BOOTSTRAP, FEATURE_SUBSETS,
                                           PERTURBATION, SHUFFLE,
                                           draw_feature_subsets,
                                           filter_epsilon,
                                           load_rashomon_sample,
                                           sample_bootstrap,
                                           sample_feature_subsets,
                                           sample_shuffle,
                                           sample_weight_perturbation,
                                           save_rashomon_sample)


def make_pool(n: int, seed: int, dimension: int = 4) -> CandidatePool:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dimension))
    illnesses = rng.poisson(np.exp(0.8 * X[:, 0] - 0.5 * X[:, 1]))
    return CandidatePool(
        features=X,
        chronic_illnesses=illnesses,
        race=rng.integers(0, 3, size=n),
        age_bracket=rng.integers(0, 7, size=n),
        q=1,
    )


def make_split() -> Split:
    return Split(partition=0, draw=0, train=make_pool(400, 1), validation=make_pool(150, 2), pool=make_pool(60, 3))


LOGISTIC = TrainConfig(family="logistic", epochs=4, learning_rate=0.1)


def pv(loss: float, model_id: str) -> PredictionVector:
    return PredictionVector(scores=np.full(3, 0.5), validation_loss=loss, method_tag="test", model_id=model_id)


def test_filter_epsilon_keeps_near_best():
    """Test the loss tolerance around the best candidate."""
    candidates = [pv(0.30, "a"), pv(0.305, "b"), pv(0.32, "c")]
    sample = filter_epsilon(candidates, 0.01)
    assert [m.model_id for m in sample.members] == ["a", "b"]
    assert sample.best_loss == pytest.approx(0.30)
    assert sample.method_tag == "test"


def test_filter_epsilon_refilter():
    """Test that re-filtering is idempotent and keeps the original best loss."""
    sample = filter_epsilon([pv(0.30, "a"), pv(0.305, "b"), pv(0.32, "c")], 0.01)
    again = filter_epsilon(sample, 0.01)
    assert [m.model_id for m in again.members] == ["a", "b"]
    narrower = filter_epsilon(sample, 0.001)
    assert [m.model_id for m in narrower.members] == ["a"]
    assert narrower.best_loss == sample.best_loss


def test_filter_epsilon_errors():
    with pytest.raises(EmptyInputError):
        filter_epsilon([], 0.01)
    split = make_split()
    model = train(LOGISTIC, split.train, split.validation)
    with pytest.raises(ValueError):
        filter_epsilon([model], 0.01)
    sample = filter_epsilon([model], 0.01, split.pool, "logistic")
    assert sample.members[0].n == split.pool.n


def test_draw_feature_subsets(caplog):
    """Test that four features give at most six distinct pairs."""
    rng = np.random.default_rng(0)
    subsets = draw_feature_subsets(4, 2, 6, rng)
    assert sorted(subsets) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    with caplog.at_level(logging.WARNING):
        truncated = draw_feature_subsets(4, 2, 10, rng)
    assert len(truncated) == 6
    assert "truncating" in caplog.text


def test_draw_feature_subsets_large_space():
    subsets = draw_feature_subsets(23, 6, 50, np.random.default_rng(1))
    assert len(subsets) == 50
    assert len(set(subsets)) == 50
    assert all(len(s) == 6 and list(s) == sorted(s) for s in subsets)


def test_sample_feature_subsets():
    """Test sparse scoring systems over random feature pairs."""
    split = make_split()
    base = TrainConfig(family="scoring_system", epochs=3, learning_rate=0.1, max_features=2)
    models = sample_feature_subsets(base, split, 6, 0)
    assert 1 <= len(models) <= 6
    masks = set()
    for model in models:
        assert model.family == "scoring_system"
        assert model.method_tag == FEATURE_SUBSETS
        mask = np.array(model.config.feature_mask)
        assert mask.sum() == 2
        assert not np.any(model.parameters["coefficients"][~mask])
        masks.add(tuple(mask))
    assert len(masks) == len(models)
    subsets = draw_feature_subsets(split.train.dimension, 2, 6, np.random.default_rng(0))
    assert len(set(subsets)) == 6
    assert all(len(s) == 2 for s in subsets)
    vectors = [tuple(m.parameter_vector()) for m in models]
    assert len(set(vectors)) == len(vectors)


def test_sample_bootstrap_is_seeded():
    split = make_split()
    first = sample_bootstrap(LOGISTIC, split, 3, 5)
    second = sample_bootstrap(LOGISTIC, split, 3, 5, max_workers=3)
    assert [m.model_id for m in first] == [m.model_id for m in second]
    assert len(first) == 3
    assert all(m.method_tag == BOOTSTRAP for m in first)


def test_sample_shuffle_snapshots():
    """Test one snapshot per post-burn-in epoch."""
    split = make_split()
    models = sample_shuffle(LOGISTIC, split, 4, 1, burn_in=2)
    assert [m.epoch for m in models] == [3, 4, 5, 6]
    assert all(m.method_tag == SHUFFLE for m in models)


def test_sample_weight_perturbation():
    """Test that perturbed models stay within the loss bound and raise their target score."""
    split = make_split()
    base = train(LOGISTIC, split.train, split.validation)
    epsilon = 0.05
    models = sample_weight_perturbation(base, split, budget=5, step=0.01, epsilon=epsilon, rng_seed=2, max_steps=30)
    assert len(models) >= 1
    for model in models:
        assert model.method_tag == PERTURBATION
        assert model.validation_loss <= base.validation_loss + epsilon + 1e-12
        point = model.seed_chain[-1]
        target = split.validation.subset([point])
        assert predict(model, target).scores[0] > predict(base, target).scores[0]


def test_weight_perturbation_needs_gradient():
    split = make_split()
    scoring = train(TrainConfig(family="scoring_system", epochs=2, max_features=2), split.train, split.validation)
    with pytest.raises(ValueError):
        sample_weight_perturbation(scoring, split, budget=2)


def test_save_and_load_sample(tmp_path):
    split = make_split()
    models = sample_bootstrap(LOGISTIC, split, 3, 7)
    sample = filter_epsilon(models, 0.05, split.pool, BOOTSTRAP)
    save_rashomon_sample(sample, tmp_path / "bootstrap", {"training": [7]})
    restored = load_rashomon_sample(tmp_path / "bootstrap")
    assert isinstance(restored, RashomonSample)
    assert [m.model_id for m in restored.members] == [m.model_id for m in sample.members]
    assert np.array_equal(restored.score_matrix, sample.score_matrix)
    assert math.isclose(restored.best_loss, sample.best_loss)
