"""
Test population ingestion, the synthetic generator and the split protocol.
"""
import logging
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add src directory to path
src_dir = Path(__file__).parent / "src"
sys.path.insert(0, str(src_dir))

from modules.multiplicity.datasets import (AGE_COLUMNS, COST_COLUMNS,
                                           FEATURE_COLUMNS, FeatureScaler,
                                           GeneratorConfig, SplitPlan,
                                           generate_synthetic, load_csv,
                                           load_generator_defaults,
                                           load_population, make_splits,
                                           partition_indices,
                                           population_frame, save_population)
from modules.multiplicity.domain import RACES, CandidatePool, Race
from modules.multiplicity.exceptions import (DataIngestionError,
                                             InfeasibleSpaceError)


def small_population(size: int = 1000, **overrides):
    return generate_synthetic(GeneratorConfig.default(population_size=size, **overrides), q=2)


def test_load_generator_defaults():
    """Test loading the generator constants."""
    defaults = load_generator_defaults()
    assert defaults["population_size"] > 0
    assert set(defaults["costs"]) == set(COST_COLUMNS)
    config = GeneratorConfig.default()
    assert config.bias_mode == "unbiased"


def test_generator_config_validation():
    with pytest.raises(ValidationError):
        GeneratorConfig.default(age_bracket_probabilities=[0.5, 0.5])
    with pytest.raises(ValidationError):
        GeneratorConfig.default(race_mix={"Black": 0.5, "White": 0.2, "Other": 0.1})


def test_generator_schema():
    """Test the generated columns against the ingestion schema."""
    pool = small_population(2000)
    assert pool.feature_names == FEATURE_COLUMNS
    assert pool.dimension == 23
    ages = pool.features[:, [FEATURE_COLUMNS.index(c) for c in AGE_COLUMNS]]
    assert np.all(ages.sum(axis=1) == 1)
    assert np.array_equal(np.argmax(ages, axis=1), pool.age_bracket)
    costs = pool.features[:, [FEATURE_COLUMNS.index(c) for c in COST_COLUMNS]]
    assert np.all(costs >= 0)
    assert pool.source_index.tolist() == list(range(2000))


def test_generator_is_deterministic():
    a, b = small_population(500), small_population(500)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.chronic_illnesses, b.chronic_illnesses)
    c = small_population(500, seed=1)
    assert not np.array_equal(a.features, c.features)


def test_generator_qualification_rates():
    """Test that thresholds 1, 2, 3 give decreasing qualification rates near the target."""
    pool = small_population(20000)
    rates = [pool.with_threshold(q).n_prime / pool.n for q in (1, 2, 3)]
    assert 0.45 < rates[0] < 0.65
    assert 0.22 < rates[1] < 0.42
    assert 0.10 < rates[2] < 0.28
    assert rates[0] > rates[1] > rates[2]


def test_cost_proxy_bias():
    """Test that the biased mode deflates only Black patients' costs."""
    unbiased = small_population(3000)
    biased = small_population(3000, bias_mode="cost_proxy_bias")
    columns = [FEATURE_COLUMNS.index(c) for c in COST_COLUMNS]
    black = biased.race == RACES.index(Race.BLACK)
    assert np.array_equal(biased.chronic_illnesses, unbiased.chronic_illnesses)
    assert np.array_equal(biased.features[~black][:, columns], unbiased.features[~black][:, columns])
    assert np.all(biased.features[black][:, columns] <= unbiased.features[black][:, columns])
    assert biased.features[black][:, columns].sum() < unbiased.features[black][:, columns].sum()


def test_population_round_trip(tmp_path):
    pool = small_population(300)
    save_population(pool, tmp_path / "population", {"generator": "default"})
    restored = load_population(tmp_path / "population")
    assert np.array_equal(restored.features, pool.features)
    assert np.array_equal(restored.chronic_illnesses, pool.chronic_illnesses)
    assert np.array_equal(restored.race, pool.race)
    assert restored.q == pool.q


def write_csv(tmp_path, frame, name="population.csv"):
    path = tmp_path / name
    frame.to_csv(path, index=False)
    return path


def test_load_csv_parses_race_and_drops_incomplete_rows(tmp_path, caplog):
    frame = population_frame(small_population(20)).astype(object)
    frame.loc[0, "race"] = "BLACK"
    frame.loc[1, "race"] = "white"
    frame.loc[4, "dem_female"] = None
    with caplog.at_level(logging.WARNING):
        pool = load_csv(write_csv(tmp_path, frame), q=1)
    assert pool.n == 19
    assert 4 not in pool.source_index.tolist()
    assert pool.race[0] == RACES.index(Race.BLACK)
    assert pool.race[1] == RACES.index(Race.WHITE)
    assert "Dropping 1 rows" in caplog.text


def test_load_csv_errors(tmp_path):
    """Test that malformed files name the offending cell."""
    frame = population_frame(small_population(20)).astype(object)

    with pytest.raises(DataIngestionError) as info:
        load_csv(write_csv(tmp_path, frame.drop(columns=["gagne_sum_tm1"]), "missing.csv"), q=1)
    assert info.value.column == "gagne_sum_tm1"

    bad = frame.copy()
    bad.loc[2, "cost_emergency_tm1"] = "abc"
    with pytest.raises(DataIngestionError) as info:
        load_csv(write_csv(tmp_path, bad, "bad.csv"), q=1)
    assert info.value.row == 3
    assert info.value.column == "cost_emergency_tm1"

    negative = frame.copy()
    negative.loc[5, "gagne_sum_t"] = -1
    with pytest.raises(DataIngestionError) as info:
        load_csv(write_csv(tmp_path, negative, "negative.csv"), q=1)
    assert info.value.row == 6


def test_split_plan():
    plan = SplitPlan()
    assert plan.split_sizes(1000) == (600, 200, 200)
    assert plan.repetitions == 250
    with pytest.raises(ValidationError):
        SplitPlan(train_frac=0.7, validation_frac=0.2, test_frac=0.2)


def test_partition_indices_are_disjoint():
    plan = SplitPlan(seed=4)
    train, validation, test = partition_indices(1000, plan, 3)
    combined = np.concatenate([train, validation, test])
    assert np.array_equal(np.sort(combined), np.arange(1000))
    assert len(train) == 600 and len(validation) == 200


def test_make_splits():
    """Test the partition x draw protocol."""
    population = small_population(1000)
    plan = SplitPlan(num_partitions=2, draws_per_partition=3, pool_size=50, seed=1)
    splits = list(make_splits(population, plan))
    assert [(s.partition, s.draw) for s in splits] == [(p, d) for p in range(2) for d in range(3)]

    first = splits[0]
    train_rows = set(first.train.source_index.tolist())
    validation_rows = set(first.validation.source_index.tolist())
    pool_rows = set(first.pool.source_index.tolist())
    assert not train_rows & validation_rows
    assert not pool_rows & (train_rows | validation_rows)
    assert first.pool.n == 50

    assert splits[1].train is first.train
    assert pool_rows != set(splits[1].pool.source_index.tolist())
    assert train_rows != set(splits[3].train.source_index.tolist())

    again = list(make_splits(population, plan))
    assert all(np.array_equal(a.pool.source_index, b.pool.source_index) for a, b in zip(splits, again))


def test_make_splits_standardizes_costs():
    population = small_population(1000)
    split = next(make_splits(population, SplitPlan(num_partitions=1, draws_per_partition=1, pool_size=50)))
    columns = [FEATURE_COLUMNS.index(c) for c in COST_COLUMNS]
    means = split.train.features[:, columns].mean(axis=0)
    assert np.allclose(means, 0.0, atol=1e-9)
    other = [i for i in range(len(FEATURE_COLUMNS)) if i not in columns]
    original = population.subset(split.train.source_index)
    assert np.array_equal(split.train.features[:, other], original.features[:, other])
    assert split.scaler.columns == tuple(columns)


def test_feature_scaler_without_cost_columns():
    pool = small_population(50)
    unnamed = CandidatePool(
        features=pool.features,
        chronic_illnesses=pool.chronic_illnesses,
        race=pool.race,
        age_bracket=pool.age_bracket,
        q=pool.q,
    )
    scaler = FeatureScaler.fit(unnamed)
    assert scaler.columns == ()
    assert scaler.transform(unnamed) is unnamed


def test_make_splits_infeasible():
    population = small_population(100)
    with pytest.raises(InfeasibleSpaceError):
        list(make_splits(population, SplitPlan(pool_size=50)))
