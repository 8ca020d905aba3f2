"""
Population ingestion, the synthetic healthcare generator and the
train/validation/test split protocol.

The CSV schema is the healthcare data dictionary: one indicator for sex,
seven age-band indicators, a hypertension indicator, thirteen cost columns
and the previous-year illness count, plus ``race`` and the outcome-year
illness count ``gagne_sum_t``.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import stats
from scipy.special import expit
from typing_extensions import Self

from modules.multiplicity.domain import AGE_BRACKETS, RACES, CandidatePool, Race
from modules.multiplicity.exceptions import DataIngestionError, InfeasibleSpaceError
from modules.multiplicity.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

AGE_COLUMNS: Tuple[str, ...] = tuple(f"dem_age_band_{bracket}_tm1" for bracket in AGE_BRACKETS)
COST_COLUMNS: Tuple[str, ...] = (
    "cost_dialysis_tm1",
    "cost_emergency_tm1",
    "cost_home_health_tm1",
    "cost_ip_medical_tm1",
    "cost_ip_surgical_tm1",
    "cost_laboratory_tm1",
    "cost_op_primary_care_tm1",
    "cost_op_specialists_tm1",
    "cost_op_surgery_tm1",
    "cost_other_tm1",
    "cost_pharmacy_tm1",
    "cost_physical_therapy_tm1",
    "cost_radiology_tm1",
)
FEATURE_COLUMNS: Tuple[str, ...] = (
    ("dem_female",) + AGE_COLUMNS + ("hypertension_elixhauser_tm1",) + COST_COLUMNS + ("gagne_sum_tm1",)
)
RACE_COLUMN = "race"
OUTCOME_COLUMN = "gagne_sum_t"

POPULATION_FILE = "population.csv"
MANIFEST_FILE = "manifest.json"


def load_generator_defaults() -> Dict[str, Any]:
    """
    Load the frozen synthetic-generator constants from JSON.

    Returns:
        Dictionary of GeneratorConfig fields.
    """
    json_path = Path(__file__).parent / "data" / "generator_defaults.json"
    with open(json_path, "r") as f:
        return json.load(f)


def _row_error(message: str, frame: pd.DataFrame, position: Any, column: str) -> DataIngestionError:
    # 1-based data row, header excluded
    return DataIngestionError(message, row=int(frame.index.get_loc(position)) + 1, column=column)


def _parse_race(value: str) -> int:
    text = str(value).strip().lower()
    if text == "black":
        return RACES.index(Race.BLACK)
    if text == "white":
        return RACES.index(Race.WHITE)
    return RACES.index(Race.OTHER)


def load_csv(path: str | Path, q: int) -> CandidatePool:
    """
    Read a population CSV.

    Rows with missing cells are dropped with a warning; race is kept out of
    the model features.

    Args:
        path: UTF-8 comma-separated file with the feature columns, ``race`` and ``gagne_sum_t``.
        q: Qualification threshold on the outcome-year illness count.

    Returns:
        The population as a CandidatePool with ``source_index`` set to file row positions.

    Raises:
        DataIngestionError: On missing columns, non-numeric or invalid cells (naming row and column).
    """
    frame = pd.read_csv(path, dtype=str, encoding="utf-8")
    required = list(FEATURE_COLUMNS) + [RACE_COLUMN, OUTCOME_COLUMN]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataIngestionError(f"{path} is missing columns: {', '.join(missing)}", column=missing[0])

    frame = frame[required]
    incomplete = frame.isna().any(axis=1)
    if incomplete.any():
        logger.warning("Dropping %d rows with missing cells from %s", int(incomplete.sum()), path)
    kept_rows = np.flatnonzero(~incomplete.to_numpy())
    complete = frame[~incomplete]

    numeric: Dict[str, np.ndarray] = {}
    for column in list(FEATURE_COLUMNS) + [OUTCOME_COLUMN]:
        raw = complete[column].str.strip()
        bad = pd.to_numeric(raw, errors="coerce").isna()
        if bad.any():
            position = bad[bad].index[0]
            raise _row_error(f"non-numeric value '{raw[position]}'", frame, position, column)
        # float() parsing keeps %.17g values bit-exact
        numeric[column] = raw.astype(float).to_numpy()

    outcome = numeric[OUTCOME_COLUMN]
    invalid = (outcome < 0) | (outcome != np.round(outcome))
    if invalid.any():
        position = complete.index[int(np.argmax(invalid))]
        raise _row_error("illness count must be a nonnegative integer", frame, position, OUTCOME_COLUMN)

    ages = np.column_stack([numeric[c] for c in AGE_COLUMNS])
    one_hot = (ages.sum(axis=1) == 1) & np.all((ages == 0) | (ages == 1), axis=1)
    if not one_hot.all():
        position = complete.index[int(np.argmin(one_hot))]
        raise _row_error("exactly one age band must be set", frame, position, AGE_COLUMNS[0])

    logger.info("Loaded %d individuals from %s", len(complete), path)
    return CandidatePool(
        features=np.column_stack([numeric[c] for c in FEATURE_COLUMNS]),
        chronic_illnesses=outcome.astype(np.int64),
        race=[_parse_race(v) for v in complete[RACE_COLUMN]],
        age_bracket=np.argmax(ages, axis=1),
        q=q,
        feature_names=FEATURE_COLUMNS,
        source_index=kept_rows,
    )


def population_frame(population: CandidatePool) -> pd.DataFrame:
    """CSV-ready frame of a population in the ingestion schema."""
    frame = pd.DataFrame(population.features, columns=list(population.feature_names or FEATURE_COLUMNS))
    frame[RACE_COLUMN] = [RACES[int(code)].value for code in population.race]
    frame[OUTCOME_COLUMN] = population.chronic_illnesses
    return frame


def save_population(population: CandidatePool, directory: str | Path, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """
    Persist a population as ``population.csv`` plus a JSON manifest.

    Returns:
        The directory written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    population_frame(population).to_csv(directory / POPULATION_FILE, index=False, float_format="%.17g")
    manifest = {"q": population.q, "rows": population.n, "provenance": provenance or {}}
    with open(directory / MANIFEST_FILE, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return directory


def load_population(directory: str | Path) -> CandidatePool:
    """Reload a population written by ``save_population``."""
    directory = Path(directory)
    with open(directory / MANIFEST_FILE, "r") as f:
        manifest = json.load(f)
    return load_csv(directory / POPULATION_FILE, int(manifest["q"]))


class HypertensionModel(BaseModel):
    intercept: float
    illness_slope: float
    age_slope: float


class CostModel(BaseModel):
    """
    Illness-linked zero-inflated log-normal cost.

    A patient incurs the cost with probability σ(a + b·log(λ + 0.1)); the
    amount is exp(m + s·log(λ + 0.1) + σ_log·Z), rounded to ``rounding``.
    """
    participation_intercept: float
    participation_slope: float
    log_mean: float
    log_slope: float
    log_sd: float = Field(gt=0)
    rounding: int = Field(gt=0)


class GeneratorConfig(BaseModel):
    """
    Parameters of the synthetic healthcare population.

    Illness burden λ is gamma distributed; outcome-year and previous-year
    illness counts are independent Poisson(λ) draws, which puts the
    qualification rates for q = 1, 2, 3 near 0.55, 0.32 and 0.19.
    """
    population_size: int = Field(gt=0)
    seed: int = 0
    bias_mode: Literal["unbiased", "cost_proxy_bias"] = "unbiased"
    race_mix: Dict[Race, float]
    female_rate: float = Field(ge=0, le=1)
    age_bracket_probabilities: List[float]
    age_illness_correlation: float = Field(ge=-1, le=1)
    illness_shape: float = Field(gt=0)
    illness_scale: float = Field(gt=0)
    hypertension: HypertensionModel
    bias_deflation: float = Field(gt=0, le=1)
    costs: Dict[str, CostModel]

    @classmethod
    def default(cls, **overrides: Any) -> "GeneratorConfig":
        return cls.model_validate({**load_generator_defaults(), **overrides})

    @field_validator("age_bracket_probabilities")
    @classmethod
    def check_age_probabilities(cls, value: List[float]) -> List[float]:
        if len(value) != len(AGE_BRACKETS):
            raise ValueError(f"expected {len(AGE_BRACKETS)} age bracket probabilities")
        if any(p < 0 or p > 1 for p in value) or not np.isclose(sum(value), 1.0):
            raise ValueError("age bracket probabilities must lie in [0, 1] and sum to 1")
        return value

    @model_validator(mode="after")
    def check_mix(self) -> Self:
        if any(p < 0 or p > 1 for p in self.race_mix.values()) or not np.isclose(sum(self.race_mix.values()), 1.0):
            raise ValueError("race_mix probabilities must lie in [0, 1] and sum to 1")
        if set(self.costs) != set(COST_COLUMNS):
            missing = sorted(set(COST_COLUMNS) - set(self.costs))
            extra = sorted(set(self.costs) - set(COST_COLUMNS))
            raise ValueError(f"cost models do not match the cost columns (missing {missing}, unknown {extra})")
        return self


def generate_synthetic(config: GeneratorConfig, q: int = 2) -> CandidatePool:
    """
    Draw a synthetic population with the ingestion schema.

    In ``cost_proxy_bias`` mode every cost of a Black patient is multiplied
    by ``bias_deflation`` before rounding, so at a fixed illness level their
    costs understate their illness.

    Args:
        config: Generator parameters; the same config yields a bit-identical population.
        q: Qualification threshold of the returned population.

    Returns:
        The population with ``source_index`` 0..N-1.
    """
    rng = make_rng(derive_seed(config.seed))
    size = config.population_size

    latent = rng.standard_normal(size)
    burden = stats.gamma.ppf(np.clip(stats.norm.cdf(latent), 1e-12, 1.0 - 1e-12), a=config.illness_shape, scale=config.illness_scale)
    outcome = rng.poisson(burden)
    previous = rng.poisson(burden)
    log_burden = np.log(burden + 0.1)

    rho = config.age_illness_correlation
    age_score = stats.norm.cdf(rho * latent + np.sqrt(1.0 - rho * rho) * rng.standard_normal(size))
    age_code = np.minimum(
        np.searchsorted(np.cumsum(config.age_bracket_probabilities), age_score, side="right"),
        len(AGE_BRACKETS) - 1,
    )

    race_probabilities = np.array([config.race_mix.get(race, 0.0) for race in RACES])
    race_code = rng.choice(len(RACES), size=size, p=race_probabilities / race_probabilities.sum())
    female = (rng.random(size) < config.female_rate).astype(float)

    h = config.hypertension
    hypertension_p = expit(h.intercept + h.illness_slope * log_burden + h.age_slope * (age_code - 3) / 2.0)
    hypertension = (rng.random(size) < hypertension_p).astype(float)

    deflation = np.ones(size)
    if config.bias_mode == "cost_proxy_bias":
        deflation[race_code == RACES.index(Race.BLACK)] = config.bias_deflation

    columns: Dict[str, np.ndarray] = {"dem_female": female, "hypertension_elixhauser_tm1": hypertension}
    for code, column in enumerate(AGE_COLUMNS):
        columns[column] = (age_code == code).astype(float)
    for column in COST_COLUMNS:
        cost = config.costs[column]
        participates = rng.random(size) < expit(cost.participation_intercept + cost.participation_slope * log_burden)
        amount = np.exp(cost.log_mean + cost.log_slope * log_burden + cost.log_sd * rng.standard_normal(size))
        columns[column] = np.where(participates, np.round(amount * deflation / cost.rounding) * cost.rounding, 0.0)
    columns["gagne_sum_tm1"] = previous.astype(float)

    logger.debug("Generated %d synthetic individuals (bias_mode=%s)", size, config.bias_mode)
    return CandidatePool(
        features=np.column_stack([columns[c] for c in FEATURE_COLUMNS]),
        chronic_illnesses=outcome,
        race=race_code,
        age_bracket=age_code,
        q=q,
        feature_names=FEATURE_COLUMNS,
        source_index=np.arange(size),
    )


class SplitPlan(BaseModel):
    """
    Partition and draw protocol.

    Attributes:
        train_frac: Share of the population used for training.
        validation_frac: Share used for validation losses.
        test_frac: Share from which deployment pools are drawn.
        num_partitions: Independent train/validation/test partitions.
        draws_per_partition: Pools drawn from each partition's test split.
        pool_size: Individuals per pool (n).
        seed: Master seed for partitions and draws.
    """
    model_config = ConfigDict(frozen=True)

    train_frac: float = Field(default=0.6, gt=0, lt=1)
    validation_frac: float = Field(default=0.2, gt=0, lt=1)
    test_frac: float = Field(default=0.2, gt=0, lt=1)
    num_partitions: int = Field(default=10, gt=0)
    draws_per_partition: int = Field(default=25, gt=0)
    pool_size: int = Field(default=1000, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def check_fractions(self) -> Self:
        total = self.train_frac + self.validation_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        return self

    def split_sizes(self, population_size: int) -> Tuple[int, int, int]:
        n_train = int(round(self.train_frac * population_size))
        n_validation = int(round(self.validation_frac * population_size))
        return n_train, n_validation, population_size - n_train - n_validation

    @property
    def repetitions(self) -> int:
        return self.num_partitions * self.draws_per_partition


class FeatureScaler(BaseModel):
    """
    log1p then zero-mean/unit-variance scaling of cost columns, fitted on a training split.

    Attributes:
        columns: Indices of the scaled feature columns.
        means: Per-column mean of log1p(cost) on the training split.
        scales: Per-column standard deviation (1 where the column is constant).
    """
    model_config = ConfigDict(frozen=True)

    columns: Tuple[int, ...] = ()
    means: Tuple[float, ...] = ()
    scales: Tuple[float, ...] = ()

    @classmethod
    def fit(cls, pool: CandidatePool) -> "FeatureScaler":
        columns = tuple(i for i, name in enumerate(pool.feature_names) if name.startswith("cost_"))
        if not columns or pool.n == 0:
            return cls(columns=columns, means=(0.0,) * len(columns), scales=(1.0,) * len(columns))
        values = np.log1p(np.maximum(pool.features[:, columns], 0.0))
        means = values.mean(axis=0)
        scales = values.std(axis=0)
        scales[scales == 0] = 1.0
        return cls(columns=columns, means=tuple(means.tolist()), scales=tuple(scales.tolist()))

    def transform(self, pool: CandidatePool) -> CandidatePool:
        if not self.columns:
            return pool
        features = np.array(pool.features, dtype=float)
        columns = list(self.columns)
        features[:, columns] = (np.log1p(np.maximum(features[:, columns], 0.0)) - self.means) / self.scales
        return pool.with_features(features)


class Split(BaseModel):
    """One (partition, draw) repetition: training and validation splits plus a deployment pool."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    partition: int = Field(ge=0)
    draw: int = Field(ge=0)
    train: CandidatePool
    validation: CandidatePool
    pool: CandidatePool
    scaler: FeatureScaler = FeatureScaler()

    def with_threshold(self, q: int) -> "Split":
        return self.model_copy(update={
            "train": self.train.with_threshold(q),
            "validation": self.validation.with_threshold(q),
            "pool": self.pool.with_threshold(q),
        })


def partition_indices(population_size: int, plan: SplitPlan, partition: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sorted, disjoint and exhaustive train/validation/test index arrays for one partition."""
    n_train, n_validation, _ = plan.split_sizes(population_size)
    order = make_rng(derive_seed(plan.seed, partition)).permutation(population_size)
    return (
        np.sort(order[:n_train]),
        np.sort(order[n_train:n_train + n_validation]),
        np.sort(order[n_train + n_validation:]),
    )


def make_splits(population: CandidatePool, plan: SplitPlan, standardize: bool = True) -> Iterator[Split]:
    """
    Yield ``num_partitions × draws_per_partition`` repetitions.

    Partition p is seeded by (seed, p) and draw d by (seed, p, d), so any
    single repetition can be regenerated without the others.

    Raises:
        InfeasibleSpaceError: If a split would be empty or the pool is larger than the test split.
    """
    n_train, n_validation, n_test = plan.split_sizes(population.n)
    if min(n_train, n_validation, n_test) <= 0:
        raise InfeasibleSpaceError(f"population of {population.n} is too small for a {plan.train_frac}/{plan.validation_frac}/{plan.test_frac} split")
    if plan.pool_size > n_test:
        raise InfeasibleSpaceError(f"pool_size={plan.pool_size} exceeds the test split size {n_test}")

    for partition in range(plan.num_partitions):
        train_idx, validation_idx, test_idx = partition_indices(population.n, plan, partition)
        train = population.subset(train_idx)
        scaler = FeatureScaler.fit(train) if standardize else FeatureScaler()
        train = scaler.transform(train)
        validation = scaler.transform(population.subset(validation_idx))
        test = scaler.transform(population.subset(test_idx))
        for draw in range(plan.draws_per_partition):
            rng = make_rng(derive_seed(plan.seed, partition, draw))
            chosen = np.sort(rng.choice(n_test, size=plan.pool_size, replace=False))
            yield Split(
                partition=partition,
                draw=draw,
                train=train,
                validation=validation,
                pool=test.subset(chosen),
                scaler=scaler,
            )
