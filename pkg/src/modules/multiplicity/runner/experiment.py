"""
Experiment configuration and orchestration.

``run_experiment`` walks partitions in order. Within a partition, candidate
models are trained once per (q, method) on a thread pool; every (draw, q)
is then evaluated for each selection rate through the cell DAG. Each task
draws from its own seed derived from the master seed and its coordinates,
so the archive does not depend on thread scheduling.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator
from typing_extensions import Self

from modules.config import MAPPING_REGISTRY, METHOD_REGISTRY, Config
from modules.multiplicity.datasets import (GeneratorConfig, Split, SplitPlan,
                                           generate_synthetic, load_csv,
                                           make_splits)
from modules.multiplicity.domain import CandidatePool, RashomonSample
from modules.multiplicity.exceptions import MultiplicityError
from modules.multiplicity.learners import TrainConfig, TrainedModel
from modules.multiplicity.metrics import risk_by_all_groups
from modules.multiplicity.rashomon import filter_epsilon
from modules.multiplicity.runner.archive import ResultsArchive
from modules.multiplicity.runner.pipeline import CELL, Record, train_method
from modules.multiplicity.seeding import derive_seed, seed_chain

logger = logging.getLogger(__name__)

SELECTION_RATES = (0.10, 0.25, 0.50)
Q_VALUES = (1, 2, 3)

# Seed namespaces under the master seed
TRAINING_STREAM = 1
LOTTERY_STREAM = 2
EQUAL_UTILITY_STREAM = 3


class ExperimentConfig(BaseModel):
    """
    Full description of a simulation run; ``{}`` is a valid smoke configuration.

    Attributes:
        csv_path: Population CSV; the synthetic generator is used when unset.
        generator: Overrides of the synthetic generator defaults.
        selection_rates: Values of k/n.
        q_values: Qualification thresholds.
        methods: Rashomon sampling methods.
        mappings: Mapping names from the mapping registry.
        epsilon: Rashomon loss tolerance.
        delta: Utility tolerance of the equal-utility space.
        budget_scale: Registry budget column (smoke or full).
        budgets: Explicit per-method budgets overriding the scale.
        split_plan: Partition and draw protocol.
        master_seed: Root of every training, lottery and sampling seed.
        output_dir: Archive directory; defaults to the configured output root.
        lottery_draws: Allocations drawn per randomised mapping.
        equal_utility_draws: Allocations sampled from each equal-utility space.
        network: Training configuration of the networks.
        scoring_system: Training configuration of the scoring systems.
        persist_samples: Which Rashomon samples to write (none, first repetition, all).
        threads: Worker threads; defaults to the configured thread count.
    """
    csv_path: Optional[str] = None
    generator: Dict[str, Any] = Field(default_factory=dict)
    selection_rates: List[float] = Field(default_factory=lambda: list(SELECTION_RATES))
    q_values: List[int] = Field(default_factory=lambda: list(Q_VALUES))
    methods: List[str] = Field(default_factory=Config.get_method_names)
    mappings: List[str] = Field(default_factory=Config.get_mapping_names)
    epsilon: float = Field(default=0.01, gt=0)
    delta: int = Field(default=0, ge=0)
    budget_scale: Literal["smoke", "full"] = "smoke"
    budgets: Dict[str, int] = Field(default_factory=dict)
    split_plan: SplitPlan = Field(default_factory=SplitPlan)
    master_seed: int = 0
    output_dir: Optional[str] = None
    lottery_draws: int = Field(default=100, gt=0)
    equal_utility_draws: int = Field(default=100, ge=2)
    network: TrainConfig = Field(default_factory=lambda: TrainConfig(family="mlp"))
    scoring_system: TrainConfig = Field(
        default_factory=lambda: TrainConfig(family="scoring_system", learning_rate=0.1, epochs=20, batch_size=256)
    )
    perturbation_step: float = Field(default=1e-2, gt=0)
    perturbation_max_steps: int = Field(default=200, gt=0)
    shuffle_burn_in: int = Field(default=5, ge=0)
    persist_samples: Literal["none", "first", "all"] = "first"
    threads: Optional[int] = Field(default=None, gt=0)

    @field_validator("selection_rates")
    @classmethod
    def check_rates(cls, value: List[float]) -> List[float]:
        if not value or any(not 0 < rate <= 1 for rate in value):
            raise ValueError("selection_rates must be a nonempty list of values in (0, 1]")
        return value

    @field_validator("q_values")
    @classmethod
    def check_q_values(cls, value: List[int]) -> List[int]:
        if not value or any(q < 0 for q in value):
            raise ValueError("q_values must be a nonempty list of nonnegative thresholds")
        return value

    @model_validator(mode="after")
    def check_names(self) -> Self:
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHOD_REGISTRY]
        if unknown:
            raise ValueError(f"Unknown methods {unknown}. Available methods: {', '.join(Config.get_method_names())}")
        unknown = [m for m in self.mappings if m not in MAPPING_REGISTRY]
        if unknown:
            raise ValueError(f"Unknown mappings {unknown}. Available mappings: {', '.join(Config.get_mapping_names())}")
        if any(b < 1 for b in self.budgets.values()):
            raise ValueError("budgets must be positive")
        if self.network.family == "scoring_system":
            raise ValueError("network must be a differentiable family (logistic or mlp)")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "r") as f:
            return cls.model_validate_json(f.read())

    def budget(self, method: str) -> int:
        return self.budgets.get(method, Config.get_budget(method, self.budget_scale))

    def output_root(self) -> Path:
        return Path(self.output_dir) if self.output_dir else Config.get_output_root()

    def worker_count(self) -> int:
        return self.threads or Config.get_default_threads()


def load_population_source(config: ExperimentConfig) -> CandidatePool:
    """The CSV population if one is configured, else a synthetic one."""
    q = config.q_values[0]
    if config.csv_path:
        return load_csv(config.csv_path, q)
    return generate_synthetic(GeneratorConfig.default(**config.generator), q)


def _selection_count(rate: float, n: int) -> int:
    return max(1, int(round(rate * n)))


def _train_task(config: ExperimentConfig, split: Split, task: Tuple[int, str]) -> Tuple[int, str, Optional[List[TrainedModel]], Optional[str]]:
    q, method = task
    seed = derive_seed(config.master_seed, TRAINING_STREAM, split.partition, q, list(METHOD_REGISTRY).index(method))
    try:
        models = train_method(
            method, split.with_threshold(q), config.budget(method), seed,
            network=config.network,
            scoring_system=config.scoring_system,
            epsilon=config.epsilon,
            perturbation_step=config.perturbation_step,
            perturbation_max_steps=config.perturbation_max_steps,
            shuffle_burn_in=config.shuffle_burn_in,
        )
        logger.info("Partition %d, q=%d, %s: %d candidate models", split.partition, q, method, len(models))
        return q, method, models, None
    except (MultiplicityError, FloatingPointError) as exc:
        logger.warning("Training failed for partition %d, q=%d, %s: %s", split.partition, q, method, exc)
        return q, method, None, f"{type(exc).__name__}: {exc}"


class DrawResult(BaseModel):
    records: List[Record] = Field(default_factory=list)
    failures: List[Record] = Field(default_factory=list)
    age_rows: List[Record] = Field(default_factory=list)


def evaluate_draw(
    config: ExperimentConfig,
    split: Split,
    q: int,
    candidates: Dict[str, List[TrainedModel]],
    samples_out: Optional[Dict[str, RashomonSample]] = None,
) -> DrawResult:
    """Filter each method's candidates on this draw's pool and evaluate every selection rate."""
    result = DrawResult()
    split_q = split.with_threshold(q)
    pool = split_q.pool
    samples: Dict[str, RashomonSample] = {}
    for method in config.methods:
        if method not in candidates:
            continue
        try:
            samples[method] = filter_epsilon(candidates[method], config.epsilon, pool, method)
        except MultiplicityError as exc:
            cell = {"partition": split.partition, "draw": split.draw, "q": q, "selection_rate": None}
            result.failures.append({**cell, "method": method, "stage": "filter", "error": f"{type(exc).__name__}: {exc}"})
    if samples_out is not None:
        samples_out.update(samples)

    for rate_index, rate in enumerate(config.selection_rates):
        cell: Record = {"partition": split.partition, "draw": split.draw, "q": q, "selection_rate": rate}
        failures: List[Record] = []
        results, errors = CELL.execute(
            cell=cell,
            pool=pool,
            k=_selection_count(rate, pool.n),
            samples=samples,
            mappings=config.mappings,
            lottery_draws=config.lottery_draws,
            lottery_seed=derive_seed(config.master_seed, LOTTERY_STREAM, split.partition, split.draw, q, rate_index),
            equal_utility_draws=config.equal_utility_draws,
            equal_utility_seed=derive_seed(config.master_seed, EQUAL_UTILITY_STREAM, split.partition, split.draw, q, rate_index),
            delta=config.delta,
            failures=failures,
        )
        result.records += results.get("method_records", []) + results.get("baseline_records", [])
        result.age_rows += results.get("age_histograms", [])
        result.failures += failures
        result.failures += [{**cell, "method": "", "stage": name, "error": message} for name, message in errors.items()]
    return result


def run_experiment(config: ExperimentConfig) -> ResultsArchive:
    """
    Execute the full protocol and write the results archive.

    Failures of individual stages are recorded in the manifest and the run
    continues.

    Returns:
        The written archive.
    """
    population = load_population_source(config)
    plan = config.split_plan
    archive = ResultsArchive(config.output_root())
    workers = config.worker_count()
    logger.info(
        "Running %d partitions x %d draws, rates %s, q %s, methods %s on %d workers",
        plan.num_partitions, plan.draws_per_partition, config.selection_rates, config.q_values, config.methods, workers,
    )

    records: List[Record] = []
    failures: List[Record] = []
    age_rows: List[Record] = []
    risk: Dict[str, Any] = {}
    tasks = [(q, method) for q in config.q_values for method in config.methods]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        for partition, group in itertools.groupby(make_splits(population, plan), key=lambda s: s.partition):
            splits = list(group)
            candidates: Dict[int, Dict[str, List[TrainedModel]]] = {q: {} for q in config.q_values}
            for q, method, models, error in executor.map(lambda task: _train_task(config, splits[0], task), tasks):
                if models is not None:
                    candidates[q][method] = models
                else:
                    failures.append({"partition": partition, "draw": None, "q": q, "selection_rate": None,
                                     "method": method, "stage": "train", "error": error})

            def evaluate(job: Tuple[Split, int]) -> Tuple[DrawResult, Dict[str, RashomonSample]]:
                split, q = job
                samples: Dict[str, RashomonSample] = {}
                return evaluate_draw(config, split, q, candidates[q], samples), samples

            jobs = [(split, q) for split in splits for q in config.q_values]
            for (split, q), (result, samples) in zip(jobs, executor.map(evaluate, jobs)):
                records += result.records
                failures += result.failures
                age_rows += result.age_rows
                first = split.partition == 0 and split.draw == 0
                if first:
                    split_q = split.with_threshold(q)
                    risk[f"q{q}"] = {
                        method: {
                            str(level): {race: (s.model_dump(mode="json") if s else None) for race, s in by_race.items()}
                            for level, by_race in risk_by_all_groups(sample, split_q.pool).items()
                        }
                        for method, sample in samples.items()
                    }
                if config.persist_samples == "all" or (config.persist_samples == "first" and first):
                    for method, sample in samples.items():
                        seeds = {
                            "training": seed_chain(derive_seed(config.master_seed, TRAINING_STREAM, split.partition, q,
                                                               list(METHOD_REGISTRY).index(method))),
                            "split": seed_chain(derive_seed(plan.seed, split.partition, split.draw)),
                        }
                        archive.write_sample(sample, method, q, split.partition, split.draw, seeds)
            logger.info("Finished partition %d (%d records so far, %d failures)", partition, len(records), len(failures))

    archive.write(
        records=records,
        failures=failures,
        age_rows=age_rows,
        risk=risk,
        manifest={
            "created_at": datetime.now(timezone.utc).isoformat(),
            "config": config.model_dump(mode="json"),
            "population": {"source": config.csv_path or "synthetic", "size": population.n},
            "repetitions": plan.repetitions,
            "aggregation": "mean and sample sd (ddof=1) across all partition x draw repetitions",
            "equal_utility_stats": "analytic (delta=0) and sampled",
        },
    )
    logger.info("Wrote archive to %s", archive.root)
    return archive
