"""
Per-cell evaluation steps.

A cell is one (partition, draw, q, selection rate). Training happens once per
(partition, q, method) in ``train_method``; everything downstream is a DAG
asset so a failure in one branch (for example an empty equal-utility space)
skips only the assets that depend on it.
"""
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np

from modules.config import MAPPING_REGISTRY, METHOD_REGISTRY, MappingConfig
from modules.multiplicity.combinatorics import (analytic_space_stats,
                                                reference_least_discriminatory,
                                                sample_equal_utility)
from modules.multiplicity.datasets import Split
from modules.multiplicity.domain import (AGE_BRACKETS, Allocation,
                                         CandidatePool, EqualUtilitySpace,
                                         RashomonSample)
from modules.multiplicity.exceptions import (EmptyInputError,
                                             InfeasibleSpaceError,
                                             MultiplicityError,
                                             UndefinedRatioError)
from modules.multiplicity.learners import TrainConfig, TrainedModel, train
from modules.multiplicity.mappings import LotteryConfig, apply_mapping, top_k
from modules.multiplicity.metrics import (age_distribution, age_entropy,
                                          allocation_utilities,
                                          ensemble_allocation,
                                          mean_age_entropy,
                                          min_threshold_ratio, outcome_profile,
                                          pairwise_consistency,
                                          threshold_test_ratio,
                                          unique_allocations)
from modules.multiplicity.rashomon import (BOOTSTRAP, FEATURE_SUBSETS,
                                           PERTURBATION, SHUFFLE,
                                           sample_bootstrap,
                                           sample_feature_subsets,
                                           sample_shuffle,
                                           sample_weight_perturbation)
from modules.multiplicity.runner.dag import DAG
from modules.multiplicity.seeding import (SeedLike, child_seed, int_seed,
                                          seed_chain)

logger = logging.getLogger(__name__)

EQUAL_UTILITY = "equal_utility"
Record = Dict[str, Any]

CELL = DAG()


def train_method(
    method: str,
    split: Split,
    budget: int,
    seed: SeedLike,
    network: TrainConfig,
    scoring_system: TrainConfig,
    epsilon: float,
    perturbation_step: float,
    perturbation_max_steps: int,
    shuffle_burn_in: int,
) -> List[TrainedModel]:
    """
    Produce the candidate models of one sampling method on one split.

    The weight-perturbation candidates include the unperturbed base network.
    """
    if method == FEATURE_SUBSETS:
        return sample_feature_subsets(scoring_system, split, budget, seed)
    if method == BOOTSTRAP:
        return sample_bootstrap(network, split, budget, seed)
    if method == SHUFFLE:
        return sample_shuffle(network, split, budget, seed, burn_in=shuffle_burn_in)
    if method == PERTURBATION:
        base_seed = child_seed(seed, 0)
        base = train(network.model_copy(update={"seed": int_seed(base_seed)}), split.train, split.validation)
        base = base.with_tags(method_tag=PERTURBATION, seed_chain=tuple(seed_chain(base_seed)))
        perturbed = sample_weight_perturbation(
            base, split, budget,
            step=perturbation_step,
            epsilon=epsilon,
            rng_seed=child_seed(seed, 1),
            max_steps=perturbation_max_steps,
        )
        return [base] + perturbed
    raise ValueError(f"Unknown method '{method}'. Available methods: {', '.join(METHOD_REGISTRY)}")


def lottery_config(entry: MappingConfig, k: int, n: int) -> LotteryConfig:
    if entry.kind == "boundary":
        return LotteryConfig.boundary(k, entry.k_fraction, entry.n_fraction)
    if entry.kind == "sigmoid_logit":
        return LotteryConfig.sigmoid_logit(k, n, entry.v)
    return LotteryConfig()


def _nan(value: Optional[float]) -> float:
    return math.nan if value is None else float(value)


def allocation_set_metrics(allocs: List[Allocation], pool: CandidatePool) -> Dict[str, float]:
    """Utility, diversity and fairness metrics of one set of allocations."""
    values: Dict[str, float] = {
        "recovered_allocations": float(unique_allocations(allocs)),
        "utility": float(allocation_utilities(allocs, pool).mean()),
        "min_threshold_ratio": _nan(min_threshold_ratio(allocs, pool)),
        "pairwise_consistency": pairwise_consistency(allocs) if len(allocs) > 1 else math.nan,
        "age_entropy": mean_age_entropy(allocs, pool),
    }
    if pool.n_prime:
        profile = outcome_profile(allocs, pool)
        values.update(profile.model_dump())
    else:
        values.update(systemic_rejection=math.nan, multiple_outcomes=math.nan, always_accepted=math.nan)
    return values


def _records(cell: Record, method: str, mapping: str, values: Dict[str, float]) -> List[Record]:
    return [{**cell, "method": method, "mapping": mapping, "metric": metric, "value": value} for metric, value in values.items()]


def _failure(cell: Record, method: str, stage: str, exc: BaseException) -> Record:
    return {**cell, "method": method, "stage": stage, "error": f"{type(exc).__name__}: {exc}"}


@CELL.asset
def top_k_allocations(samples: Dict[str, RashomonSample], k: int) -> Dict[str, List[Allocation]]:
    return {method: [top_k(member, k) for member in sample.members] for method, sample in samples.items()}


@CELL.asset
def lottery_allocations(
    samples: Dict[str, RashomonSample],
    k: int,
    mappings: List[str],
    lottery_draws: int,
    lottery_seed: SeedLike,
    cell: Record,
    failures: List[Record],
) -> Dict[str, Dict[str, List[Allocation]]]:
    """``lottery_draws`` allocations per randomised mapping, from each method's best member."""
    method_names = list(METHOD_REGISTRY)
    mapping_names = list(MAPPING_REGISTRY)
    out: Dict[str, Dict[str, List[Allocation]]] = {}
    for method, sample in samples.items():
        best = min(sample.members, key=lambda member: member.validation_loss)
        out[method] = {}
        for name in mappings:
            entry = MAPPING_REGISTRY[name]
            if entry.kind == "top_k":
                continue
            try:
                config = lottery_config(entry, k, best.n)
                seed = child_seed(lottery_seed, method_names.index(method), mapping_names.index(name))
                out[method][name] = [apply_mapping(best, k, config, child_seed(seed, t)) for t in range(lottery_draws)]
            except MultiplicityError as exc:
                logger.warning("Mapping %s failed for %s: %s", name, method, exc)
                failures.append(_failure(cell, method, f"mapping:{name}", exc))
    return out


@CELL.asset
def ensemble_allocations(samples: Dict[str, RashomonSample], k: int) -> Dict[str, Allocation]:
    return {method: ensemble_allocation(sample, k) for method, sample in samples.items()}


@CELL.asset
def reference_k_prime(top_k_allocations: Dict[str, List[Allocation]], pool: CandidatePool, k: int) -> int:
    """⌊mean over methods of the mean recovered top-k utility · k⌋."""
    recovered = [allocs for allocs in top_k_allocations.values() if allocs]
    if not recovered:
        raise EmptyInputError("no method recovered a top-k allocation")
    mean_utility = float(np.mean([allocation_utilities(allocs, pool).mean() for allocs in recovered]))
    return int(math.floor(mean_utility * k + 1e-9))


@CELL.asset
def equal_utility_space(pool: CandidatePool, k: int, reference_k_prime: int, delta: int) -> EqualUtilitySpace:
    space = EqualUtilitySpace(n=pool.n, k=k, n_prime=pool.n_prime, k_prime=reference_k_prime, delta=delta)
    if space.is_empty:
        raise InfeasibleSpaceError(f"equal-utility space is empty: {space}")
    return space


@CELL.asset
def equal_utility_allocations(
    equal_utility_space: EqualUtilitySpace,
    pool: CandidatePool,
    equal_utility_draws: int,
    equal_utility_seed: SeedLike,
) -> List[Allocation]:
    return [
        sample_equal_utility(equal_utility_space, child_seed(equal_utility_seed, t), pool.qualified)
        for t in range(equal_utility_draws)
    ]


@CELL.asset
def reference_allocation(pool: CandidatePool, k: int, reference_k_prime: int) -> Allocation:
    return reference_least_discriminatory(pool, k, reference_k_prime)


@CELL.asset
def method_records(
    cell: Record,
    pool: CandidatePool,
    samples: Dict[str, RashomonSample],
    top_k_allocations: Dict[str, List[Allocation]],
    lottery_allocations: Dict[str, Dict[str, List[Allocation]]],
    ensemble_allocations: Dict[str, Allocation],
    failures: List[Record],
) -> List[Record]:
    records: List[Record] = []
    for method, sample in samples.items():
        try:
            records += _records(cell, method, "top_k", {
                "rashomon_models": float(len(sample)),
                "validation_loss": float(np.mean([m.validation_loss for m in sample.members])),
                **allocation_set_metrics(top_k_allocations[method], pool),
            })
            for mapping, allocs in lottery_allocations.get(method, {}).items():
                records += _records(cell, method, mapping, allocation_set_metrics(allocs, pool))
            ensemble = ensemble_allocations[method]
            try:
                ensemble_ratio = threshold_test_ratio(ensemble, pool)
            except UndefinedRatioError:
                ensemble_ratio = math.nan
            records += _records(cell, method, "ensemble", {
                "ensemble_age_entropy": age_entropy(ensemble, pool),
                "ensemble_threshold_ratio": ensemble_ratio,
            })
        except MultiplicityError as exc:
            logger.warning("Metrics failed for %s: %s", method, exc)
            failures.append(_failure(cell, method, "metrics", exc))
    return records


@CELL.asset
def baseline_records(
    cell: Record,
    pool: CandidatePool,
    reference_k_prime: int,
    equal_utility_space: EqualUtilitySpace,
    equal_utility_allocations: List[Allocation],
    reference_allocation: Allocation,
) -> List[Record]:
    values: Dict[str, float] = {"reference_k_prime": float(reference_k_prime)}
    if equal_utility_space.delta == 0:
        values["analytic_consistency"] = analytic_space_stats(equal_utility_space).pairwise_consistency
    try:
        values["reference_threshold_ratio"] = threshold_test_ratio(reference_allocation, pool)
    except UndefinedRatioError:
        values["reference_threshold_ratio"] = math.nan
    values["reference_age_entropy"] = age_entropy(reference_allocation, pool)
    records = _records(cell, EQUAL_UTILITY, "reference", values)
    records += _records(cell, EQUAL_UTILITY, "uniform_sample", allocation_set_metrics(equal_utility_allocations, pool))
    return records


@CELL.asset
def age_histograms(
    cell: Record,
    pool: CandidatePool,
    ensemble_allocations: Dict[str, Allocation],
    equal_utility_allocations: List[Allocation],
) -> List[Record]:
    """Share of selected individuals per age bracket: each method's ensemble vs sampled equal-utility allocations."""
    rows: List[Record] = []
    for method, alloc in ensemble_allocations.items():
        counts = age_distribution(alloc, pool)
        rows += [
            {**cell, "source": f"ensemble:{method}", "age_bracket": bracket, "share": float(c) / alloc.k}
            for bracket, c in zip(AGE_BRACKETS, counts)
        ]
    shares = np.mean([age_distribution(a, pool) / a.k for a in equal_utility_allocations], axis=0)
    rows += [
        {**cell, "source": EQUAL_UTILITY, "age_bracket": bracket, "share": float(s)}
        for bracket, s in zip(AGE_BRACKETS, shares)
    ]
    return rows
