"""
Empirical Rashomon-set sampling.

Four ways of producing many near-optimal models (feature subsets, bootstrap
resamples, per-epoch snapshots under data shuffling, adversarial weight
perturbation) and the ε filter that keeps those within ε of the best
validation loss of their method.
"""
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from modules.multiplicity.datasets import Split
from modules.multiplicity.domain import CandidatePool, PredictionVector, RashomonSample
from modules.multiplicity.exceptions import EmptyInputError
from modules.multiplicity.learners import (TrainConfig, TrainedModel,
                                           cross_entropy, finalize_model,
                                           flatten, iter_training, logits,
                                           predict, score_gradient, train,
                                           unflatten)
from modules.multiplicity.seeding import (SeedLike, child_seed, int_seed,
                                          make_rng, seed_chain)

logger = logging.getLogger(__name__)

FEATURE_SUBSETS = "feature_subsets"
BOOTSTRAP = "bootstrap"
SHUFFLE = "shuffle"
PERTURBATION = "perturbation"
METHODS = (FEATURE_SUBSETS, BOOTSTRAP, SHUFFLE, PERTURBATION)

DEFAULT_EPSILON = 0.01
SHUFFLE_BURN_IN = 5
PERTURBATION_STEP = 1e-2
PERTURBATION_MAX_STEPS = 200
# Above this many subsets, distinct subsets are found by rejection instead of enumeration
ENUMERATION_LIMIT = 20000

T = TypeVar("T")
R = TypeVar("R")


def _map(func: Callable[[T], R], items: Sequence[T], max_workers: Optional[int]) -> List[R]:
    """Order-preserving map, threaded when max_workers > 1."""
    if max_workers and max_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]


def _dedupe(models: List[TrainedModel]) -> List[TrainedModel]:
    seen: Dict[str, TrainedModel] = {}
    for model in models:
        if model.model_id in seen and np.array_equal(model.parameter_vector(), seen[model.model_id].parameter_vector()):
            continue
        seen.setdefault(model.model_id, model)
    kept = list(seen.values())
    if len(kept) < len(models):
        logger.debug("Dropped %d models with identical parameters", len(models) - len(kept))
    return kept


def draw_feature_subsets(dimension: int, size: int, budget: int, rng: np.random.Generator) -> List[tuple]:
    """
    Distinct sorted feature subsets of a fixed size.

    Returns at most C(dimension, size) subsets; a larger budget is truncated
    with a warning.
    """
    size = min(size, dimension)
    available = math.comb(dimension, size)
    if budget > available:
        logger.warning(
            "Requested %d feature subsets but only %d distinct subsets of size %d exist; truncating",
            budget, available, size,
        )
        budget = available
    if available <= ENUMERATION_LIMIT:
        every = list(itertools.combinations(range(dimension), size))
        picks = rng.choice(available, size=budget, replace=False)
        return [every[int(i)] for i in picks]
    subsets: List[tuple] = []
    seen = set()
    while len(subsets) < budget:
        subset = tuple(sorted(int(i) for i in rng.choice(dimension, size=size, replace=False)))
        if subset not in seen:
            seen.add(subset)
            subsets.append(subset)
    return subsets


def sample_feature_subsets(
    base_config: TrainConfig,
    data: Split,
    budget: int,
    rng_seed: SeedLike,
    max_workers: Optional[int] = None,
) -> List[TrainedModel]:
    """
    Train one sparse scoring system per random feature subset.

    Args:
        base_config: Template configuration; family is forced to scoring_system.
        data: Training and validation splits.
        budget: Number of distinct subsets (size ``max_features``) to try.
        rng_seed: Seed for subset choice and per-model training.
        max_workers: Train models on this many threads.

    Returns:
        Models with pairwise distinct parameter vectors.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = make_rng(child_seed(rng_seed, 0))
    dimension = data.train.dimension
    subsets = draw_feature_subsets(dimension, base_config.max_features, budget, rng)

    def fit(task: tuple) -> TrainedModel:
        index, subset = task
        seed = child_seed(rng_seed, 1, index)
        mask = tuple(i in subset for i in range(dimension))
        config = base_config.model_copy(update={"family": "scoring_system", "feature_mask": mask, "seed": int_seed(seed)})
        model = train(config, data.train, data.validation)
        return model.with_tags(method_tag=FEATURE_SUBSETS, seed_chain=tuple(seed_chain(seed)))

    models = _map(fit, list(enumerate(subsets)), max_workers)
    logger.info("Trained %d feature-subset models", len(models))
    return _dedupe(models)


def sample_bootstrap(
    base_config: TrainConfig,
    data: Split,
    budget: int,
    rng_seed: SeedLike,
    max_workers: Optional[int] = None,
) -> List[TrainedModel]:
    """Train ``budget`` models, each on a same-size with-replacement resample of the training split."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    m = data.train.n

    def fit(index: int) -> TrainedModel:
        seed = child_seed(rng_seed, index)
        rows = make_rng(child_seed(seed, 0)).integers(0, m, size=m)
        config = base_config.model_copy(update={"seed": int_seed(child_seed(seed, 1))})
        model = train(config, data.train.subset(rows), data.validation)
        return model.with_tags(method_tag=BOOTSTRAP, seed_chain=tuple(seed_chain(seed)))

    models = _map(fit, list(range(budget)), max_workers)
    logger.info("Trained %d bootstrap models", len(models))
    return _dedupe(models)


def sample_shuffle(
    base_config: TrainConfig,
    data: Split,
    epochs: int,
    rng_seed: SeedLike,
    burn_in: int = SHUFFLE_BURN_IN,
) -> List[TrainedModel]:
    """
    One training run with a fresh data order every epoch; each post-burn-in epoch is a model.

    Returns:
        Exactly ``epochs`` snapshots, in epoch order, each tagged with its epoch.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    config = base_config.model_copy(update={"epochs": burn_in + epochs, "seed": int_seed(rng_seed)})
    X, y = data.train.features, data.train.qualified.astype(float)
    chain = tuple(seed_chain(rng_seed))
    snapshots: List[TrainedModel] = []
    for epoch, params, _ in iter_training(config, X, y):
        if epoch <= burn_in:
            continue
        snapshots.append(finalize_model(
            config, params, data.train, data.validation,
            method_tag=SHUFFLE, seed_chain=chain, epoch=epoch,
        ))
    logger.info("Collected %d shuffle snapshots after %d burn-in epochs", len(snapshots), burn_in)
    return snapshots


def _validation_loss(family: str, params: Dict[str, np.ndarray], validation: CandidatePool) -> float:
    return cross_entropy(expit(logits(family, params, validation.features)), validation.qualified)


def perturb_towards_point(
    base_model: TrainedModel,
    data: Split,
    point: int,
    step: float,
    bound: float,
    max_steps: int,
) -> Optional[Dict[str, np.ndarray]]:
    """
    Ascend one validation point's predicted score from the base parameters.

    Each step moves ``step`` along the normalised score gradient. Returns the
    last parameters whose validation loss stays within ``bound``, or None if
    the first step already exceeds it or the gradient vanishes.
    """
    template = base_model.parameters
    theta = flatten(template)
    x = data.validation.features[point]
    last: Optional[Dict[str, np.ndarray]] = None
    current = base_model
    for step_index in range(max_steps):
        gradient = flatten(score_gradient(current, x))
        norm = float(np.linalg.norm(gradient))
        if norm == 0.0:
            if step_index == 0:
                logger.warning("Zero score gradient at validation point %d; skipping", point)
            break
        theta = theta + step * gradient / norm
        params = unflatten(theta, template)
        if _validation_loss(base_model.family, params, data.validation) > bound:
            break
        last = params
        current = base_model.model_copy(update={"parameters": params})
    return last


def sample_weight_perturbation(
    base_model: TrainedModel,
    data: Split,
    budget: int,
    step: float = PERTURBATION_STEP,
    epsilon: float = DEFAULT_EPSILON,
    rng_seed: SeedLike = 0,
    max_steps: int = PERTURBATION_MAX_STEPS,
    best_loss: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> List[TrainedModel]:
    """
    Adversarially perturb a trained model towards individual validation points.

    Args:
        base_model: Trained logistic or mlp model.
        data: Training and validation splits.
        budget: Number of validation points (drawn without replacement).
        step: Length of each normalised ascent step.
        epsilon: Loss tolerance above ``best_loss``.
        rng_seed: Seed for the choice of points.
        max_steps: Ascent steps per point.
        best_loss: Reference loss; defaults to the base model's validation loss.
        max_workers: Perturb points on this many threads.

    Returns:
        One model per point that admitted at least one in-bound step.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if base_model.family not in ("logistic", "mlp"):
        raise ValueError(f"weight perturbation needs a differentiable model, got '{base_model.family}'")
    reference = base_model.validation_loss if best_loss is None else best_loss
    bound = reference + epsilon
    n_validation = data.validation.n
    if budget > n_validation:
        logger.warning("Perturbation budget %d exceeds %d validation points; truncating", budget, n_validation)
        budget = n_validation
    points = make_rng(rng_seed).choice(n_validation, size=budget, replace=False)
    chain = tuple(seed_chain(rng_seed))

    def perturb(point: Any) -> Optional[TrainedModel]:
        params = perturb_towards_point(base_model, data, int(point), step, bound, max_steps)
        if params is None:
            return None
        return finalize_model(
            base_model.config, params, data.train, data.validation,
            method_tag=PERTURBATION, seed_chain=chain + (int(point),),
        )

    models = [m for m in _map(perturb, list(points), max_workers) if m is not None]
    logger.info("Perturbation kept %d of %d points within loss bound %.5f", len(models), budget, bound)
    return models


Candidate = Union[TrainedModel, PredictionVector]


def filter_epsilon(
    models: Union[Sequence[Candidate], RashomonSample],
    epsilon: float = DEFAULT_EPSILON,
    pool: Optional[CandidatePool] = None,
    method_tag: Optional[str] = None,
) -> RashomonSample:
    """
    Keep candidates whose validation loss is within ε of the best candidate.

    Args:
        models: Trained models, prediction vectors, or an existing sample to re-filter.
        epsilon: Loss tolerance.
        pool: Deployment pool on which trained models are scored (required for TrainedModel inputs).
        method_tag: Label of the sample; defaults to the first candidate's tag.

    Returns:
        The RashomonSample of retained prediction vectors, in input order.

    Raises:
        EmptyInputError: If there are no candidates.
    """
    if isinstance(models, RashomonSample):
        bound = models.best_loss + epsilon
        members = tuple(m for m in models.members if m.validation_loss <= bound)
        return RashomonSample(members=members, epsilon=epsilon, best_loss=models.best_loss, method_tag=models.method_tag)

    if not models:
        raise EmptyInputError("cannot filter an empty set of models")
    best = min(m.validation_loss for m in models)
    bound = best + epsilon
    kept = [m for m in models if m.validation_loss <= bound]
    members: List[PredictionVector] = []
    for model in kept:
        if isinstance(model, TrainedModel):
            if pool is None:
                raise ValueError("a deployment pool is required to score trained models")
            members.append(predict(model, pool))
        else:
            members.append(model)
    tag = method_tag if method_tag is not None else (models[0].method_tag or "")
    logger.debug("epsilon filter kept %d of %d %s models", len(members), len(models), tag)
    return RashomonSample(members=tuple(members), epsilon=epsilon, best_loss=best, method_tag=tag)


def save_rashomon_sample(sample: RashomonSample, directory: Union[str, Path], seeds: Optional[Dict[str, Any]] = None) -> Path:
    """
    Persist a sample as ``manifest.json`` and ``scores.csv`` (rows = models, columns = individuals).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "method": sample.method_tag,
        "epsilon": sample.epsilon,
        "best_loss": sample.best_loss,
        "members": [{"model_id": m.model_id, "validation_loss": m.validation_loss} for m in sample.members],
        "seeds": seeds or {},
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    n = sample.members[0].n if sample.members else 0
    frame = pd.DataFrame(sample.score_matrix.reshape(len(sample), n), columns=[f"i{j}" for j in range(n)])
    frame.insert(0, "model_id", [m.model_id for m in sample.members])
    frame.to_csv(directory / "scores.csv", index=False, float_format="%.17g")
    return directory


def load_rashomon_sample(directory: Union[str, Path]) -> RashomonSample:
    directory = Path(directory)
    with open(directory / "manifest.json", "r") as f:
        manifest = json.load(f)
    frame = pd.read_csv(directory / "scores.csv", dtype={"model_id": str}, float_precision="round_trip")
    scores = frame.drop(columns=["model_id"]).to_numpy(dtype=float)
    members = tuple(
        PredictionVector(
            scores=scores[row],
            validation_loss=entry["validation_loss"],
            method_tag=manifest["method"],
            model_id=entry["model_id"],
        )
        for row, entry in enumerate(manifest["members"])
    )
    return RashomonSample(
        members=members,
        epsilon=manifest["epsilon"],
        best_loss=manifest["best_loss"],
        method_tag=manifest["method"],
    )
