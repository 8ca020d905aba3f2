"""
Prediction-to-allocation mappings: deterministic top-k, decision-boundary
randomisation and the sigmoid-logit weighted lottery.
"""
import logging
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit, logit
from typing_extensions import Self

from modules.multiplicity.domain import Allocation, PredictionVector
from modules.multiplicity.exceptions import InfeasibleSpaceError
from modules.multiplicity.seeding import SeedLike, make_rng

logger = logging.getLogger(__name__)

WEIGHT_CLAMP = 1e-9

MappingKind = Literal["top_k", "boundary", "sigmoid_logit"]


def _fraction_of(k: int, fraction: float) -> int:
    # round to nearest, at least one
    return max(1, int(round(fraction * k)))


class LotteryConfig(BaseModel):
    """
    Parameters of a mapping.

    Attributes:
        kind: top_k, boundary or sigmoid_logit.
        k_tilde: Resources given by lottery (boundary only).
        n_tilde: Candidates eligible for the lottery (boundary only).
        mu: Threshold of the sigmoid-logit transform.
        v: Steepness of the sigmoid-logit transform.
        seed: Seed of the lottery.
    """
    model_config = ConfigDict(frozen=True)

    kind: MappingKind = "top_k"
    k_tilde: int = Field(default=0, ge=0)
    n_tilde: int = Field(default=0, ge=0)
    mu: float = Field(default=0.5, gt=0, lt=1)
    v: float = Field(default=1.0, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def check_lottery(self) -> Self:
        if self.kind == "boundary" and self.k_tilde > self.n_tilde:
            raise ValueError(f"k_tilde={self.k_tilde} exceeds n_tilde={self.n_tilde}")
        return self

    @classmethod
    def boundary(cls, k: int, k_fraction: float = 0.25, n_fraction: float = 0.50, seed: int = 0) -> "LotteryConfig":
        """Partial lottery of round(k_fraction·k) resources over the next round(n_fraction·k) ranks."""
        return cls(kind="boundary", k_tilde=_fraction_of(k, k_fraction), n_tilde=_fraction_of(k, n_fraction), seed=seed)

    @classmethod
    def sigmoid_logit(cls, k: int, n: int, v: float = 2.0, seed: int = 0) -> "LotteryConfig":
        """
        Sigmoid-logit lottery with threshold μ = 1 − k/n.

        Raises:
            InfeasibleSpaceError: Unless 0 < k < n.
        """
        if not 0 < k < n:
            raise InfeasibleSpaceError(f"sigmoid-logit lottery needs 0 < k < n, got k={k}, n={n}")
        return cls(kind="sigmoid_logit", mu=1.0 - k / n, v=v, seed=seed)

    def describe(self) -> dict:
        if self.kind == "boundary":
            return {"mapping": self.kind, "k_tilde": self.k_tilde, "n_tilde": self.n_tilde, "seed": self.seed}
        if self.kind == "sigmoid_logit":
            return {"mapping": self.kind, "mu": self.mu, "v": self.v, "seed": self.seed}
        return {"mapping": self.kind}


def ranking(scores: np.ndarray) -> np.ndarray:
    """Ids ordered by descending score, ties by ascending id."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(scores.shape[0]), -scores))


def top_k(pred: PredictionVector, k: int) -> Allocation:
    """
    Select the k highest-scored individuals.

    Raises:
        InfeasibleSpaceError: If k is not in (0, n].
    """
    if k <= 0 or k > pred.n:
        raise InfeasibleSpaceError(f"cannot select k={k} of n={pred.n}")
    return Allocation.from_indices(ranking(pred.scores)[:k], pred.n, mapping="top_k", model_id=pred.model_id)


def weighted_sample_without_replacement(weights: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw ``count`` positions one at a time, each with probability proportional
    to its weight among those not yet drawn.

    A zero total weight falls back to uniform weights with a warning.
    """
    remaining = np.array(weights, dtype=float)
    if count > remaining.shape[0]:
        raise InfeasibleSpaceError(f"cannot draw {count} of {remaining.shape[0]} candidates")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if np.any(remaining < 0) or not np.all(np.isfinite(remaining)):
        raise ValueError("lottery weights must be finite and nonnegative")
    if remaining.sum() <= 0.0:
        logger.warning("Lottery weights sum to zero; falling back to uniform weights")
        remaining = np.ones_like(remaining)
    chosen = np.empty(count, dtype=np.int64)
    for draw in range(count):
        total = remaining.sum()
        if total <= 0.0:
            # only zero-weight candidates are left
            logger.warning("Lottery weights exhausted after %d draws; drawing the rest uniformly", draw)
            remaining = np.where(np.isin(np.arange(remaining.shape[0]), chosen[:draw]), 0.0, 1.0)
            total = remaining.sum()
        cumulative = np.cumsum(remaining)
        position = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
        position = min(position, remaining.shape[0] - 1)
        while remaining[position] == 0.0:
            position -= 1
        chosen[draw] = position
        remaining[position] = 0.0
    return chosen


def boundary_lottery(pred: PredictionVector, k: int, config: LotteryConfig, rng_seed: Optional[SeedLike] = None) -> Allocation:
    """
    Decision-boundary randomisation.

    The top k − k̃ ranks are selected outright; the remaining k̃ slots are
    drawn from ranks k − k̃ + 1 .. k − k̃ + ñ with weights proportional to
    the raw scores.

    Raises:
        InfeasibleSpaceError: If k̃ > k or the lottery window runs past n.
    """
    if k <= 0 or k > pred.n:
        raise InfeasibleSpaceError(f"cannot select k={k} of n={pred.n}")
    if config.k_tilde > k:
        raise InfeasibleSpaceError(f"k_tilde={config.k_tilde} exceeds k={k}")
    fixed = k - config.k_tilde
    if fixed + config.n_tilde > pred.n:
        raise InfeasibleSpaceError(f"lottery window k - k_tilde + n_tilde = {fixed + config.n_tilde} exceeds n={pred.n}")
    order = ranking(pred.scores)
    window = order[fixed:fixed + config.n_tilde]
    rng = make_rng(config.seed if rng_seed is None else rng_seed)
    drawn = window[weighted_sample_without_replacement(pred.scores[window], config.k_tilde, rng)]
    return Allocation.from_indices(
        np.concatenate([order[:fixed], drawn]), pred.n, model_id=pred.model_id, **config.describe()
    )


def sigmoid_logit_weight(x: np.ndarray | float, mu: float, v: float) -> np.ndarray | float:
    """
    f(x; μ, v) = 1 / (1 + (x(1−μ) / (μ(1−x)))^(−v)), evaluated as σ(v·(logit x − logit μ)).

    Scores are clamped to [1e-9, 1 − 1e-9] first.
    """
    clipped = np.clip(x, WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)
    value = expit(v * (logit(clipped) - logit(mu)))
    return float(value) if np.ndim(value) == 0 else value


def sigmoid_logit_lottery(pred: PredictionVector, k: int, config: LotteryConfig, rng_seed: Optional[SeedLike] = None) -> Allocation:
    """Weighted lottery over all n individuals with sigmoid-logit weights."""
    if k <= 0 or k > pred.n:
        raise InfeasibleSpaceError(f"cannot select k={k} of n={pred.n}")
    weights = np.asarray(sigmoid_logit_weight(pred.scores, config.mu, config.v), dtype=float)
    rng = make_rng(config.seed if rng_seed is None else rng_seed)
    chosen = weighted_sample_without_replacement(weights, k, rng)
    return Allocation.from_indices(chosen, pred.n, model_id=pred.model_id, **config.describe())


def apply_mapping(pred: PredictionVector, k: int, config: LotteryConfig, rng_seed: Optional[SeedLike] = None) -> Allocation:
    """Dispatch on ``config.kind``."""
    if config.kind == "boundary":
        return boundary_lottery(pred, k, config, rng_seed)
    if config.kind == "sigmoid_logit":
        return sigmoid_logit_lottery(pred, k, config, rng_seed)
    return top_k(pred, k)
