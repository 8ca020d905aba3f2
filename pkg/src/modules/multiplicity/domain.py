"""
Core value types for allocation multiplicity.

Every type is a pydantic model. Array-valued fields are stored as read-only
numpy arrays so instances can be shared across worker threads.
"""
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from modules.multiplicity.exceptions import DegenerateInputError, DimensionError


class Race(str, Enum):
    BLACK = "Black"
    WHITE = "White"
    OTHER = "Other"


# Index in this tuple is the integer code stored in CandidatePool.race
RACES: Tuple[Race, ...] = (Race.BLACK, Race.WHITE, Race.OTHER)

AGE_BRACKETS: Tuple[str, ...] = ("18-24", "25-34", "35-44", "45-54", "55-64", "65-74", "75+")


def _readonly(values: Any, dtype: Any) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class Individual(BaseModel):
    """
    One allocation candidate.

    Attributes:
        id: Position of the individual in its pool, in [0, n).
        features: Model features (ingestion schema, race excluded).
        qualified: Ground-truth qualification o*_i.
        race: Black, White or Other.
        age_bracket: One of the seven age brackets.
        chronic_illnesses: Active chronic illnesses in the outcome year.
    """
    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0)
    features: Tuple[float, ...]
    qualified: bool
    race: Race
    age_bracket: str
    chronic_illnesses: int = Field(ge=0)

    @field_validator("age_bracket")
    @classmethod
    def check_age_bracket(cls, value: str) -> str:
        if value not in AGE_BRACKETS:
            raise ValueError(f"Unknown age bracket '{value}'. Expected one of: {', '.join(AGE_BRACKETS)}")
        return value


class CandidatePool(BaseModel):
    """
    Columnar collection of candidates.

    Qualification is derived from ``chronic_illnesses >= q`` so the
    ``qualified`` flags can never disagree with the threshold.

    Attributes:
        features: (n, d) feature matrix.
        chronic_illnesses: Outcome-year illness counts, length n.
        race: Integer race codes (index into RACES), length n.
        age_bracket: Integer age-bracket codes (index into AGE_BRACKETS), length n.
        q: Qualification threshold.
        feature_names: Column names of ``features``.
        source_index: Row ids in the population this pool was drawn from.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray
    chronic_illnesses: np.ndarray
    race: np.ndarray
    age_bracket: np.ndarray
    q: int = Field(ge=0)
    feature_names: Tuple[str, ...] = ()
    source_index: Optional[np.ndarray] = None

    @field_validator("features", mode="before")
    @classmethod
    def coerce_features(cls, value: Any) -> np.ndarray:
        arr = _readonly(value, float)
        if arr.ndim == 1 and arr.size == 0:
            arr = _readonly(arr.reshape(0, 0), float)
        if arr.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        return arr

    @field_validator("chronic_illnesses", "source_index", mode="before")
    @classmethod
    def coerce_counts(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        return _readonly(value, np.int64)

    @field_validator("race", "age_bracket", mode="before")
    @classmethod
    def coerce_codes(cls, value: Any) -> np.ndarray:
        return _readonly(value, np.int8)

    @model_validator(mode="after")
    def check_shapes(self) -> Self:
        n = self.chronic_illnesses.shape[0]
        for name in ("race", "age_bracket"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if self.features.shape[0] != n:
            raise ValueError(f"features must have {n} rows")
        if self.feature_names and len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names must match the feature dimension")
        if self.source_index is not None and self.source_index.shape != (n,):
            raise ValueError(f"source_index must have length {n}")
        if n and np.any(self.chronic_illnesses < 0):
            raise ValueError("chronic_illnesses must be nonnegative")
        if n and (self.race.min() < 0 or self.race.max() >= len(RACES)):
            raise ValueError("race codes out of range")
        if n and (self.age_bracket.min() < 0 or self.age_bracket.max() >= len(AGE_BRACKETS)):
            raise ValueError("age bracket codes out of range")
        return self

    @classmethod
    def from_individuals(
        cls,
        individuals: Sequence[Individual],
        q: int,
        feature_names: Sequence[str] = (),
    ) -> "CandidatePool":
        """Build a pool from Individual records, checking each qualification flag against q."""
        for position, person in enumerate(individuals):
            if person.id != position:
                raise ValueError(f"individual at position {position} has id {person.id}")
            if person.qualified != (person.chronic_illnesses >= q):
                raise ValueError(
                    f"individual {person.id} has qualified={person.qualified} "
                    f"but {person.chronic_illnesses} illnesses with q={q}"
                )
        dim = len(individuals[0].features) if individuals else 0
        return cls(
            features=np.array([p.features for p in individuals], dtype=float).reshape(len(individuals), dim),
            chronic_illnesses=[p.chronic_illnesses for p in individuals],
            race=[RACES.index(p.race) for p in individuals],
            age_bracket=[AGE_BRACKETS.index(p.age_bracket) for p in individuals],
            q=q,
            feature_names=tuple(feature_names),
        )

    @property
    def n(self) -> int:
        return int(self.chronic_illnesses.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def qualified(self) -> np.ndarray:
        return _readonly(self.chronic_illnesses >= self.q, bool)

    @property
    def n_prime(self) -> int:
        return int(self.qualified.sum())

    @cached_property
    def individuals(self) -> Tuple[Individual, ...]:
        return tuple(
            Individual(
                id=i,
                features=tuple(float(x) for x in self.features[i]),
                qualified=bool(self.qualified[i]),
                race=RACES[int(self.race[i])],
                age_bracket=AGE_BRACKETS[int(self.age_bracket[i])],
                chronic_illnesses=int(self.chronic_illnesses[i]),
            )
            for i in range(self.n)
        )

    def subset(self, indices: Sequence[int] | np.ndarray) -> "CandidatePool":
        """Pool restricted to ``indices`` (positions), renumbered from 0."""
        idx = np.asarray(indices, dtype=np.int64)
        source = self.source_index if self.source_index is not None else np.arange(self.n)
        return CandidatePool(
            features=self.features[idx],
            chronic_illnesses=self.chronic_illnesses[idx],
            race=self.race[idx],
            age_bracket=self.age_bracket[idx],
            q=self.q,
            feature_names=self.feature_names,
            source_index=source[idx],
        )

    def with_threshold(self, q: int) -> "CandidatePool":
        """Same individuals, qualification recomputed for threshold q."""
        if q == self.q:
            return self
        return CandidatePool(
            features=self.features,
            chronic_illnesses=self.chronic_illnesses,
            race=self.race,
            age_bracket=self.age_bracket,
            q=q,
            feature_names=self.feature_names,
            source_index=self.source_index,
        )

    def with_features(self, features: np.ndarray) -> "CandidatePool":
        return CandidatePool(
            features=features,
            chronic_illnesses=self.chronic_illnesses,
            race=self.race,
            age_bracket=self.age_bracket,
            q=self.q,
            feature_names=self.feature_names,
            source_index=self.source_index,
        )


class Allocation(BaseModel):
    """
    Binary selection of exactly k individuals.

    ``outcomes`` is read-only; ``k_prime`` is filled in by
    ``allocation_utility`` once the allocation is evaluated against a pool.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, validate_assignment=True)

    outcomes: np.ndarray
    k: int = Field(ge=0)
    k_prime: Optional[int] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("outcomes", mode="before")
    @classmethod
    def coerce_outcomes(cls, value: Any) -> np.ndarray:
        arr = _readonly(value, np.int8)
        if arr.ndim != 1:
            raise ValueError("outcomes must be a vector")
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError("outcomes must be binary")
        return arr

    @model_validator(mode="after")
    def check_positives(self) -> Self:
        if int(self.outcomes.sum()) != self.k:
            raise ValueError(f"allocation has {int(self.outcomes.sum())} positives, expected k={self.k}")
        if self.k_prime is not None and not 0 <= self.k_prime <= self.k:
            raise ValueError(f"k_prime={self.k_prime} outside [0, {self.k}]")
        return self

    @classmethod
    def from_indices(cls, indices: Sequence[int] | np.ndarray, n: int, **metadata: Any) -> "Allocation":
        outcomes = np.zeros(n, dtype=np.int8)
        outcomes[np.asarray(indices, dtype=np.int64)] = 1
        outcomes.setflags(write=False)
        return cls(outcomes=outcomes, k=int(outcomes.sum()), metadata=dict(metadata))

    @property
    def n(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.outcomes)

    @property
    def key(self) -> bytes:
        """Hashable identity of the outcome vector."""
        return np.packbits(self.outcomes.astype(bool)).tobytes() + self.n.to_bytes(8, "little")


class PredictionVector(BaseModel):
    """
    One model's scores over a pool.

    Attributes:
        scores: p̂(x_i) for every individual, each in [0, 1].
        validation_loss: Cross-entropy of the producing model on the validation split.
        method_tag: Sampling method that produced the model.
        model_id: Opaque identifier of the model.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scores: np.ndarray
    validation_loss: float = Field(ge=0)
    method_tag: str = ""
    model_id: str = ""

    @field_validator("scores", mode="before")
    @classmethod
    def coerce_scores(cls, value: Any) -> np.ndarray:
        arr = _readonly(value, float)
        if arr.ndim != 1:
            raise ValueError("scores must be a vector")
        if arr.size and not (np.all(np.isfinite(arr)) and arr.min() >= 0.0 and arr.max() <= 1.0):
            raise ValueError("scores must lie in [0, 1]")
        return arr

    @field_validator("validation_loss")
    @classmethod
    def check_finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("validation_loss must be finite")
        return value

    @property
    def n(self) -> int:
        return int(self.scores.shape[0])


class RashomonSample(BaseModel):
    """
    Prediction vectors retained by the ε filter for one sampling method.

    Attributes:
        members: Retained prediction vectors.
        epsilon: Loss tolerance.
        best_loss: Minimum validation loss among all candidates of the method.
        method_tag: Sampling method label.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    members: Tuple[PredictionVector, ...]
    epsilon: float = Field(default=0.01, ge=0)
    best_loss: float
    method_tag: str = ""

    @model_validator(mode="after")
    def check_tolerance(self) -> Self:
        bound = self.best_loss + self.epsilon
        for member in self.members:
            if member.validation_loss > bound:
                raise ValueError(
                    f"member {member.model_id} has loss {member.validation_loss} above best + epsilon = {bound}"
                )
        lengths = {m.n for m in self.members}
        if len(lengths) > 1:
            raise ValueError("members must score the same pool")
        return self

    @property
    def score_matrix(self) -> np.ndarray:
        """(m, n) matrix of member scores."""
        if not self.members:
            return np.zeros((0, 0))
        return np.vstack([m.scores for m in self.members])

    def __len__(self) -> int:
        return len(self.members)


class EqualUtilitySpace(BaseModel):
    """
    The set of allocations of k out of n selecting at least k′ − Δ of the n′ qualified.

    Attributes:
        n: Number of individuals.
        k: Number of positive outcomes.
        n_prime: Number of qualified individuals.
        k_prime: Qualified individuals selected by the baseline allocation.
        delta: Utility tolerance Δ (in selected-qualified counts).
    """
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=0)
    k: int = Field(ge=0)
    n_prime: int = Field(ge=0)
    k_prime: int = Field(ge=0)
    delta: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_counts(self) -> Self:
        if self.k > self.n:
            raise ValueError(f"k={self.k} exceeds n={self.n}")
        if self.n_prime > self.n:
            raise ValueError(f"n_prime={self.n_prime} exceeds n={self.n}")
        if self.k_prime > self.k:
            raise ValueError(f"k_prime={self.k_prime} exceeds k={self.k}")
        return self

    @classmethod
    def from_utility(cls, n: int, k: int, n_prime: int, utility: float, delta: int = 0) -> "EqualUtilitySpace":
        # 1e-9 absorbs float noise such as 0.95 * 20 = 18.999999999999996
        return cls(n=n, k=k, n_prime=n_prime, k_prime=int(np.floor(utility * k + 1e-9)), delta=delta)

    def feasible_k_primes(self) -> List[int]:
        """Selected-qualified counts k′_δ in [k′ − Δ, k′] that admit at least one allocation."""
        low = max(0, self.k_prime - self.delta)
        return [
            kd for kd in range(low, self.k_prime + 1)
            if kd <= self.n_prime and self.k - kd <= self.n - self.n_prime
        ]

    @property
    def is_empty(self) -> bool:
        return not self.feasible_k_primes()


def allocation_utility(alloc: Allocation, pool: CandidatePool) -> float:
    """
    Fraction of selected individuals who are qualified, k′/k.

    Stores k′ on the allocation as a side effect.

    Raises:
        DimensionError: If the allocation and pool lengths differ.
        DegenerateInputError: If the allocation selects nobody.
    """
    if alloc.n != pool.n:
        raise DimensionError(f"allocation has length {alloc.n} but pool has {pool.n} individuals")
    if alloc.k == 0:
        raise DegenerateInputError("utility is undefined for an allocation with k = 0")
    k_prime = int(np.dot(alloc.outcomes.astype(np.int64), pool.qualified.astype(np.int64)))
    alloc.k_prime = k_prime
    return k_prime / alloc.k
