"""
Trainable model families producing prediction vectors.

Three families share one cross-entropy objective: L2-regularised logistic
regression, a small tanh feed-forward network, and a sparse scoring system
with integer coefficients. All are fitted by seeded mini-batch SGD in numpy.
"""
import hashlib
import json
import logging
from typing import Any, Dict, Iterator, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit
from typing_extensions import Self

from modules.multiplicity.domain import CandidatePool, PredictionVector
from modules.multiplicity.exceptions import (DataIngestionError,
                                             DimensionError, EmptyInputError,
                                             TrainingFailureError)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SCORE_CLAMP = 1e-12
INTERCEPT_REFIT_STEPS = 50

Family = Literal["logistic", "mlp", "scoring_system"]
Params = Dict[str, np.ndarray]


class TrainConfig(BaseModel):
    """
    Hyper-parameters of one training run.

    Attributes:
        family: Hypothesis class: logistic, mlp or scoring_system.
        hidden_sizes: Hidden layer widths (mlp only).
        learning_rate: SGD step size.
        epochs: Passes over the training data.
        batch_size: Mini-batch size.
        l2: L2 penalty on weight matrices (biases are not penalised).
        seed: Seed for initialisation and batch order.
        feature_mask: Features the model may use (all when None).
        coefficient_bound: Largest absolute integer coefficient (scoring systems).
        max_features: Largest number of nonzero coefficients (scoring systems).
    """
    model_config = ConfigDict(frozen=True)

    family: Family = "mlp"
    hidden_sizes: Tuple[int, ...] = (32,)
    learning_rate: float = Field(default=0.05, gt=0)
    epochs: int = Field(default=30, gt=0)
    batch_size: int = Field(default=128, gt=0)
    l2: float = Field(default=1e-4, ge=0)
    seed: int = 0
    feature_mask: Optional[Tuple[bool, ...]] = None
    coefficient_bound: int = Field(default=5, gt=0)
    max_features: int = Field(default=6, gt=0)

    @field_validator("hidden_sizes")
    @classmethod
    def check_hidden_sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(h <= 0 for h in value):
            raise ValueError("hidden layer sizes must be positive")
        return value

    @model_validator(mode="after")
    def check_family(self) -> Self:
        if self.family == "mlp" and not self.hidden_sizes:
            raise ValueError("mlp needs at least one hidden layer")
        if self.feature_mask is not None and not any(self.feature_mask):
            raise ValueError("feature_mask selects no features")
        return self


class TrainedModel(BaseModel):
    """
    A fitted model with its losses.

    Attributes:
        family: Hypothesis class tag.
        parameters: Named parameter arrays.
        train_loss: Cross-entropy on the training split.
        validation_loss: Cross-entropy on the validation split.
        config: Configuration that produced the model.
        model_id: Content hash of family and parameters.
        method_tag: Rashomon sampling method that produced the model, if any.
        seed_chain: Seed coordinates that regenerate the model.
        epoch: Training epoch of a snapshot model.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    family: Family
    parameters: Dict[str, np.ndarray]
    train_loss: float = Field(ge=0)
    validation_loss: float = Field(ge=0)
    config: TrainConfig
    model_id: str = ""
    method_tag: str = ""
    seed_chain: Tuple[int, ...] = ()
    epoch: Optional[int] = None

    @field_validator("parameters", mode="before")
    @classmethod
    def as_arrays(cls, value: Dict[str, Any]) -> Params:
        # 0-d intercepts come out of numpy arithmetic as scalars
        return {name: np.asarray(array, dtype=float) for name, array in value.items()}

    @model_validator(mode="after")
    def check_model(self) -> Self:
        if not (np.isfinite(self.train_loss) and np.isfinite(self.validation_loss)):
            raise ValueError("losses must be finite")
        if self.family == "scoring_system":
            coefficients = self.parameters["coefficients"]
            if not np.array_equal(coefficients, np.round(coefficients)):
                raise ValueError("scoring-system coefficients must be integers")
            if np.abs(coefficients).max(initial=0) > self.config.coefficient_bound:
                raise ValueError("scoring-system coefficient outside the bound")
            if np.count_nonzero(coefficients) > self.config.max_features:
                raise ValueError("scoring system uses more than max_features features")
        return self

    def with_tags(self, **update: Any) -> "TrainedModel":
        return self.model_copy(update=update)

    def parameter_vector(self) -> np.ndarray:
        return flatten(self.parameters)

    def to_json(self) -> str:
        """Versioned JSON document of the model."""
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "family": self.family,
            "model_id": self.model_id,
            "method_tag": self.method_tag,
            "seed_chain": list(self.seed_chain),
            "epoch": self.epoch,
            "config": self.config.model_dump(mode="json"),
            "parameters": {name: np.asarray(value).tolist() for name, value in self.parameters.items()},
            "train_loss": self.train_loss,
            "validation_loss": self.validation_loss,
        })

    @classmethod
    def from_json(cls, document: str) -> "TrainedModel":
        data = json.loads(document)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"Unsupported model schema version: {data.get('schema_version')}")
        return cls(
            family=data["family"],
            parameters={name: np.asarray(value, dtype=float) for name, value in data["parameters"].items()},
            train_loss=data["train_loss"],
            validation_loss=data["validation_loss"],
            config=TrainConfig.model_validate(data["config"]),
            model_id=data["model_id"],
            method_tag=data.get("method_tag", ""),
            seed_chain=tuple(data.get("seed_chain", ())),
            epoch=data.get("epoch"),
        )


def flatten(params: Params) -> np.ndarray:
    return np.concatenate([np.ravel(params[name]) for name in sorted(params)]).astype(float)


def unflatten(vector: np.ndarray, template: Params) -> Params:
    out: Params = {}
    offset = 0
    for name in sorted(template):
        size = int(np.size(template[name]))
        out[name] = vector[offset:offset + size].reshape(np.shape(template[name])).copy()
        offset += size
    return out


def model_hash(family: str, params: Params) -> str:
    digest = hashlib.sha1(family.encode())
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params[name], dtype=float).tobytes())
    return digest.hexdigest()[:16]


def cross_entropy(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Mean binary cross-entropy in nats.

    Scores are clamped to [1e-12, 1 − 1e-12] before the logarithm.

    Raises:
        DimensionError: If scores and labels differ in length.
    """
    p = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise DimensionError(f"{p.shape[0] if p.ndim else 0} scores for {y.shape[0] if y.ndim else 0} labels")
    if p.size == 0:
        raise EmptyInputError("cross-entropy of an empty vector")
    p = np.clip(p, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _mask_vector(config: TrainConfig, dimension: int) -> np.ndarray:
    if config.feature_mask is None:
        return np.ones(dimension)
    if len(config.feature_mask) != dimension:
        raise DimensionError(f"feature_mask has length {len(config.feature_mask)}, data has {dimension} features")
    return np.asarray(config.feature_mask, dtype=float)


def init_params(config: TrainConfig, dimension: int, rng: np.random.Generator) -> Params:
    if config.family in ("logistic", "scoring_system"):
        return {"weights": np.zeros(dimension), "intercept": np.zeros(())}
    params: Params = {}
    fan_in = dimension
    for layer, width in enumerate(config.hidden_sizes):
        params[f"W{layer}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, width))
        params[f"b{layer}"] = np.zeros(width)
        fan_in = width
    params["w_out"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_in)
    params["b_out"] = np.zeros(())
    return params


def _hidden_layers(params: Params) -> int:
    return sum(1 for name in params if name.startswith("W"))


def logits(family: str, params: Params, X: np.ndarray) -> np.ndarray:
    """Pre-sigmoid outputs of a model for the rows of X."""
    if family == "scoring_system":
        return X @ params["coefficients"] / float(params["multiplier"]) + float(params["intercept"])
    if family == "logistic":
        return X @ params["weights"] + float(params["intercept"])
    a = X
    for layer in range(_hidden_layers(params)):
        a = np.tanh(a @ params[f"W{layer}"] + params[f"b{layer}"])
    return a @ params["w_out"] + float(params["b_out"])


def _stable_ce(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_gradient(
    family: str,
    params: Params,
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 0.0,
    mask: Optional[np.ndarray] = None,
) -> Tuple[float, Params]:
    """
    Regularised cross-entropy and its analytic gradient.

    Args:
        family: "logistic" or "mlp".
        params: Current parameters.
        X: (m, d) features.
        y: (m,) binary labels.
        l2: Penalty weight; the objective adds l2/2 times the squared norm of weight matrices.
        mask: Optional feature mask applied to logistic weights.

    Returns:
        The objective value and a gradient dict with the same keys as params.
    """
    m = X.shape[0]
    if family == "logistic":
        w = params["weights"]
        z = X @ w + float(params["intercept"])
        dz = (expit(z) - y) / m
        grad_w = X.T @ dz + l2 * w
        if mask is not None:
            grad_w = grad_w * mask
        loss = _stable_ce(z, y) + 0.5 * l2 * float(w @ w)
        return loss, {"weights": grad_w, "intercept": np.asarray(dz.sum())}
    if family != "mlp":
        raise ValueError(f"no gradient for family '{family}'")

    layers = _hidden_layers(params)
    activations = [X]
    for layer in range(layers):
        activations.append(np.tanh(activations[-1] @ params[f"W{layer}"] + params[f"b{layer}"]))
    z = activations[-1] @ params["w_out"] + float(params["b_out"])
    dz = (expit(z) - y) / m
    grads: Params = {
        "w_out": activations[-1].T @ dz + l2 * params["w_out"],
        "b_out": np.asarray(dz.sum()),
    }
    penalty = float(params["w_out"] @ params["w_out"])
    upstream = np.outer(dz, params["w_out"])
    for layer in reversed(range(layers)):
        W = params[f"W{layer}"]
        local = upstream * (1.0 - activations[layer + 1] ** 2)
        grads[f"W{layer}"] = activations[layer].T @ local + l2 * W
        grads[f"b{layer}"] = local.sum(axis=0)
        penalty += float(np.sum(W * W))
        upstream = local @ W.T
    return _stable_ce(z, y) + 0.5 * l2 * penalty, grads


def score_gradient(model: TrainedModel, x: np.ndarray) -> Params:
    """Gradient of the predicted score σ(z(x)) of one point with respect to the parameters."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    params = model.parameters
    if model.family == "logistic":
        p = float(expit(logits("logistic", params, x))[0])
        scale = p * (1.0 - p)
        return {"weights": scale * x[0], "intercept": np.asarray(scale)}
    if model.family != "mlp":
        raise ValueError(f"score gradient is not available for family '{model.family}'")
    # d score / d theta equals d CE / d theta at label 0 scaled by p(1-p)/p = (1-p)
    _, grads = loss_and_gradient("mlp", params, x, np.zeros(1), l2=0.0)
    p = float(expit(logits("mlp", params, x))[0])
    return {name: g * (1.0 - p) for name, g in grads.items()}


def _check_data(X: np.ndarray, split: str) -> None:
    if X.shape[0] == 0:
        raise EmptyInputError(f"{split} split is empty")
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        row, col = (int(v) for v in bad[0])
        raise DataIngestionError(f"non-finite feature value in {split} split", row=row, column=str(col))


def iter_training(
    config: TrainConfig,
    X: np.ndarray,
    y: np.ndarray,
    params: Optional[Params] = None,
) -> Iterator[Tuple[int, Params, float]]:
    """
    Run seeded mini-batch SGD, yielding after every epoch.

    Yields:
        (epoch index starting at 1, copy of the parameters, training cross-entropy).

    Raises:
        TrainingFailureError: If the loss stops being finite.
    """
    if config.family == "scoring_system":
        raise ValueError("scoring systems are fitted by train(), not iterated")
    rng = np.random.default_rng(config.seed)
    params = {name: np.array(value, dtype=float) for name, value in (params or init_params(config, X.shape[1], rng)).items()}
    mask = _mask_vector(config, X.shape[1]) if config.family == "logistic" else None
    if mask is not None:
        params["weights"] = params["weights"] * mask
    m = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(m)
        for start in range(0, m, config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grads = loss_and_gradient(config.family, params, X[batch], y[batch], config.l2, mask)
            for name, grad in grads.items():
                params[name] = np.asarray(params[name] - config.learning_rate * grad, dtype=float)
        loss = cross_entropy(expit(logits(config.family, params, X)), y)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in params.values()):
            raise TrainingFailureError(
                f"{config.family} training diverged at epoch {epoch}",
                diagnostics={"epoch": epoch, "loss": loss, "learning_rate": config.learning_rate, "seed": config.seed},
            )
        logger.debug("%s epoch %d train loss %.5f", config.family, epoch, loss)
        yield epoch, {name: np.array(value, dtype=float) for name, value in params.items()}, loss


def _refit_intercept(z_fixed: np.ndarray, y: np.ndarray, start: float) -> float:
    """1-D Newton solve for the intercept minimising cross-entropy with fixed linear part."""
    b = start
    for _ in range(INTERCEPT_REFIT_STEPS):
        p = expit(z_fixed + b)
        grad = float(np.mean(p - y))
        hess = float(np.mean(p * (1.0 - p)))
        if hess < 1e-12:
            break
        step = grad / hess
        b -= float(np.clip(step, -5.0, 5.0))
        if abs(step) < 1e-10:
            break
    return b


def _fit_logistic(config: TrainConfig, X: np.ndarray, y: np.ndarray) -> Params:
    params: Params = {}
    for _, params, _ in iter_training(config.model_copy(update={"family": "logistic"}), X, y):
        pass
    return params


def _fit_scoring_system(config: TrainConfig, X: np.ndarray, y: np.ndarray) -> Params:
    """Logistic fit on a feature subset, rescaled and rounded to integers, then intercept refit."""
    dimension = X.shape[1]
    mask = _mask_vector(config, dimension).astype(bool)
    params = _fit_logistic(config, X, y)
    weights = params["weights"] * mask
    if np.count_nonzero(weights) > config.max_features:
        keep = np.argsort(-np.abs(weights), kind="stable")[: config.max_features]
        mask = np.zeros(dimension, dtype=bool)
        mask[keep] = True
        params = _fit_logistic(config.model_copy(update={"feature_mask": tuple(bool(v) for v in mask)}), X, y)
        weights = params["weights"] * mask

    largest = float(np.abs(weights).max(initial=0.0))
    multiplier = config.coefficient_bound / largest if largest > 0 else 1.0
    coefficients = np.clip(np.round(weights * multiplier), -config.coefficient_bound, config.coefficient_bound)
    intercept = _refit_intercept(X @ coefficients / multiplier, y, float(params["intercept"]))
    return {
        "coefficients": coefficients,
        "intercept": np.asarray(intercept),
        "multiplier": np.asarray(multiplier),
    }


def train(
    config: TrainConfig,
    train_split: CandidatePool,
    validation_split: CandidatePool,
    params: Optional[Params] = None,
) -> TrainedModel:
    """
    Fit a model by empirical risk minimisation of cross-entropy.

    Args:
        config: Hyper-parameters; identical config, seed and data give identical parameters.
        train_split: Pool whose qualification flags are the training labels.
        validation_split: Pool used for the recorded validation loss.
        params: Optional starting parameters (logistic and mlp only).

    Returns:
        The trained model with train and validation cross-entropy.

    Raises:
        EmptyInputError: If a split is empty.
        DataIngestionError: If features are not finite.
        DimensionError: If the splits' feature dimensions differ.
        TrainingFailureError: If the loss diverges.
    """
    X, y = train_split.features, train_split.qualified.astype(float)
    _check_data(X, "training")
    _check_data(validation_split.features, "validation")
    if validation_split.dimension != train_split.dimension:
        raise DimensionError(
            f"training split has {train_split.dimension} features, validation split {validation_split.dimension}"
        )

    if config.family == "scoring_system":
        fitted = _fit_scoring_system(config, X, y)
    else:
        fitted = {}
        for _, fitted, _ in iter_training(config, X, y, params):
            pass
    model = finalize_model(config, fitted, train_split, validation_split)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("%s model %s validation accuracy %.3f", config.family, model.model_id, accuracy(model, validation_split))
    return model


def finalize_model(
    config: TrainConfig,
    params: Params,
    train_split: CandidatePool,
    validation_split: CandidatePool,
    **tags: Any,
) -> TrainedModel:
    """Wrap parameters into a TrainedModel, recording both losses."""
    train_loss = cross_entropy(expit(logits(config.family, params, train_split.features)), train_split.qualified)
    validation_loss = cross_entropy(
        expit(logits(config.family, params, validation_split.features)), validation_split.qualified
    )
    if not (np.isfinite(train_loss) and np.isfinite(validation_loss)):
        raise TrainingFailureError(
            f"{config.family} model has non-finite loss",
            diagnostics={"train_loss": train_loss, "validation_loss": validation_loss, "seed": config.seed},
        )
    return TrainedModel(
        family=config.family,
        parameters=params,
        train_loss=train_loss,
        validation_loss=validation_loss,
        config=config,
        model_id=model_hash(config.family, params),
        **tags,
    )


def predict(model: TrainedModel, pool: CandidatePool) -> PredictionVector:
    """
    Score every individual of a pool.

    Raises:
        DimensionError: If the pool's feature dimension differs from the model's.
    """
    expected = _input_dimension(model)
    if pool.dimension != expected:
        raise DimensionError(f"model expects {expected} features, pool has {pool.dimension}")
    scores = expit(logits(model.family, model.parameters, pool.features))
    return PredictionVector(
        scores=scores,
        validation_loss=model.validation_loss,
        method_tag=model.method_tag,
        model_id=model.model_id,
    )


def _input_dimension(model: TrainedModel) -> int:
    if model.family == "scoring_system":
        return int(np.size(model.parameters["coefficients"]))
    if model.family == "logistic":
        return int(np.size(model.parameters["weights"]))
    return int(np.shape(model.parameters["W0"])[0])


def accuracy(model: TrainedModel, pool: CandidatePool) -> float:
    scores = predict(model, pool).scores
    return float(np.mean((scores >= 0.5) == pool.qualified))
