"""
Learned skills: kernel ridge regression from marker deviations to force, and a small logistic MLP that classifies
stirring trials by substance.

Models serialize to versioned JSON (see to_dict / from_dict).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from modules.core import SCHEMA_VERSION
from modules.percept import ObjectPercept
from modules.tracking import DisplacementField

OBJECT_CHANNELS = ("centroid_x", "centroid_y", "orientation", "area")
POOLINGS = ("mean_std", "mean")
HIDDEN_LAYERS = (10, 10, 10)
KRR_GAMMAS = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)
KRR_LAMBDAS = (1e-6, 1e-4, 1e-2, 1.0)
RESIDUAL_TOLERANCE = 1e-8
GRADIENT_CHECK_SAMPLES = 5
GRADIENT_CHECK_STEP = 1e-6
GRADIENT_CHECK_TOLERANCE = 1e-4
PLATEAU_LOSS = 0.05

log = logging.getLogger()


class LearnError(Exception):
    """Generic learning exception."""

    ...


class TrainingError(LearnError):
    """Training diverged or failed its gradient check."""

    ...


@dataclass(frozen=True)
class LearnConfig:
    krr_gamma: float = 0.01
    krr_lambda: float = 1e-2
    krr_cv: bool = True
    mlp_epochs: int = 5000
    mlp_lr: float = 0.3
    mlp_batch_size: int = 0
    mlp_restarts: int = 3
    pooling: str = "mean_std"

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise LearnError(f"Unknown pooling '{self.pooling}', expected one of {POOLINGS}")
        if self.krr_gamma <= 0 or self.krr_lambda < 0 or self.mlp_lr <= 0:
            raise LearnError("Learning parameters out of range")
        if self.mlp_epochs < 1 or self.mlp_restarts < 0:
            raise LearnError("Learning parameters out of range")


@dataclass(frozen=True)
class FeatureVector:
    """
    One frame's features: dx of every marker, dy of every marker, then centroid x, centroid y, orientation and area
    of the object, optionally followed by every marker's size ratio minus one. Stale markers are zero-filled and
    have their mask bits cleared.
    """

    values: np.ndarray
    mask: np.ndarray

    @property
    def size(self) -> int:
        return int(self.values.size)


def feature_size(n_markers: int, include_ratio: bool = False) -> int:
    return 2 * n_markers + len(OBJECT_CHANNELS) + (n_markers if include_ratio else 0)


def feature_vector(
    field: DisplacementField,
    percept: ObjectPercept,
    include_ratio: bool = False,
    n_markers: Optional[int] = None,
) -> FeatureVector:
    """
    :param field: displacement field
    :param percept: object percept of the same frame
    :param include_ratio: append the per-marker size ratio block
    :param n_markers: layout size, the field's largest marker id + 1 by default
    :return: FeatureVector
    """
    n = int(field.marker_ids.max()) + 1 if n_markers is None else n_markers
    fresh = field.fresh
    ids = field.marker_ids[fresh]
    dx, dy, ratio = np.zeros(n), np.zeros(n), np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    dx[ids] = field.dx[fresh]
    dy[ids] = field.dy[fresh]
    ratio[ids] = field.ratio[fresh] - 1.0
    valid[ids] = True
    if percept.present:
        obj = np.array([percept.centroid[0], percept.centroid[1], percept.orientation, float(percept.area)])
    else:
        obj = np.zeros(len(OBJECT_CHANNELS))
    blocks = [dx, dy, obj]
    masks = [valid, valid, np.ones(len(OBJECT_CHANNELS), dtype=bool)]
    if include_ratio:
        blocks.append(ratio)
        masks.append(valid)
    values = np.concatenate(blocks)
    if not np.all(np.isfinite(values)):
        raise LearnError("Non-finite feature values")
    return FeatureVector(values=values, mask=np.concatenate(masks))


def frame_features(deviations: np.ndarray, objects: np.ndarray) -> np.ndarray:
    """
    Per-frame features of a recorded trial, in FeatureVector order.

    :param deviations: (frames, markers, 2) marker deviations
    :param objects: (frames, 4) object channels
    :return: (frames, 2 * markers + 4) array
    """
    return np.hstack([deviations[:, :, 0], deviations[:, :, 1], objects])


def pool_trial(frames: np.ndarray, pooling: str = "mean_std") -> np.ndarray:
    """Summarize a (frames, features) trial into one fixed-length vector."""
    if pooling not in POOLINGS:
        raise LearnError(f"Unknown pooling '{pooling}', expected one of {POOLINGS}")
    if frames.shape[0] == 0:
        raise LearnError("Cannot pool an empty trial")
    if pooling == "mean":
        return frames.mean(axis=0)
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


def _standardizer(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


@dataclass
class KrrModel:
    support: np.ndarray
    weights: np.ndarray
    gamma: float
    lam: float
    mean: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.support.shape[1])

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema": "krr-model",
            "schema_version": SCHEMA_VERSION,
            "gamma": self.gamma,
            "lambda": self.lam,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "support": self.support.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "KrrModel":
        _check_schema(data, "krr-model")
        return cls(
            support=np.asarray(data["support"], dtype=float),
            weights=np.asarray(data["weights"], dtype=float),
            gamma=float(data["gamma"]),
            lam=float(data["lambda"]),
            mean=np.asarray(data["mean"], dtype=float),
            scale=np.asarray(data["scale"], dtype=float),
        )


def _check_schema(data: Dict, schema: str):
    if data.get("schema") != schema:
        raise LearnError(f"Expected a '{schema}' document, got '{data.get('schema')}'")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise LearnError(f"Unsupported {schema} schema version {data.get('schema_version')}")


def krr_fit(X: np.ndarray, y: np.ndarray, lam: float, gamma: float) -> KrrModel:
    """
    Fit RBF kernel ridge regression on standardized inputs.

    Solves (K + lam I) w = y by Cholesky with one step of iterative refinement.

    :param X: (n, d) inputs
    :param y: (n,) targets
    :param lam: ridge, >= 0
    :param gamma: RBF bandwidth, > 0
    :return: KrrModel
    :raise LearnError: on bad shapes or parameters, or when the system is singular or ill-conditioned
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise LearnError(f"{X.shape[0]} inputs but {y.size} targets")
    if y.size < 2:
        raise LearnError("Kernel ridge regression needs at least two samples")
    if lam < 0 or gamma <= 0:
        raise LearnError(f"Need lambda >= 0 and gamma > 0, got lambda={lam} gamma={gamma}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise LearnError("Training data contains non-finite values")

    mean, scale = _standardizer(X)
    Z = (X - mean) / scale
    if lam == 0 and np.unique(Z, axis=0).shape[0] < Z.shape[0]:
        log.error("Duplicate training inputs with lambda = 0")
        raise LearnError("Kernel matrix is singular (duplicate inputs); use lambda > 0")
    A = rbf_kernel(Z, Z, gamma) + lam * np.eye(y.size)
    try:
        factor = cho_factor(A)
    except LinAlgError:
        raise LearnError(f"Kernel system is not positive definite at lambda={lam}; use lambda > 0")
    w = cho_solve(factor, y)
    w += cho_solve(factor, y - A @ w)

    residual = float(np.linalg.norm(A @ w - y))
    bound = RESIDUAL_TOLERANCE * float(np.linalg.norm(y))
    if residual > bound and residual > 0:
        raise LearnError(f"Kernel solve residual {residual:.3g} above {bound:.3g}; increase lambda")
    log.debug(f"KRR fit on {y.size} samples, gamma={gamma} lambda={lam}, residual {residual:.3g}")
    return KrrModel(support=Z, weights=w, gamma=float(gamma), lam=float(lam), mean=mean, scale=scale)


def krr_predict(model: KrrModel, x: np.ndarray):
    """
    :param model: fitted model
    :param x: (d,) input or (m, d) inputs
    :return: float for a single input, (m,) array otherwise
    :raise LearnError: on dimension mismatch or non-finite input
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.dim:
        raise LearnError(f"Model expects {model.dim} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise LearnError("Prediction input contains non-finite values")
    prediction = rbf_kernel((X - model.mean) / model.scale, model.support, model.gamma) @ model.weights
    return float(prediction[0]) if single else prediction


def _folds(n: int, folds: int, groups: Optional[np.ndarray]) -> List[np.ndarray]:
    if groups is None:
        return [f for f in np.array_split(np.arange(n), folds) if f.size]
    unique = np.unique(groups)
    if unique.size < 2:
        raise LearnError("Cross-validation needs at least two groups")
    return [np.flatnonzero(np.isin(groups, part)) for part in np.array_split(unique, min(folds, unique.size))]


def krr_cv(
    X: np.ndarray,
    y: np.ndarray,
    gammas: Sequence[float] = KRR_GAMMAS,
    lambdas: Sequence[float] = KRR_LAMBDAS,
    folds: int = 5,
    groups: Optional[np.ndarray] = None,
) -> Tuple[float, float, float]:
    """
    Pick (gamma, lambda) by k-fold cross-validated RMSE. With `groups`, whole groups (press episodes) stay together.

    :return: (gamma, lambda, rmse); ties keep the first grid point
    :raise LearnError: if no grid point could be fitted
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    parts = _folds(y.size, folds, groups)
    best: Optional[Tuple[float, float, float]] = None
    for gamma in gammas:
        for lam in lambdas:
            errors = []
            try:
                for test in parts:
                    train = np.setdiff1d(np.arange(y.size), test)
                    model = krr_fit(X[train], y[train], lam, gamma)
                    errors.append(krr_predict(model, X[test]) - y[test])
            except LearnError as e:
                log.debug(f"Skipping gamma={gamma} lambda={lam}: {e}")
                continue
            rmse = float(np.sqrt(np.mean(np.concatenate(errors) ** 2)))
            if best is None or rmse < best[2]:
                best = (float(gamma), float(lam), rmse)
    if best is None:
        raise LearnError("No hyperparameter pair could be fitted")
    log.info(f"KRR cross-validation picked gamma={best[0]} lambda={best[1]} (RMSE {best[2]:.4f})")
    return best


def rmse(predicted: np.ndarray, actual: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(predicted) - np.asarray(actual)) ** 2)))


@dataclass
class MlpModel:
    """Logistic hidden layers with a softmax output; weights[k] has shape (sizes[k], sizes[k + 1])."""

    sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    mean: np.ndarray
    scale: np.ndarray
    classes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema": "mlp-model",
            "schema_version": SCHEMA_VERSION,
            "sizes": list(self.sizes),
            "classes": list(self.classes),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "MlpModel":
        _check_schema(data, "mlp-model")
        return cls(
            sizes=[int(s) for s in data["sizes"]],
            weights=[np.asarray(w, dtype=float) for w in data["weights"]],
            biases=[np.asarray(b, dtype=float) for b in data["biases"]],
            mean=np.asarray(data["mean"], dtype=float),
            scale=np.asarray(data["scale"], dtype=float),
            classes=[str(c) for c in data["classes"]],
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], Z: np.ndarray) -> List[np.ndarray]:
    activations = [Z]
    for k, (w, b) in enumerate(zip(weights, biases)):
        pre = activations[-1] @ w + b
        activations.append(_softmax(pre) if k == len(weights) - 1 else _sigmoid(pre))
    return activations


def _cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    picked = probabilities[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def _gradients(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], Z: np.ndarray, labels: np.ndarray
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    activations = _forward(weights, biases, Z)
    probabilities = activations[-1]
    n = labels.size
    delta = probabilities.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grad_w: List[np.ndarray] = [np.empty(0)] * len(weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        grad_w[k] = activations[k].T @ delta
        grad_b[k] = delta.sum(axis=0)
        if k:
            h = activations[k]
            delta = (delta @ weights[k].T) * h * (1.0 - h)
    return _cross_entropy(probabilities, labels), grad_w, grad_b


def gradient_check(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], Z: np.ndarray, labels: np.ndarray
) -> float:
    """
    Relative error between the backpropagated gradient and central finite differences over every parameter.
    """
    weights = [w.copy() for w in weights]
    biases = [b.copy() for b in biases]
    _, grad_w, grad_b = _gradients(weights, biases, Z, labels)
    analytic = np.concatenate([g.ravel() for g in grad_w + grad_b])
    numeric = []
    h = GRADIENT_CHECK_STEP
    for params in weights + biases:
        flat = params.reshape(-1)
        for i in range(flat.size):
            kept = flat[i]
            flat[i] = kept + h
            up = _cross_entropy(_forward(weights, biases, Z)[-1], labels)
            flat[i] = kept - h
            down = _cross_entropy(_forward(weights, biases, Z)[-1], labels)
            flat[i] = kept
            numeric.append((up - down) / (2.0 * h))
    numeric_arr = np.array(numeric)
    denominator = np.linalg.norm(analytic) + np.linalg.norm(numeric_arr)
    if denominator == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric_arr) / denominator)


def mlp_init(sizes: Sequence[int], rng: np.random.Generator) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _descend(
    weights: List[np.ndarray],
    biases: List[np.ndarray],
    Z: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    epochs: int,
    lr: float,
    batch: int,
) -> List[float]:
    # Updates weights and biases in place
    n = labels.size
    losses: List[float] = []
    increases = 0
    for epoch in range(epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            index = order[start : start + batch]
            loss, grad_w, grad_b = _gradients(weights, biases, Z[index], labels[index])
            if not math.isfinite(loss):
                log.error(f"Loss became {loss} at epoch {epoch} (lr={lr}, batch={batch})")
                raise TrainingError(f"Non-finite loss at epoch {epoch}; lower the learning rate (lr={lr})")
            for k in range(len(weights)):
                weights[k] -= lr * grad_w[k]
                biases[k] -= lr * grad_b[k]
            epoch_loss += loss * index.size
        losses.append(epoch_loss / n)
        if epoch and losses[-1] > losses[-2]:
            increases += 1
    if increases:
        log.warning(f"Training loss went up in {increases} of {epochs} epochs")
    return losses


def mlp_train(
    X: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    classes: Optional[Sequence[str]] = None,
    epochs: int = 5000,
    lr: float = 0.3,
    batch_size: int = 0,
    hidden: Sequence[int] = HIDDEN_LAYERS,
    check_gradients: bool = True,
    restarts: int = 0,
) -> Tuple[MlpModel, List[float]]:
    """
    Train a logistic MLP with softmax output by gradient descent on the mean cross-entropy.

    Inputs are standardized with the training statistics. Before training, the backpropagated gradient is compared
    with central finite differences on a few training samples. A run that ends on a plateau (training set not fully
    fitted, or mean loss above PLATEAU_LOSS) is retried from a fresh initialization, up to `restarts` times; the run
    with the best training accuracy, then the lowest final loss, is kept.

    :param X: (n, d) pooled trial features
    :param labels: (n,) class indices
    :param rng: random stream for initialization and minibatch order
    :param classes: class names, indexed by label
    :param epochs: passes over the training set
    :param lr: learning rate
    :param batch_size: minibatch size, 0 for full batch
    :param restarts: extra initializations tried after a plateau
    :return: (model, per-epoch training loss of the kept run)
    :raise LearnError: with fewer than two classes, mismatched shapes or negative restarts
    :raise TrainingError: on a failed gradient check or a non-finite loss
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    if X.shape[0] != labels.size or labels.size == 0:
        raise LearnError(f"{X.shape[0]} samples but {labels.size} labels")
    present = np.unique(labels)
    if present.size < 2:
        raise LearnError(f"Training needs at least two classes, got {present.tolist()}")
    n_classes = int(labels.max()) + 1 if classes is None else len(classes)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LearnError(f"Labels must lie in 0..{n_classes - 1}")
    if restarts < 0:
        raise LearnError(f"Restarts must be non-negative, got {restarts}")

    mean, scale = _standardizer(X)
    Z = (X - mean) / scale
    sizes = [X.shape[1], *hidden, n_classes]
    n = labels.size
    batch = n if batch_size <= 0 else min(batch_size, n)

    best: Optional[Tuple[float, List[float], List[np.ndarray], List[np.ndarray]]] = None
    for attempt in range(restarts + 1):
        weights, biases = mlp_init(sizes, rng)
        if check_gradients and attempt == 0:
            probe = slice(0, min(GRADIENT_CHECK_SAMPLES, n))
            error = gradient_check(weights, biases, Z[probe], labels[probe])
            if error >= GRADIENT_CHECK_TOLERANCE:
                log.error(f"Gradient check failed with relative error {error:.3g}")
                raise TrainingError(f"Backpropagation disagrees with finite differences (relative error {error:.3g})")
            log.debug(f"Gradient check passed, relative error {error:.3g}")

        losses = _descend(weights, biases, Z, labels, rng, epochs, lr, batch)
        fit = accuracy(np.argmax(_forward(weights, biases, Z)[-1], axis=1), labels)
        if best is None or (fit, -losses[-1]) > (best[0], -best[1][-1]):
            best = (fit, losses, weights, biases)
        if fit == 1.0 and losses[-1] <= PLATEAU_LOSS:
            break
        if attempt < restarts:
            log.warning(
                f"Run {attempt + 1} stalled (training accuracy {fit:.3f}, loss {losses[-1]:.4f}), reinitializing"
            )
    assert best is not None
    fit, losses, weights, biases = best
    log.info(f"MLP {sizes} trained for {epochs} epochs, final loss {losses[-1]:.4f}, training accuracy {fit:.3f}")

    names = list(classes) if classes is not None else [str(c) for c in range(n_classes)]
    model = MlpModel(sizes=sizes, weights=weights, biases=biases, mean=mean, scale=scale, classes=names)
    return model, losses


def mlp_predict_proba(model: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.sizes[0]:
        raise LearnError(f"Model expects {model.sizes[0]} features, got {X.shape[1]}")
    return _forward(model.weights, model.biases, (X - model.mean) / model.scale)[-1]


def mlp_predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Class indices; np.argmax breaks ties toward the lowest index."""
    return np.argmax(mlp_predict_proba(model, X), axis=1)


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.asarray(predicted) == np.asarray(labels)))
