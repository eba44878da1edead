"""Per-slice predictors.

Anything with ``num_classes`` and ``predict(image) -> (q, q, L)`` can be
plugged into the pipeline. Predictors that need ground truth (the oracles)
implement ``predict_slice(slice, view_index, slice_index)`` instead.

The trainable stand-in is per-pixel multinomial logistic regression over
simple local features, fitted by plain SGD (one slice per step) on a
pixel-wise cross-entropy scaled by each slice's loss weight.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from .errors import DataError, DivergenceError, FormatError, LabelError

log = logging.getLogger(__name__)


@runtime_checkable
class Predictor(Protocol):
    num_classes: int

    def predict(self, image: np.ndarray) -> np.ndarray: ...


def featurize(image: np.ndarray) -> np.ndarray:
    """(q, q, C) image -> (q, q, 3C): raw values, 3x3 means, gradient magnitudes."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if image.ndim != 3:
        raise DataError(f"image must be (q, q, C), got shape {image.shape}")
    mean = uniform_filter(image, size=(3, 3, 1), mode="reflect")
    padded = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="symmetric")
    ga = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    gb = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    grad = np.sqrt(ga * ga + gb * gb)
    return np.concatenate([image, mean, grad], axis=-1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    return np.eye(num_classes)[labels]


def oracle_predict(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return one_hot(labels, num_classes)


@dataclass(frozen=True)
class NoisyOracleConfig:
    flip_rate: float = 0.2
    blur_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_rate < 1.0:
            raise DataError(f"flip_rate must lie in [0, 1), got {self.flip_rate}")
        if not self.blur_sigma >= 0.0:
            raise DataError(f"blur_sigma must be >= 0, got {self.blur_sigma}")


def noisy_oracle_predict(
    labels: np.ndarray,
    num_classes: int,
    config: NoisyOracleConfig,
    view_index: int,
    slice_index: int = 0,
) -> np.ndarray:
    """One-hot labels with random class flips, independent across views.

    The stream is keyed by (seed, view, slice) and consumed in pixel order, so
    each pixel's draw is a fixed function of (seed, view, slice, pixel).
    """
    labels = np.asarray(labels)
    probs = one_hot(labels, num_classes)
    if config.flip_rate > 0 and num_classes > 1:
        rng = np.random.default_rng([int(config.seed), int(view_index), int(slice_index)])
        flip = rng.random(labels.shape) < config.flip_rate
        shift = rng.integers(1, num_classes, size=labels.shape)
        noisy = np.where(flip, (labels + shift) % num_classes, labels)
        probs = one_hot(noisy, num_classes)
    if config.blur_sigma > 0:
        probs = gaussian_filter(probs, sigma=(config.blur_sigma, config.blur_sigma, 0), mode="reflect")
        probs /= probs.sum(axis=-1, keepdims=True)
    return probs


class OraclePredictor:
    """Returns the one-hot ground truth of each slice."""

    def __init__(self, num_classes: int):
        self.num_classes = int(num_classes)

    def predict_slice(self, slice_, view_index: int = 0, slice_index: int = 0) -> np.ndarray:
        if slice_.labels is None:
            raise DataError("oracle predictor needs slices with labels")
        return oracle_predict(slice_.labels, self.num_classes)


class NoisyOraclePredictor:
    def __init__(self, num_classes: int, config: NoisyOracleConfig):
        self.num_classes = int(num_classes)
        self.config = config

    def predict_slice(self, slice_, view_index: int = 0, slice_index: int = 0) -> np.ndarray:
        if slice_.labels is None:
            raise DataError("noisy oracle predictor needs slices with labels")
        return noisy_oracle_predict(slice_.labels, self.num_classes, self.config, view_index, slice_index)


def predict_slice(predictor, slice_, view_index: int = 0, slice_index: int = 0) -> np.ndarray:
    if hasattr(predictor, "predict_slice"):
        return predictor.predict_slice(slice_, view_index, slice_index)
    return predictor.predict(slice_.image)


@dataclass
class PatchSoftmaxModel:
    """softmax(((features - feature_mean) / feature_scale) @ weights + bias).

    The standardisation defaults to the identity; ``train`` can fit it from
    the training features so SGD is not dominated by the feature scale.
    """

    weights: np.ndarray  # (F, L)
    bias: np.ndarray  # (L,)
    feature_mean: np.ndarray | None = None  # (F,)
    feature_scale: np.ndarray | None = None  # (F,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DataError("weights must be (F, L) with bias (L,)")
        f = self.weights.shape[0]
        self.feature_mean = np.zeros(f) if self.feature_mean is None else np.asarray(self.feature_mean, dtype=np.float64)
        self.feature_scale = np.ones(f) if self.feature_scale is None else np.asarray(self.feature_scale, dtype=np.float64)
        if self.feature_mean.shape != (f,) or self.feature_scale.shape != (f,):
            raise DataError("feature_mean and feature_scale must have one entry per feature")
        if np.any(self.feature_scale <= 0):
            raise DataError("feature_scale entries must be positive")
        params = (self.weights, self.bias, self.feature_mean, self.feature_scale)
        if not all(np.all(np.isfinite(x)) for x in params):
            raise DivergenceError("model parameters are not finite")

    @classmethod
    def zeros(cls, channels: int, num_classes: int) -> "PatchSoftmaxModel":
        return cls(np.zeros((3 * channels, num_classes)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_count(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "PatchSoftmaxModel":
        return PatchSoftmaxModel(
            self.weights.copy(), self.bias.copy(), self.feature_mean.copy(), self.feature_scale.copy()
        )

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) / self.feature_scale

    def predict(self, image: np.ndarray) -> np.ndarray:
        return predict(self, image)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "feature_count": self.feature_count,
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatchSoftmaxModel":
        try:
            f, n = int(d["feature_count"]), int(d["num_classes"])
            weights = np.asarray(d["weights"], dtype=np.float64).reshape(f, n)
            bias = np.asarray(d["bias"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed model JSON: {exc}") from exc
        return cls(weights, bias, d.get("feature_mean"), d.get("feature_scale"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "PatchSoftmaxModel":
        if not Path(path).exists():
            raise FileNotFoundError(f"no such file: {path}")
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_features(model: PatchSoftmaxModel, features: np.ndarray) -> np.ndarray:
    if features.shape[-1] != model.feature_count:
        raise DataError(
            f"feature count {features.shape[-1]} does not match model ({model.feature_count})"
        )
    return softmax(model.standardize(features) @ model.weights + model.bias)


def predict(model: PatchSoftmaxModel, image: np.ndarray) -> np.ndarray:
    return predict_features(model, featurize(image))


def weighted_cross_entropy(
    model: PatchSoftmaxModel,
    features: list[np.ndarray],
    labels: list[np.ndarray],
    weights: list[float],
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and gradients of  sum_s w_s * mean_pixels(-log p[label]).

    Gradients are taken with respect to ``weights`` and ``bias``; the feature
    standardisation is held fixed. Returns ``(loss, dW, db)``.
    """
    loss = 0.0
    grad_w = np.zeros_like(model.weights)
    grad_b = np.zeros_like(model.bias)
    for feats, labs, w in zip(features, labels, weights):
        x = model.standardize(feats.reshape(-1, feats.shape[-1]))
        y = np.asarray(labs).reshape(-1)
        logits = x @ model.weights + model.bias
        logits = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(logits).sum(axis=1))
        log_p = logits[np.arange(y.size), y] - log_z
        n = y.size
        loss += w * float(-log_p.mean())
        delta = np.exp(logits - log_z[:, None])
        delta[np.arange(n), y] -= 1.0
        delta *= w / n
        grad_w += x.T @ delta
        grad_b += delta.sum(axis=0)
    return loss, grad_w, grad_b


def train(
    model: PatchSoftmaxModel,
    slices,
    epochs: int = 20,
    learning_rate: float = 0.1,
    rng: np.random.Generator | None = None,
    standardize: bool = False,
) -> tuple[PatchSoftmaxModel, list[float]]:
    """SGD over labelled slices; returns the trained copy and per-epoch mean loss.

    The loss curve entry for an epoch is the weighted loss of the whole
    training set, averaged per slice, evaluated after that epoch's updates.
    With ``standardize`` the model's feature mean/scale are first set to the
    training-feature mean and standard deviation.
    """
    slices = list(slices)
    if not slices:
        raise DataError("no training slices")
    if any(s.labels is None for s in slices):
        raise DataError("training slices must carry labels")
    shapes = {(s.image.shape) for s in slices}
    if len(shapes) != 1:
        raise DataError(f"training slices differ in shape: {sorted(shapes)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    model = model.copy()
    feats = [featurize(s.image) for s in slices]
    labels = [s.labels for s in slices]
    weights = [float(s.loss_weight) for s in slices]
    if feats[0].shape[-1] != model.feature_count:
        raise DataError("model feature count does not match slice channels")
    if standardize:
        stacked = np.concatenate([f.reshape(-1, f.shape[-1]) for f in feats])
        model.feature_mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        model.feature_scale = np.where(std > 1e-12, std, 1.0)
    for lab in labels:
        if lab.max() >= model.num_classes:
            raise LabelError(f"label {lab.max()} out of range for {model.num_classes} classes")

    curve = []
    for epoch in range(epochs):
        for i in rng.permutation(len(slices)):
            _, gw, gb = weighted_cross_entropy(model, [feats[i]], [labels[i]], [weights[i]])
            model.weights -= learning_rate * gw
            model.bias -= learning_rate * gb
        loss, _, _ = weighted_cross_entropy(model, feats, labels, weights)
        loss /= len(slices)
        if not np.isfinite(loss) or not np.all(np.isfinite(model.weights)):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch}; learning_rate={learning_rate} is probably too high"
            )
        curve.append(loss)
    if len(curve) >= 2:
        half = len(curve) // 2
        if np.mean(curve[half:]) > np.mean(curve[:half]):
            log.warning("training loss did not decrease between curve halves")
    return model, curve
