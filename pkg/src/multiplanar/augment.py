"""Random elastic deformation of sampled 2D slices.

A displacement field is white noise in [-1, 1] smoothed by a Gaussian of
width ``sigma`` pixels, rescaled to unit max-abs and multiplied by ``alpha``,
so ``alpha`` is the largest displacement in pixels. Deformed slices get a
reduced loss weight so training is dominated by undeformed images.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from ._interp import linear_interp, nearest_lookup
from .errors import ConfigError, DataError
from .sampler import Slice

DEFAULT_PROBABILITY = 1.0 / 3.0
DEFAULT_SIGMA_RANGE = (20.0, 30.0)
DEFAULT_ALPHA_RANGE = (100.0, 500.0)
DEFAULT_AUGMENTED_WEIGHT = 1.0 / 3.0


@dataclass(frozen=True)
class AugmentPolicy:
    probability: float = DEFAULT_PROBABILITY
    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE
    alpha_range: tuple[float, float] = DEFAULT_ALPHA_RANGE
    augmented_loss_weight: float = DEFAULT_AUGMENTED_WEIGHT
    seed: int = 0

    def violations(self) -> list[str]:
        problems = []
        if not 0.0 <= self.probability <= 1.0:
            problems.append(f"augment.probability={self.probability} must lie in [0, 1]")
        for name in ("sigma_range", "alpha_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                problems.append(f"augment.{name}={[lo, hi]} must satisfy low <= high")
        lo = self.sigma_range[0]
        if not lo > 0:
            problems.append(f"augment.sigma_range low={lo} must be positive")
        if not self.alpha_range[0] >= 0:
            problems.append(f"augment.alpha_range low={self.alpha_range[0]} must be >= 0")
        if not 0.0 < self.augmented_loss_weight <= 1.0:
            problems.append(
                f"augment.augmented_loss_weight={self.augmented_loss_weight} must lie in (0, 1]"
            )
        return problems

    def validate(self) -> "AugmentPolicy":
        problems = self.violations()
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_range"] = list(self.sigma_range)
        d["alpha_range"] = list(self.alpha_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        d = dict(d)
        for key in ("sigma_range", "alpha_range"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        return cls(**d)


@dataclass(frozen=True)
class DisplacementField:
    dx: np.ndarray  # displacement along the first image axis, pixels
    dy: np.ndarray  # displacement along the second image axis, pixels
    sigma: float
    alpha: float


def slice_rng(seed: int, index: int, *extra: int) -> np.random.Generator:
    """Independent stream per slice, so batch order cannot change results."""
    return np.random.default_rng([int(seed), int(index), *map(int, extra)])


def _smooth_unit(noise: np.ndarray, sigma: float) -> np.ndarray:
    smooth = gaussian_filter(noise, sigma=sigma, mode="reflect", truncate=4.0)
    peak = np.abs(smooth).max()
    return smooth / peak if peak > 0 else np.zeros_like(smooth)


def make_displacement_field(q: int, sigma: float, alpha: float, rng: np.random.Generator) -> DisplacementField:
    if q < 2:
        raise DataError(f"field size must be >= 2, got {q}")
    if not sigma > 0 or not alpha >= 0:
        raise DataError(f"need sigma > 0 and alpha >= 0, got sigma={sigma}, alpha={alpha}")
    dx = rng.uniform(-1.0, 1.0, size=(q, q))
    dy = rng.uniform(-1.0, 1.0, size=(q, q))
    dx = _smooth_unit(dx, sigma) * alpha
    dy = _smooth_unit(dy, sigma) * alpha
    return DisplacementField(dx, dy, float(sigma), float(alpha))


def elastic_deform(slice_: Slice, field: DisplacementField) -> Slice:
    """Warp image (bilinear) and labels (nearest) by ``field``."""
    q0, q1 = slice_.image.shape[:2]
    if field.dx.shape != (q0, q1) or field.dy.shape != (q0, q1):
        raise DataError(f"field shape {field.dx.shape} does not match slice {(q0, q1)}")
    a, b = np.meshgrid(np.arange(q0, dtype=np.float64), np.arange(q1, dtype=np.float64), indexing="ij")
    idx = np.stack([a + field.dx, b + field.dy], axis=-1)
    image, _ = linear_interp(slice_.image, idx, slice_.background_fill)
    labels = None if slice_.labels is None else nearest_lookup(slice_.labels, idx, 0)
    return replace(slice_, image=image, labels=labels)


def augment_with_field(
    slice_: Slice, policy: AugmentPolicy, rng: np.random.Generator
) -> tuple[Slice, DisplacementField | None]:
    """Like :func:`maybe_augment` but also returns the field (None if not deformed)."""
    if rng.random() >= policy.probability:
        return slice_.with_weight(1.0), None
    sigma = rng.uniform(*policy.sigma_range)
    alpha = rng.uniform(*policy.alpha_range)
    field = make_displacement_field(slice_.q, sigma, alpha, rng)
    return elastic_deform(slice_, field).with_weight(policy.augmented_loss_weight), field


def maybe_augment(slice_: Slice, policy: AugmentPolicy, rng: np.random.Generator) -> Slice:
    """Deform with probability ``policy.probability`` and set the loss weight."""
    return augment_with_field(slice_, policy, rng)[0]


def augment_slices(slices, policy: AugmentPolicy, stream: int = 0) -> list[Slice]:
    """Apply ``maybe_augment`` with a per-slice RNG keyed by (seed, stream, index)."""
    return [maybe_augment(s, policy, slice_rng(policy.seed, stream, i)) for i, s in enumerate(slices)]
