"""Synthetic ellipsoid phantoms with analytically known labels."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .volume import LabelMap, Volume, voxel_to_scanner


class PhantomWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    label: int
    intensity: float

    def contains(self, points_mm: np.ndarray) -> np.ndarray:
        d = (np.asarray(points_mm, dtype=np.float64) - self.center) / np.asarray(self.semi_axes)
        return np.sum(d * d, axis=-1) <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bodies: tuple[Ellipsoid, ...] = field(default_factory=tuple)
    noise_sigma: float = 0.0
    seed: int = 0
    background_intensity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        bodies = tuple(b if isinstance(b, Ellipsoid) else Ellipsoid(**b) for b in self.bodies)
        object.__setattr__(self, "bodies", bodies)
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise ConfigError(f"phantom shape must be three sizes >= 2, got {self.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigError(f"phantom spacing must be three positive values, got {self.spacing}")
        if any(b.label < 1 for b in bodies):
            raise ConfigError("phantom body labels must be >= 1 (0 is background)")
        if any(min(b.semi_axes) <= 0 for b in bodies):
            raise ConfigError("ellipsoid semi-axes must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @property
    def num_classes(self) -> int:
        return max((b.label for b in self.bodies), default=0) + 1

    @property
    def affine(self) -> np.ndarray:
        """Diagonal spacing, shifted so the grid centre sits at the scanner origin."""
        a = np.diag(list(self.spacing) + [1.0])
        a[:3, 3] = -(np.asarray(self.shape) - 1) / 2.0 * np.asarray(self.spacing)
        return a

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["spacing"] = list(self.spacing)
        d["bodies"] = [
            {**asdict(b), "center": list(b.center), "semi_axes": list(b.semi_axes)} for b in self.bodies
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        bodies = tuple(
            Ellipsoid(tuple(b["center"]), tuple(b["semi_axes"]), int(b["label"]), float(b["intensity"]))
            for b in d.pop("bodies", ())
        )
        return cls(bodies=bodies, **d)

    @classmethod
    def load(cls, path) -> "PhantomSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_seed(self, seed: int) -> "PhantomSpec":
        return PhantomSpec(self.shape, self.spacing, self.bodies, self.noise_sigma, int(seed), self.background_intensity)


def default_phantom_spec(shape=(64, 64, 64), spacing=(1.0, 1.0, 1.0), noise_sigma=0.05, seed=0) -> PhantomSpec:
    """Two nested ellipsoids (classes 1 and 2) scaled to the field of view.

    Intensities 0 / 1 / 2 give unit contrast between neighbouring classes.
    """
    half = np.asarray(shape, dtype=float) * np.asarray(spacing) / 2.0
    scale = float(half.min())
    outer = Ellipsoid((0.0, 0.0, 0.0), (0.75 * scale, 0.6 * scale, 0.5 * scale), 1, 1.0)
    inner = Ellipsoid((0.1 * scale, 0.05 * scale, 0.0), (0.42 * scale, 0.36 * scale, 0.3 * scale), 2, 2.0)
    return PhantomSpec(tuple(shape), tuple(spacing), (outer, inner), noise_sigma, seed)


def _label_points(spec: PhantomSpec, points_mm: np.ndarray) -> np.ndarray:
    labels = np.zeros(points_mm.shape[:-1], dtype=np.int64)
    for body in spec.bodies:
        labels[body.contains(points_mm)] = body.label
    return labels


def analytic_label_at(spec: PhantomSpec, point_mm) -> int | np.ndarray:
    """Class of the last body containing each point (boundary counts as inside)."""
    labels = _label_points(spec, np.asarray(point_mm, dtype=np.float64))
    return int(labels) if labels.ndim == 0 else labels


def voxel_centers_mm(spec: PhantomSpec) -> np.ndarray:
    idx = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in spec.shape], indexing="ij"), axis=-1)
    return voxel_to_scanner(spec.affine, idx)


def make_phantom(spec: PhantomSpec) -> tuple[Volume, LabelMap]:
    points = voxel_centers_mm(spec)
    lo, hi = points[0, 0, 0], points[-1, -1, -1]
    for i, body in enumerate(spec.bodies):
        c, ax = np.asarray(body.center), np.asarray(body.semi_axes)
        if np.any(c - ax < lo) or np.any(c + ax > hi):
            warnings.warn(f"phantom body {i} extends outside the volume", PhantomWarning, stacklevel=2)
    labels = np.zeros(spec.shape, dtype=np.int64)
    intensity = np.full(spec.shape, spec.background_intensity, dtype=np.float64)
    for body in spec.bodies:
        inside = body.contains(points)
        labels[inside] = body.label
        intensity[inside] = body.intensity
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        intensity = intensity + rng.normal(0.0, spec.noise_sigma, size=intensity.shape)
    volume = Volume(intensity, spec.affine, float(np.percentile(intensity, 1.0)))
    return volume, LabelMap(labels, spec.affine, spec.num_classes)
