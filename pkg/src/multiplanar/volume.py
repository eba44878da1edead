"""Volume containers and voxel <-> scanner-space affine geometry.

Integer voxel index ``i`` refers to the centre of voxel ``i``; fractional
indices interpolate between centres.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GeometryError, LabelError

# Upper-left blocks worse conditioned than this are treated as singular.
MAX_AFFINE_CONDITION = 1e12


def as_affine(matrix) -> np.ndarray:
    """Validate and return a read-only float64 4x4 affine."""
    a = np.array(matrix, dtype=np.float64)
    if a.shape != (4, 4):
        raise GeometryError(f"affine must be 4x4, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError("affine contains non-finite entries")
    if not np.array_equal(a[3], [0.0, 0.0, 0.0, 1.0]):
        raise GeometryError(f"affine bottom row must be (0,0,0,1), got {a[3].tolist()}")
    block = a[:3, :3]
    if np.linalg.det(block) == 0.0 or not np.linalg.cond(block) < MAX_AFFINE_CONDITION:
        raise GeometryError("affine upper-left 3x3 block is singular")
    a.setflags(write=False)
    return a


def voxel_to_scanner(affine, index) -> np.ndarray:
    """Map voxel indices of shape (..., 3) to scanner-space millimetres."""
    a = np.asarray(affine, dtype=np.float64)
    idx = np.asarray(index, dtype=np.float64)
    return idx @ a[:3, :3].T + a[:3, 3]


def scanner_to_voxel(affine, point) -> np.ndarray:
    """Inverse of :func:`voxel_to_scanner`; raises GeometryError on singular input."""
    a = np.asarray(affine, dtype=np.float64)
    if a.shape != (4, 4):
        raise GeometryError(f"affine must be 4x4, got shape {a.shape}")
    block = a[:3, :3]
    if np.linalg.det(block) == 0.0 or not np.linalg.cond(block) < MAX_AFFINE_CONDITION:
        raise GeometryError("cannot invert singular affine")
    p = np.asarray(point, dtype=np.float64)
    inv = np.linalg.inv(block)
    return (p - a[:3, 3]) @ inv.T


def voxel_spacing(affine) -> np.ndarray:
    """Millimetre length of one voxel step along each index axis."""
    a = np.asarray(affine, dtype=np.float64)
    return np.linalg.norm(a[:3, :3], axis=0)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """Multi-channel scalar grid of shape (X, Y, Z, C)."""

    data: np.ndarray
    affine: np.ndarray
    background_fill: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4:
            raise DataError(f"volume data must be 3D or 4D, got {data.ndim}D")
        if min(data.shape[:3]) < 2 or data.shape[3] < 1:
            raise DataError(f"volume spatial dims must be >= 2, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains non-finite values")
        if not np.isfinite(self.background_fill):
            raise DataError("background_fill must be finite")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "affine", as_affine(self.affine))
        object.__setattr__(self, "background_fill", float(self.background_fill))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[:3])

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def spacing(self) -> np.ndarray:
        return voxel_spacing(self.affine)

    def center_mm(self) -> np.ndarray:
        """Scanner position of the geometric centre of the voxel grid."""
        return voxel_to_scanner(self.affine, (np.array(self.shape) - 1) / 2.0)

    def with_data(self, data, background_fill: float | None = None) -> "Volume":
        fill = self.background_fill if background_fill is None else background_fill
        return Volume(data, self.affine, fill)


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray
    affine: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim == 4 and labels.shape[3] == 1:
            labels = labels[..., 0]
        if labels.ndim != 3:
            raise DataError(f"label map must be 3D, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise LabelError("label map contains non-integer values")
        labels = labels.astype(np.int64)
        if self.num_classes < 1:
            raise LabelError("num_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise LabelError(
                f"labels must lie in [0, {self.num_classes}), "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "affine", as_affine(self.affine))
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.labels.shape)


@dataclass(frozen=True)
class ProbVolume:
    """Per-voxel class probabilities plus the number of views covering each voxel."""

    probs: np.ndarray
    coverage: np.ndarray
    affine: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        coverage = np.asarray(self.coverage).astype(np.int64)
        if probs.ndim != 4 or coverage.shape != probs.shape[:3]:
            raise DataError(
                f"probs must be (X,Y,Z,L) with coverage (X,Y,Z); got {probs.shape} and {coverage.shape}"
            )
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "coverage", _frozen(coverage))
        object.__setattr__(self, "affine", as_affine(self.affine))
        if self.check:
            check_prob_volume(self)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.probs.shape[:3])

    @property
    def num_classes(self) -> int:
        return self.probs.shape[3]


def check_prob_volume(pv: ProbVolume, atol: float = 1e-5) -> None:
    """Raise DataError unless covered rows are distributions.

    Uncovered rows must be all zero, or the background one-hot row that
    fusion assigns to voxels no view reached.
    """
    covered = pv.coverage > 0
    rows = pv.probs[covered]
    if rows.size and (rows.min() < -atol or np.abs(rows.sum(axis=1) - 1.0).max() > atol):
        raise DataError("covered voxels must hold probability rows summing to 1")
    bare = pv.probs[~covered]
    if bare.size:
        background = np.zeros(pv.num_classes)
        background[0] = 1.0
        ok = np.all(bare == 0.0, axis=1) | np.all(bare == background, axis=1)
        if not np.all(ok):
            raise DataError("uncovered voxels must hold zero (or background one-hot) rows")
