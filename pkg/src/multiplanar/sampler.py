"""Resample volumes on view-aligned isotropic plane grids.

Images are interpolated trilinearly, label maps by nearest neighbour. Points
outside the voxel-centre box read the volume's ``background_fill`` (images)
or class 0 (labels).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._interp import linear_interp, nearest_lookup
from .errors import GeometryError
from .geometry import SamplingParams, ViewAxis, plane_grid, slice_offsets, stack_grid
from .volume import LabelMap, Volume, scanner_to_voxel


def trilinear_sample(volume: Volume, point_mm) -> np.ndarray:
    """Channel values at scanner points of shape (..., 3); returns (..., C)."""
    idx = scanner_to_voxel(volume.affine, point_mm)
    values, _ = linear_interp(volume.data, idx, volume.background_fill)
    return values


def nearest_label_sample(labelmap: LabelMap, point_mm) -> np.ndarray:
    """Label of the nearest voxel centre at points (..., 3); 0 outside the grid."""
    idx = scanner_to_voxel(labelmap.affine, point_mm)
    out = nearest_lookup(labelmap.labels, idx, 0)
    return out if out.ndim else int(out)


@dataclass(frozen=True)
class Slice:
    image: np.ndarray  # (q, q, C)
    labels: np.ndarray | None  # (q, q) or None
    view: ViewAxis
    offset_mm: float
    loss_weight: float = 1.0
    background_fill: float = 0.0

    @property
    def q(self) -> int:
        return self.image.shape[0]

    def with_weight(self, weight: float) -> "Slice":
        return replace(self, loss_weight=float(weight))


@dataclass(frozen=True)
class SliceStack:
    slices: tuple[Slice, ...]
    view: ViewAxis
    params: SamplingParams
    center_mm: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self):
        return len(self.slices)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([s.offset_mm for s in self.slices])

    @property
    def images(self) -> np.ndarray:
        """(n, q, q, C) array of all slice images."""
        return np.stack([s.image for s in self.slices])

    @property
    def labels(self) -> np.ndarray | None:
        if any(s.labels is None for s in self.slices):
            return None
        return np.stack([s.labels for s in self.slices])


def _check_pair(volume: Volume, labelmap: LabelMap | None) -> None:
    if labelmap is None:
        return
    if labelmap.shape != volume.shape:
        raise GeometryError(f"label map shape {labelmap.shape} != volume shape {volume.shape}")
    if not np.allclose(labelmap.affine, volume.affine, atol=1e-6):
        raise GeometryError("label map affine differs from the volume affine")


def _sample_grid(volume, labelmap, grid):
    image = trilinear_sample(volume, grid)
    labels = None if labelmap is None else nearest_label_sample(labelmap, grid)
    return image, labels


def sample_slice(
    volume: Volume,
    labelmap: LabelMap | None,
    view: ViewAxis,
    offset_mm: float,
    params: SamplingParams,
    center_mm=(0.0, 0.0, 0.0),
) -> Slice:
    _check_pair(volume, labelmap)
    grid = plane_grid(view, offset_mm, params, center_mm)
    image, labels = _sample_grid(volume, labelmap, grid)
    return Slice(image, labels, view, float(offset_mm), 1.0, volume.background_fill)


def sample_stack(
    volume: Volume,
    labelmap: LabelMap | None,
    view: ViewAxis,
    params: SamplingParams,
    center_mm=(0.0, 0.0, 0.0),
) -> SliceStack:
    """Every slice of one view, ordered by increasing offset."""
    _check_pair(volume, labelmap)
    grids = stack_grid(view, params, center_mm)
    images, labels = _sample_grid(volume, labelmap, grids)
    offsets = slice_offsets(params)
    slices = tuple(
        Slice(
            images[t],
            None if labels is None else labels[t],
            view,
            float(offsets[t]),
            1.0,
            volume.background_fill,
        )
        for t in range(len(offsets))
    )
    return SliceStack(slices, view, params, np.asarray(center_mm, dtype=np.float64))
