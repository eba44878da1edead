"""Map per-view probability stacks back to the voxel grid and fuse them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._interp import linear_interp
from .errors import DataError, GeometryError
from .geometry import SamplingParams, ViewAxis, slice_offsets
from .volume import LabelMap, ProbVolume, as_affine, voxel_to_scanner


@dataclass(frozen=True)
class ViewPrediction:
    prob_slices: np.ndarray  # (n, q, q, L), ordered by offset
    view: ViewAxis
    params: SamplingParams
    center_mm: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        probs = np.asarray(self.prob_slices, dtype=np.float64)
        q = self.params.q
        n = len(slice_offsets(self.params))
        if probs.ndim != 4 or probs.shape[:3] != (n, q, q):
            raise DataError(f"expected prob slices of shape ({n}, {q}, {q}, L), got {probs.shape}")
        if probs.min() < -1e-5 or np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-5:
            raise DataError("per-pixel probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "prob_slices", probs)
        object.__setattr__(self, "center_mm", np.asarray(self.center_mm, dtype=np.float64))

    @property
    def num_classes(self) -> int:
        return self.prob_slices.shape[-1]


def view_coordinates(points_mm: np.ndarray, view: ViewAxis, params: SamplingParams, center_mm) -> np.ndarray:
    """Fractional (slice, a, b) stack indices of scanner points (..., 3)."""
    d = np.asarray(points_mm, dtype=np.float64) - np.asarray(center_mm, dtype=np.float64)
    half = (params.q - 1) / 2.0
    s = d @ view.u / params.r + half
    t = d @ view.v / params.r + half
    w = (d @ view.normal + params.m / 2.0) / params.r
    return np.stack([w, s, t], axis=-1)


def reconstruct_view(pred: ViewPrediction, shape, affine) -> ProbVolume:
    """Trilinearly resample one view's probability stack onto a voxel grid."""
    shape = tuple(int(n) for n in shape)
    if len(shape) != 3:
        raise GeometryError(f"target shape must be 3D, got {shape}")
    affine = as_affine(affine)
    idx = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"), axis=-1)
    coords = view_coordinates(voxel_to_scanner(affine, idx), pred.view, pred.params, pred.center_mm)
    values, inside = linear_interp(pred.prob_slices, coords, 0.0)
    total = values.sum(axis=-1, keepdims=True)
    probs = np.where(inside[..., None], values / np.where(total > 0, total, 1.0), 0.0)
    return ProbVolume(probs, inside.astype(np.int64), affine)


def _same_geometry(a: ProbVolume, b: ProbVolume) -> bool:
    return a.probs.shape == b.probs.shape and np.allclose(a.affine, b.affine, atol=1e-9)


def fuse_views(per_view) -> ProbVolume:
    """Per-voxel mean over the views covering it; uncovered voxels become class 0.

    Views are summed in list order with Kahan compensation, so results do not
    depend on how the reconstruction work was scheduled.
    """
    per_view = list(per_view)
    if not per_view:
        raise DataError("fuse_views needs at least one view")
    first = per_view[0]
    for pv in per_view[1:]:
        if not _same_geometry(first, pv):
            raise GeometryError("all views must share shape, class count and affine")
    total = np.zeros_like(first.probs)
    comp = np.zeros_like(first.probs)
    coverage = np.zeros(first.shape, dtype=np.int64)
    for pv in per_view:
        covered = pv.coverage > 0
        contrib = np.where(covered[..., None], pv.probs, 0.0) - comp
        new_total = total + contrib
        comp = (new_total - total) - contrib
        total = new_total
        coverage += covered
    covered = coverage > 0
    mean = total / np.maximum(coverage, 1)[..., None]
    sums = mean.sum(axis=-1, keepdims=True)
    mean = np.where(covered[..., None], mean / np.where(sums > 0, sums, 1.0), 0.0)
    mean[~covered, 0] = 1.0
    return ProbVolume(mean, coverage, first.affine)


def argmax_labels(fused: ProbVolume) -> LabelMap:
    """Most probable class per voxel; ties go to the lowest class index."""
    return LabelMap(np.argmax(fused.probs, axis=-1), fused.affine, fused.num_classes)
