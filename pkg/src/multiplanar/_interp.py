"""Shared n-linear and nearest-neighbour lookups on regular grids."""
from __future__ import annotations

import itertools

import numpy as np

# Fractional indices this close outside the grid are snapped onto it.
EDGE_TOL = 1e-9


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def inside_box(idx: np.ndarray, dims) -> np.ndarray:
    dims = np.asarray(dims, dtype=np.float64)
    return np.all((idx >= -EDGE_TOL) & (idx <= dims - 1 + EDGE_TOL), axis=-1)


def linear_interp(grid: np.ndarray, idx: np.ndarray, fill) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate ``grid`` (spatial dims..., C) at fractional ``idx`` (..., ndim).

    Returns ``(values (..., C), inside (...))``. Points outside the box spanned
    by the node centres get ``fill`` (scalar or length-C).
    """
    ndim = idx.shape[-1]
    dims = grid.shape[:ndim]
    channels = grid.shape[ndim]
    flat_grid = grid.reshape(-1, channels)
    pts = idx.reshape(-1, ndim)
    inside = inside_box(pts, dims)

    out = np.empty((pts.shape[0], channels), dtype=np.float64)
    out[~inside] = fill
    p = pts[inside]
    hi = np.asarray(dims, dtype=np.float64) - 1
    p = np.clip(p, 0.0, hi)
    base = np.minimum(np.floor(p), np.maximum(hi - 1, 0)).astype(np.int64)
    frac = p - base
    strides = np.array([int(np.prod(dims[d + 1 :])) for d in range(ndim)], dtype=np.int64)

    acc = np.zeros((p.shape[0], channels), dtype=np.float64)
    for corner in itertools.product((0, 1), repeat=ndim):
        weight = np.ones(p.shape[0])
        flat = np.zeros(p.shape[0], dtype=np.int64)
        for d, bit in enumerate(corner):
            weight = weight * (frac[:, d] if bit else 1.0 - frac[:, d])
            flat += (base[:, d] + bit) * strides[d]
        acc += weight[:, None] * flat_grid[flat]
    out[inside] = acc
    return out.reshape(idx.shape[:-1] + (channels,)), inside.reshape(idx.shape[:-1])


def nearest_lookup(grid: np.ndarray, idx: np.ndarray, fill=0) -> np.ndarray:
    """Value of the nearest node (ties away from zero); ``fill`` outside the grid."""
    ndim = idx.shape[-1]
    dims = np.asarray(grid.shape[:ndim])
    nearest = round_half_away(idx).astype(np.int64)
    inside = np.all((nearest >= 0) & (nearest < dims), axis=-1)
    out = np.full(idx.shape[:-1], fill, dtype=grid.dtype)
    out[inside] = grid[tuple(nearest[inside].T)]
    return out
