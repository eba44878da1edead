"""View axes, isotropic plane grids and the (q, m, r) sampling heuristic.

A plane grid has ``q`` samples per side spaced ``r`` mm apart, so its
real-space extent is ``m = (q - 1) * r``. Slices of one view sweep offsets
``-m/2 .. m/2`` along the view normal with the same spacing ``r``, which
makes every per-view slice stack an isotropic q x q x q lattice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError, OutOfSphereError

ORTHO_TOL = 1e-9
MAX_ATTEMPTS = 10_000
DEFAULT_K = 6
DEFAULT_MIN_ANGLE = 20.0
ACTIVATION_MULTIPLIER = 16
BYTES_PER_SCALAR = 4
MIN_Q = 8

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class ViewAxis:
    normal: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        vecs = []
        for name in ("normal", "u", "v"):
            vec = np.array(getattr(self, name), dtype=np.float64)
            if vec.shape != (3,) or not np.all(np.isfinite(vec)):
                raise GeometryError(f"{name} must be a finite 3-vector")
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
            vecs.append(vec)
        n, u, v = vecs
        for name, vec in zip(("normal", "u", "v"), vecs):
            if abs(np.linalg.norm(vec) - 1.0) > ORTHO_TOL:
                raise GeometryError(f"{name} is not unit length")
        if max(abs(u @ v), abs(u @ n), abs(v @ n)) > ORTHO_TOL:
            raise GeometryError("view basis is not orthogonal")
        if np.abs(np.cross(u, v) - n).max() > ORTHO_TOL:
            raise GeometryError("view basis is not right-handed (u x v != normal)")

    @classmethod
    def from_normal(cls, normal) -> "ViewAxis":
        """Complete a normal to a basis: u is the in-plane projection of x (or y)."""
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        ref = _Y if abs(n @ _X) > 0.99 else _X
        u = ref - (ref @ n) * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        v /= np.linalg.norm(v)
        return cls(n, u, v)

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "u": self.u.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewAxis":
        return cls(d["normal"], d["u"], d["v"])


@dataclass(frozen=True)
class ViewSet:
    axes: tuple[ViewAxis, ...]
    seed: int | None
    min_angle_deg: float = DEFAULT_MIN_ANGLE
    include_canonical: bool = False

    def __len__(self):
        return len(self.axes)

    def __iter__(self):
        return iter(self.axes)

    def __getitem__(self, i):
        return self.axes[i]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "k": len(self.axes),
            "min_angle_deg": self.min_angle_deg,
            "include_canonical": self.include_canonical,
            "axes": [a.to_dict() for a in self.axes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSet":
        return cls(
            tuple(ViewAxis.from_dict(a) for a in d["axes"]),
            d.get("seed"),
            d.get("min_angle_deg", DEFAULT_MIN_ANGLE),
            d.get("include_canonical", False),
        )


def axis_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two undirected axes, in [0, 90] degrees."""
    return math.degrees(math.acos(min(1.0, abs(float(a @ b)))))


def sample_view_axes(
    k: int = DEFAULT_K,
    seed: int | None = 0,
    min_angle_deg: float = DEFAULT_MIN_ANGLE,
    include_canonical: bool = False,
    max_attempts: int = MAX_ATTEMPTS,
) -> ViewSet:
    """Draw ``k`` view normals uniformly on the upper unit hemisphere.

    Candidates closer than ``min_angle_deg`` to an accepted axis are
    rejected; each axis gets ``max_attempts`` draws before giving up. The
    procedure is sequential, so the first ``j`` axes for a seed do not depend
    on ``k``.
    """
    if k < 1:
        raise GeometryError("k must be >= 1")
    if not 0.0 <= min_angle_deg <= 90.0:
        raise GeometryError("min_angle_deg must lie in [0, 90]")
    rng = np.random.default_rng(seed)
    max_dot = math.cos(math.radians(min_angle_deg))
    normals: list[np.ndarray] = []
    if include_canonical:
        normals = [np.eye(3)[i] for i in range(min(k, 3))]
    while len(normals) < k:
        for _ in range(max_attempts):
            n = rng.standard_normal(3)
            norm = np.linalg.norm(n)
            if norm < 1e-12:
                continue
            n = n / norm
            if n[2] < 0:
                n = -n
            if all(abs(float(n @ other)) <= max_dot for other in normals):
                normals.append(n)
                break
        else:
            raise GeometryError(
                f"could not place view {len(normals) + 1} of {k} at least "
                f"{min_angle_deg} deg from the others after {max_attempts} attempts"
            )
    axes = tuple(ViewAxis.from_normal(n) for n in normals)
    return ViewSet(axes, seed, float(min_angle_deg), include_canonical)


@dataclass(frozen=True)
class SamplingParams:
    """Square plane grid: ``q`` samples per side, spacing ``r`` mm, extent ``m`` mm."""

    q: int
    m: float
    r: float

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise GeometryError(f"q must be an integer >= 2, got {self.q}")
        if not self.r > 0:
            raise GeometryError(f"r must be positive, got {self.r}")
        if abs(self.m - (self.q - 1) * self.r) > 1e-9 * max(1.0, abs(self.m)):
            raise GeometryError(f"m={self.m} is inconsistent with (q-1)*r={(self.q - 1) * self.r}")
        object.__setattr__(self, "q", int(self.q))

    @classmethod
    def from_q_r(cls, q: int, r: float) -> "SamplingParams":
        return cls(int(q), (int(q) - 1) * float(r), float(r))

    @classmethod
    def from_m_r(cls, m: float, r: float) -> "SamplingParams":
        """Smallest grid at spacing ``r`` spanning at least ``m`` mm."""
        q = math.ceil(m / r - 1e-9) + 1
        return cls.from_q_r(q, r)

    def to_dict(self) -> dict:
        return {"q": self.q, "m": self.m, "r": self.r}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingParams":
        return cls.from_q_r(d["q"], d["r"])


@dataclass(frozen=True)
class VolumeSummary:
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.shape, dtype=float) * np.asarray(self.spacing, dtype=float)

    @property
    def diameter_mm(self) -> float:
        return float(np.linalg.norm(self.extent_mm))

    @classmethod
    def of(cls, volume) -> "VolumeSummary":
        return cls(tuple(volume.shape), tuple(float(s) for s in volume.spacing))


@dataclass(frozen=True)
class FitReport:
    params: SamplingParams
    q_max: int
    native_r: float
    target_m: float
    memory_bytes: int
    memory_violated: bool = False
    resolution_violated: bool = False
    coverage_violated: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "q_max": self.q_max,
            "native_r": self.native_r,
            "target_m": self.target_m,
            "memory_bytes": self.memory_bytes,
            "violated": {
                "memory": self.memory_violated,
                "resolution": self.resolution_violated,
                "coverage": self.coverage_violated,
            },
            "notes": list(self.notes),
        }


def batch_memory_bytes(q: int, batch_size: int, channels: int = 1) -> int:
    return batch_size * q * q * channels * BYTES_PER_SCALAR * ACTIVATION_MULTIPLIER


def max_q_for_budget(memory_budget_bytes: int, batch_size: int, channels: int = 1) -> int:
    per_pixel = batch_memory_bytes(1, batch_size, channels)
    q = math.isqrt(max(int(memory_budget_bytes), 0) // per_pixel)
    while batch_memory_bytes(q + 1, batch_size, channels) <= memory_budget_bytes:
        q += 1
    return q


def fit_sampling_params(
    volumes,
    memory_budget_bytes: int,
    batch_size_min: int = 8,
    channels: int = 1,
    r_min: float = 0.0,
) -> FitReport:
    """Pick (q, m, r) by the priority memory > resolution > coverage.

    ``r`` is the finest spacing found in the dataset (never below ``r_min``)
    and ``m`` the largest per-volume diagonal. When the resulting ``q`` would
    not fit a ``batch_size_min`` batch in the memory budget, ``m`` is shrunk,
    giving up full coverage while keeping native resolution.
    """
    summaries = [v if isinstance(v, VolumeSummary) else VolumeSummary.of(v) for v in volumes]
    if not summaries:
        raise ConfigError("fit_sampling_params needs at least one volume summary")
    q_max = max_q_for_budget(memory_budget_bytes, batch_size_min, channels)
    if q_max < MIN_Q:
        raise ConfigError(
            f"memory budget {memory_budget_bytes} B cannot hold a batch of {batch_size_min} "
            f"{MIN_Q}x{MIN_Q}x{channels} images"
        )
    native_r = float(min(min(s.spacing) for s in summaries))
    notes = []
    r = max(native_r, float(r_min))
    if r > native_r:
        notes.append(f"spacing clamped from {native_r:g} to r_min={r_min:g} mm")
    target_m = max(s.diameter_mm for s in summaries)
    q = max(math.ceil(target_m / r - 1e-9) + 1, MIN_Q)
    coverage_violated = False
    if q > q_max:
        notes.append(f"q={q} exceeds memory limit q_max={q_max}; shrinking m")
        q = q_max
        coverage_violated = True
    params = SamplingParams.from_q_r(q, r)
    return FitReport(
        params=params,
        q_max=q_max,
        native_r=native_r,
        target_m=target_m,
        memory_bytes=batch_memory_bytes(q, batch_size_min, channels),
        resolution_violated=False,
        coverage_violated=coverage_violated or params.m < target_m - 1e-9,
        notes=tuple(notes),
    )


def slice_offsets(params: SamplingParams) -> np.ndarray:
    """Offsets along the normal: -m/2 + t*r for t = 0..floor(m/r)."""
    count = math.floor(params.m / params.r + 1e-9) + 1
    return -params.m / 2.0 + np.arange(count) * params.r


def plane_grid(
    view: ViewAxis,
    offset_mm: float,
    params: SamplingParams,
    center_mm=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """(q, q, 3) scanner coordinates of one slice; index [a, b] steps along u, v."""
    half = params.m / 2.0
    if abs(offset_mm) > half + 1e-9 * max(1.0, half):
        raise OutOfSphereError(f"offset {offset_mm} mm lies outside the sampling sphere (m/2={half})")
    return _base_grid(view, params, center_mm) + offset_mm * view.normal


def _base_grid(view: ViewAxis, params: SamplingParams, center_mm) -> np.ndarray:
    steps = (np.arange(params.q) - (params.q - 1) / 2.0) * params.r
    center = np.asarray(center_mm, dtype=np.float64)
    return center + steps[:, None, None] * view.u + steps[None, :, None] * view.v


def stack_grid(view: ViewAxis, params: SamplingParams, center_mm=(0.0, 0.0, 0.0)) -> np.ndarray:
    """(n, q, q, 3) coordinates of every slice of a view, n = len(slice_offsets)."""
    offsets = slice_offsets(params)
    base = _base_grid(view, params, center_mm)
    return base[None] + offsets[:, None, None, None] * view.normal
