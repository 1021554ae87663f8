"""Circular cone-beam acquisition geometry.

World frame: the object box is centred at the origin, the source travels on a
circle of radius ``dso`` in the z = 0 plane and the flat detector sits opposite
it at distance ``dsd`` from the source. Detector coordinates ``(u, v)`` are
measured from the orthogonal projection of the source onto the detector; ``u``
grows with the column index, ``v`` with the row index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "ScanGeometry",
    "Ray",
    "source_position",
    "rotation_matrix",
    "detector_uv",
    "ray_for_pixel",
    "clip_to_volume",
    "view_rays",
    "clip_rays",
    "uniform_angles",
]


@dataclass(frozen=True)
class ScanGeometry:
    """Acquisition parameters. Lengths in mm, angles in radians."""

    dso: float
    dsd: float
    det_rows: int
    det_cols: int
    det_spacing_u: float
    det_spacing_v: float
    vol_dims: tuple[int, int, int]
    vol_spacing: tuple[float, float, float]
    angles: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "dso", float(self.dso))
        set_(self, "dsd", float(self.dsd))
        set_(self, "det_rows", int(self.det_rows))
        set_(self, "det_cols", int(self.det_cols))
        set_(self, "det_spacing_u", float(self.det_spacing_u))
        set_(self, "det_spacing_v", float(self.det_spacing_v))
        set_(self, "vol_dims", tuple(int(n) for n in self.vol_dims))
        set_(self, "vol_spacing", tuple(float(s) for s in self.vol_spacing))
        angles = np.array(self.angles, dtype=np.float64).reshape(-1)
        angles.setflags(write=False)
        set_(self, "angles", angles)

        if not (self.dsd > self.dso > 0):
            raise ValidationError(f"need dsd > dso > 0, got dsd={self.dsd}, dso={self.dso}")
        if len(self.vol_dims) != 3 or len(self.vol_spacing) != 3:
            raise ValidationError("vol_dims and vol_spacing must have three entries")
        if min(self.det_rows, self.det_cols, *self.vol_dims) < 1:
            raise ValidationError("detector and volume counts must be >= 1")
        if min(self.det_spacing_u, self.det_spacing_v, *self.vol_spacing) <= 0:
            raise ValidationError("all spacings must be > 0")
        if not np.all(np.isfinite(angles)):
            raise ValidationError("angles must be finite")

    @property
    def n_views(self) -> int:
        return len(self.angles)

    @property
    def half_extent(self) -> np.ndarray:
        """Half side lengths of the volume box (mm)."""
        return 0.5 * np.asarray(self.vol_dims, float) * np.asarray(self.vol_spacing, float)

    def with_angles(self, angles) -> "ScanGeometry":
        return ScanGeometry(
            self.dso, self.dsd, self.det_rows, self.det_cols,
            self.det_spacing_u, self.det_spacing_v,
            self.vol_dims, self.vol_spacing, angles,
        )

    def same_setup(self, other: "ScanGeometry") -> bool:
        """True when everything except the angle list matches."""
        return (
            self.dso == other.dso and self.dsd == other.dsd
            and self.det_rows == other.det_rows and self.det_cols == other.det_cols
            and self.det_spacing_u == other.det_spacing_u
            and self.det_spacing_v == other.det_spacing_v
            and self.vol_dims == other.vol_dims and self.vol_spacing == other.vol_spacing
        )

    @classmethod
    def covering(cls, vol_dims, vol_spacing, dso, dsd, angles, pixel_scale=1.0):
        """Geometry whose detector just covers the volume's cone-beam shadow.

        The detector pitch is chosen so one pixel back-projects to roughly
        ``pixel_scale`` voxels at the isocentre.
        """
        half = 0.5 * np.asarray(vol_dims, float) * np.asarray(vol_spacing, float)
        r_xy = math.hypot(half[0], half[1])
        if dso <= r_xy:
            raise ValidationError("source circle intersects the volume")
        mag_max = dsd / (dso - r_xy)
        pitch = pixel_scale * min(vol_spacing) * dsd / dso
        cols = int(math.ceil(2 * r_xy * dsd / (dso - r_xy) / pitch))
        rows = int(math.ceil(2 * half[2] * mag_max / pitch))
        cols += (cols + 1) % 2
        rows += (rows + 1) % 2
        return cls(dso, dsd, rows, cols, pitch, pitch, tuple(vol_dims), tuple(vol_spacing), angles)


@dataclass
class Ray:
    """``r(t) = origin + t * direction``; limits stay ``None`` until clipped."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float | None = None
    t_far: float | None = None

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def uniform_angles(n: int, start: float = 0.0, stop: float = math.pi) -> np.ndarray:
    """``n`` angles ``start + i * (stop - start) / n``, endpoint excluded."""
    return start + np.arange(n) * (stop - start) / n


def source_position(alpha: float, geom: ScanGeometry) -> np.ndarray:
    return np.array([geom.dso * math.cos(alpha), geom.dso * math.sin(alpha), 0.0])


def rotation_matrix(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def detector_uv(row: int, col: int, geom: ScanGeometry) -> tuple[float, float]:
    if not (0 <= row < geom.det_rows and 0 <= col < geom.det_cols):
        raise IndexError(f"pixel ({row}, {col}) outside {geom.det_rows}x{geom.det_cols} detector")
    u = (col - 0.5 * (geom.det_cols - 1)) * geom.det_spacing_u
    v = (row - 0.5 * (geom.det_rows - 1)) * geom.det_spacing_v
    return u, v


def _directions(alpha, u, v, dsd):
    # Local direction at alpha = 0, then rotated into the world frame by R^T
    # (row-vector form d_I @ R) so the central ray always points at the origin.
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    local = np.stack(np.broadcast_arrays(np.full_like(u, -dsd), u, -v), axis=-1)
    local /= np.sqrt(u * u + v * v + dsd * dsd)[..., None]
    return local @ rotation_matrix(alpha)


def ray_for_pixel(alpha: float, u: float, v: float, geom: ScanGeometry) -> Ray:
    return Ray(source_position(alpha, geom), _directions(alpha, u, v, geom.dsd))


def clip_rays(origins, directions, geom: ScanGeometry):
    """Slab-method intersection of rays with the centred volume box.

    Returns ``(t_near, t_far, hit)``; ``t_near`` is clamped to be non-negative.
    """
    o = np.asarray(origins, float)
    d = np.asarray(directions, float)
    h = geom.half_extent
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / d
        t1 = (-h - o) * inv
        t2 = (h - o) * inv
    parallel = d == 0.0
    inside = np.abs(o) <= h
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = np.maximum(lo.max(axis=-1), 0.0)
    t_far = hi.min(axis=-1)
    hit = t_near <= t_far
    return t_near, t_far, hit


def clip_to_volume(ray: Ray, geom: ScanGeometry) -> Ray | None:
    t_near, t_far, hit = clip_rays(ray.origin, ray.direction, geom)
    if not hit:
        return None
    return Ray(ray.origin, ray.direction, float(t_near), float(t_far))


def view_rays(geom: ScanGeometry, view_indices=None):
    """Rays for every pixel of the selected views.

    Returns origins and directions shaped ``(views, rows, cols, 3)``.
    """
    idx = np.arange(geom.n_views) if view_indices is None else np.asarray(view_indices)
    cols = (np.arange(geom.det_cols) - 0.5 * (geom.det_cols - 1)) * geom.det_spacing_u
    rows = (np.arange(geom.det_rows) - 0.5 * (geom.det_rows - 1)) * geom.det_spacing_v
    v, u = np.meshgrid(rows, cols, indexing="ij")
    shape = (len(idx), geom.det_rows, geom.det_cols, 3)
    origins = np.empty(shape)
    dirs = np.empty(shape)
    for n, i in enumerate(idx):
        alpha = geom.angles[i]
        origins[n] = source_position(alpha, geom)
        dirs[n] = _directions(alpha, u, v, geom.dsd)
    return origins, dirs


def pixel_rays(geom: ScanGeometry, view_idx, rows, cols):
    """Origins and directions for arbitrary (view, row, col) triples."""
    view_idx = np.asarray(view_idx)
    alpha = geom.angles[view_idx]
    u = (np.asarray(cols) - 0.5 * (geom.det_cols - 1)) * geom.det_spacing_u
    v = (np.asarray(rows) - 0.5 * (geom.det_rows - 1)) * geom.det_spacing_v
    c, s = np.cos(alpha), np.sin(alpha)
    origins = np.stack([geom.dso * c, geom.dso * s, np.zeros_like(c)], axis=-1)
    norm = np.sqrt(u * u + v * v + geom.dsd * geom.dsd)
    lx, ly, lz = -geom.dsd / norm, u / norm, -v / norm
    # Same rotation as _directions, written out for per-ray angles.
    dirs = np.stack([c * lx - s * ly, s * lx + c * ly, lz], axis=-1)
    return origins, dirs
