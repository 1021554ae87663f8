"""Voxel volumes, the 3D Shepp-Logan phantom and prior interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError

__all__ = [
    "Volume",
    "SHEPP_LOGAN_3D",
    "shepp_logan_3d",
    "world_to_voxel",
    "voxel_to_world",
    "sample_prior",
    "PRIOR_MODES",
]

PRIOR_MODES = tuple(_kernels.MODES)


@dataclass
class Volume:
    """Dense attenuation grid, ``data[i, j, k]`` with ``i`` along x.

    ``origin`` is the world position of the centre of voxel ``(0, 0, 0)``;
    by default the volume box is centred on the world origin.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValidationError(f"volume data must be 3-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("volume data must be finite")
        self.spacing = tuple(float(s) for s in self.spacing)
        if min(self.spacing) <= 0:
            raise ValidationError("voxel spacing must be positive")
        if self.origin is None:
            self.origin = -0.5 * (np.asarray(self.dims, float) - 1.0) * np.asarray(self.spacing)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims, float) * np.asarray(self.spacing)

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0), dtype=np.float64):
        return cls(np.zeros(tuple(dims), dtype=dtype), spacing)

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel centre, shape ``dims + (3,)``."""
        axes = [self.origin[a] + np.arange(n) * self.spacing[a] for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing, self.origin.copy())


def world_to_voxel(p, vol: Volume) -> np.ndarray:
    return (np.asarray(p, float) - vol.origin) / np.asarray(vol.spacing)


def voxel_to_world(c, vol: Volume) -> np.ndarray:
    return np.asarray(c, float) * np.asarray(vol.spacing) + vol.origin


def sample_prior(vol: Volume, p, mode: str = "nearest"):
    """Prior attenuation at world point(s) ``p`` from the 8 surrounding voxels.

    ``mode`` is ``"nearest"``, ``"mean"`` or ``"trilinear"``. Points outside
    the volume box give 0. Accepts a single 3-vector (returns a float) or an
    ``(n, 3)`` array.
    """
    try:
        code = _kernels.MODES[mode]
    except KeyError:
        raise ValidationError(f"unknown prior mode {mode!r}; expected one of {PRIOR_MODES}") from None
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    data = np.ascontiguousarray(vol.data, dtype=np.float64)
    out = _kernels.sample_points(data, vol.origin, np.asarray(vol.spacing), pts, code)
    return float(out[0]) if single else out


# Kak & Slaney ellipsoid geometry with the non-negative "modified" contrast
# (Yu, Ye & Wang): summed values stay in [0, 1].
# columns: intensity, a, b, c, x0, y0, z0, phi (deg, about z)
SHEPP_LOGAN_3D = np.array([
    [1.0, 0.6900, 0.920, 0.900, 0.00, 0.000, 0.000, 0.0],
    [-0.8, 0.6624, 0.874, 0.880, 0.00, 0.000, 0.000, 0.0],
    [-0.2, 0.4100, 0.160, 0.210, -0.22, 0.000, -0.250, 108.0],
    [-0.2, 0.3100, 0.110, 0.220, 0.22, 0.000, -0.250, 72.0],
    [0.2, 0.2100, 0.250, 0.500, 0.00, 0.350, -0.250, 0.0],
    [0.2, 0.0460, 0.046, 0.046, 0.00, 0.100, -0.250, 0.0],
    [0.1, 0.0460, 0.023, 0.020, -0.08, -0.650, -0.250, 0.0],
    [0.1, 0.0460, 0.023, 0.020, 0.06, -0.650, -0.250, 90.0],
    [0.2, 0.0560, 0.040, 0.100, 0.06, -0.105, 0.625, 90.0],
    [-0.2, 0.0560, 0.056, 0.100, 0.00, 0.100, 0.625, 0.0],
])


def _x_intervals(y, z):
    """Per ellipsoid, the x-interval where a line parallel to x at ``(y, z)`` is inside.

    Yields ``(intensity, x_lo, x_hi)``; empty intervals have ``x_lo >= x_hi``.
    """
    for A, a, b, c, x0, y0, z0, phi in SHEPP_LOGAN_3D:
        cp, sp = np.cos(np.deg2rad(phi)), np.sin(np.deg2rad(phi))
        dy, dz = y - y0, z - z0
        # (cp*X + sp*dy)^2/a^2 + (-sp*X + cp*dy)^2/b^2 + dz^2/c^2 <= 1, X = x - x0
        qa = cp * cp / (a * a) + sp * sp / (b * b)
        qb = 2.0 * cp * sp * dy * (1.0 / (a * a) - 1.0 / (b * b))
        qc = dy * dy * (sp * sp / (a * a) + cp * cp / (b * b)) + dz * dz / (c * c) - 1.0
        disc = qb * qb - 4.0 * qa * qc
        root = np.sqrt(np.maximum(disc, 0.0))
        lo = np.where(disc > 0, (-qb - root) / (2 * qa), 0.0) + x0
        hi = np.where(disc > 0, (-qb + root) / (2 * qa), 0.0) + x0
        yield A, lo, hi


def shepp_logan_3d(dims, spacing=(1.0, 1.0, 1.0), supersample: int = 3) -> Volume:
    """3D Shepp-Logan phantom filling the volume box.

    The unit cube ``[-1, 1]^3`` of the ellipsoid table is stretched over the
    physical extent of the box. Voxels hold partial-volume fractions: exact
    along x (analytic chord overlap), averaged over a ``supersample^2``
    sub-grid in y and z.
    """
    dims = tuple(int(n) for n in dims)
    if min(dims) < 8:
        raise ValidationError(f"phantom needs dims >= 8 on every axis, got {dims}")
    s = int(supersample)
    if s < 1:
        raise ValidationError("supersample must be >= 1")
    nx, ny, nz = dims
    offsets = (np.arange(s) + 0.5) / s - 0.5

    def sub_centres(n):
        centres = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        return (centres[:, None] + offsets[None, :] * (2.0 / n)).reshape(-1)

    edges = np.linspace(-1.0, 1.0, nx + 1)
    width = 2.0 / nx
    ys = sub_centres(ny)
    data = np.empty(dims)
    # One z-slab of sub-lines at a time keeps memory bounded.
    for k in range(nz):
        y, z = np.meshgrid(ys, sub_centres(nz)[k * s:(k + 1) * s], indexing="ij")
        acc = np.zeros((ny * s, s, nx))
        for A, lo, hi in _x_intervals(y, z):
            cover = np.minimum(hi[..., None], edges[1:]) - np.maximum(lo[..., None], edges[:-1])
            acc += A * np.clip(cover, 0.0, None)
        data[:, :, k] = acc.reshape(ny, s, s, nx).sum(axis=(1, 2)).T / (s * s * width)
    np.clip(data, 0.0, 1.0, out=data)
    return Volume(data, spacing)
