"""Ray-driven forward projection, its exact adjoint, and ray sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError
from .geometry import Ray, ScanGeometry, clip_rays, view_rays
from .volume import Volume

__all__ = [
    "ProjectionSet",
    "RaySamples",
    "sample_ray",
    "forward_project",
    "apply_A",
    "apply_At",
    "add_noise",
    "volume_origin",
]


@dataclass
class ProjectionSet:
    """Line-integral images, ``images[view, row, col]``, one view per angle."""

    geom: ScanGeometry
    images: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images)
        expected = (self.geom.n_views, self.geom.det_rows, self.geom.det_cols)
        if self.images.shape != expected:
            raise ValidationError(f"images shape {self.images.shape} does not match geometry {expected}")

    @property
    def angles(self) -> np.ndarray:
        return self.geom.angles

    def subset(self, view_indices) -> "ProjectionSet":
        idx = np.asarray(view_indices)
        return ProjectionSet(self.geom.with_angles(self.geom.angles[idx]), self.images[idx].copy())

    def split_even_odd(self) -> tuple["ProjectionSet", "ProjectionSet"]:
        """Interleaved split: even angle indices first, odd second."""
        n = self.geom.n_views
        return self.subset(np.arange(0, n, 2)), self.subset(np.arange(1, n, 2))


@dataclass
class RaySamples:
    points: np.ndarray
    t_values: np.ndarray
    delta_t: float


def sample_ray(ray: Ray, m: int, mode: str = "midpoint", rng=None) -> RaySamples:
    """Split ``[t_near, t_far]`` into ``m`` equal bins and take one point per bin.

    ``midpoint`` uses bin centres; ``stratified`` draws one uniform offset per
    bin from ``rng``.
    """
    if m < 1:
        raise ValidationError("need at least one sample per ray")
    if ray.t_near is None or ray.t_far is None:
        raise ValidationError("ray has no t limits; clip it to the volume first")
    dt = (ray.t_far - ray.t_near) / m
    if mode == "midpoint":
        offsets = np.full(m, 0.5)
    elif mode == "stratified":
        if rng is None:
            raise ValidationError("stratified sampling needs a random generator")
        offsets = rng.random(m)
    else:
        raise ValidationError(f"unknown sampling mode {mode!r}")
    t = ray.t_near + (np.arange(m) + offsets) * dt
    return RaySamples(ray.at(t), t, dt)


def volume_origin(geom: ScanGeometry) -> np.ndarray:
    return -0.5 * (np.asarray(geom.vol_dims, float) - 1.0) * np.asarray(geom.vol_spacing)


def _rays(geom):
    origins, dirs = view_rays(geom)
    origins = origins.reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs.reshape(-1, 3))
    t_near, t_far, hit = clip_rays(origins, dirs, geom)
    return np.ascontiguousarray(origins), dirs, t_near, t_far, hit


def _check_m(m):
    if int(m) < 1:
        raise ValidationError("need at least one sample per ray")
    return int(m)


def apply_A(x, geom: ScanGeometry, m: int) -> np.ndarray:
    """Forward operator: volume coefficients -> flattened projections."""
    m = _check_m(m)
    data = x.data if isinstance(x, Volume) else np.asarray(x)
    if data.size != int(np.prod(geom.vol_dims)):
        raise ValidationError(f"volume has {data.size} voxels, geometry expects {geom.vol_dims}")
    data = np.ascontiguousarray(data.reshape(geom.vol_dims), dtype=np.float64)
    o, d, tn, tf, hit = _rays(geom)
    return _kernels.project_rays(data, volume_origin(geom), np.asarray(geom.vol_spacing), o, d, tn, tf, hit, m)


def apply_At(y, geom: ScanGeometry, m: int) -> np.ndarray:
    """Adjoint of :func:`apply_A`: flattened projections -> ``vol_dims`` array."""
    m = _check_m(m)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(-1))
    n_rays = geom.n_views * geom.det_rows * geom.det_cols
    if y.size != n_rays:
        raise ValidationError(f"projection vector has {y.size} entries, geometry expects {n_rays}")
    o, d, tn, tf, hit = _rays(geom)
    out = np.zeros(geom.vol_dims)
    return _kernels.backproject_rays(y, out, volume_origin(geom), np.asarray(geom.vol_spacing), o, d, tn, tf, hit, m)


def forward_project(vol: Volume, geom: ScanGeometry, m: int) -> ProjectionSet:
    """Midpoint-rule line integrals of ``vol`` for every view and pixel."""
    if vol.dims != geom.vol_dims:
        raise ValidationError(f"volume dims {vol.dims} differ from geometry {geom.vol_dims}")
    images = apply_A(vol, geom, m).reshape(geom.n_views, geom.det_rows, geom.det_cols)
    return ProjectionSet(geom, images)


def add_noise(proj: ProjectionSet, level: float, rng) -> ProjectionSet:
    """Additive Gaussian noise with sigma = ``level * max(images)``."""
    if level < 0:
        raise ValidationError("noise level must be >= 0")
    if level == 0:
        return ProjectionSet(proj.geom, proj.images.copy())
    sigma = level * float(np.max(proj.images))
    noisy = proj.images + rng.normal(0.0, sigma, size=proj.images.shape)
    return ProjectionSet(proj.geom, noisy.astype(proj.images.dtype, copy=False))
