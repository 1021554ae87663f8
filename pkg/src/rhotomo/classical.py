"""Classical reconstructions used as attenuation priors: FDK and CGLS."""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericalError, ValidationError
from .projector import ProjectionSet, apply_A, apply_At
from .volume import Volume

__all__ = ["ramp_kernel", "ramp_filter", "fdk", "cgls", "angular_step"]


def ramp_kernel(n: int, spacing: float) -> np.ndarray:
    """Spatial Ram-Lak kernel ``h[k]`` for ``k = -(n-1) .. n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.shape)
    h[k == 0] = 1.0 / (4.0 * spacing**2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return h


def ramp_filter(images: np.ndarray, spacing: float) -> np.ndarray:
    """Row-wise Ram-Lak filtering along the last axis (linear convolution)."""
    n = images.shape[-1]
    size = 1 << int(math.ceil(math.log2(max(2 * n - 1, 2))))
    h = ramp_kernel(n, spacing)
    # Place the kernel so that output index c picks up h[c - c'].
    kernel = np.zeros(size)
    kernel[:n] = h[n - 1:]
    kernel[size - (n - 1):] = h[: n - 1]
    H = np.fft.rfft(kernel)
    G = np.fft.rfft(images, n=size, axis=-1)
    return np.fft.irfft(G * H, n=size, axis=-1)[..., :n] * spacing


def angular_step(angles) -> tuple[float, float]:
    """Per-view angular step and the scan-range factor (2 for short scans)."""
    a = np.unique(np.asarray(angles, float))
    n = len(np.asarray(angles))
    if len(a) < 2:
        return math.pi / max(n, 1), 1.0
    step = (a[-1] - a[0]) / (len(a) - 1) * len(a) / n
    coverage = step * n
    factor = 1.0 if coverage >= 2 * math.pi - 0.5 * step else 2.0
    return step, factor


def fdk(proj: ProjectionSet, m: int, clamp: bool = True) -> Volume:
    """Feldkamp-Davis-Kress reconstruction on a circular orbit.

    Cosine weighting, row-wise Ram-Lak filtering, then ray-driven
    backprojection through :func:`apply_At`. The ray density of that
    backprojector already scales as the inverse square distance to the source,
    so only a constant calibration factor is applied here.
    """
    geom = proj.geom
    if geom.n_views < 1:
        raise ValidationError("FDK needs at least one projection")
    u = (np.arange(geom.det_cols) - 0.5 * (geom.det_cols - 1)) * geom.det_spacing_u
    v = (np.arange(geom.det_rows) - 0.5 * (geom.det_rows - 1)) * geom.det_spacing_v
    weight = geom.dsd / np.sqrt(geom.dsd**2 + u[None, :] ** 2 + v[:, None] ** 2)
    filtered = ramp_filter(np.asarray(proj.images, float) * weight, geom.det_spacing_u)

    step, factor = angular_step(geom.angles)
    voxel = float(np.prod(geom.vol_spacing))
    scale = 0.5 * step * factor * geom.dso * geom.det_spacing_u * geom.det_spacing_v / (geom.dsd * voxel)
    data = apply_At(filtered.reshape(-1) * scale, geom, m)
    if clamp:
        np.maximum(data, 0.0, out=data)
    return Volume(data, geom.vol_spacing)


def cgls(proj: ProjectionSet, m: int, iters: int = 30, tol: float = 1e-6, clamp: bool = True):
    """Conjugate gradients on the normal equations ``A^T A x = A^T b``.

    Returns the reconstruction and the residual norms ``||b - A x||``, starting
    with the zero initial guess. Iteration stops after ``iters`` steps or once
    the relative residual drops to ``tol``. Non-negativity is imposed only on
    the returned volume.
    """
    if iters < 1:
        raise ValidationError("cgls needs iters >= 1")
    geom = proj.geom
    b = np.asarray(proj.images, dtype=np.float64).reshape(-1)
    x = np.zeros(geom.vol_dims)
    r = b.copy()
    s = apply_At(r, geom, m)
    p = s.copy()
    gamma = float(np.vdot(s, s))
    b_norm = float(np.linalg.norm(b))
    history = [b_norm]
    if b_norm == 0.0 or gamma == 0.0:
        return Volume(x, geom.vol_spacing), history
    for _ in range(iters):
        q = apply_A(p, geom, m)
        qq = float(np.vdot(q, q))
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * p
        r -= alpha * q
        res = float(np.linalg.norm(r))
        if not (math.isfinite(res) and math.isfinite(alpha)):
            raise NumericalError("non-finite value in CGLS iteration")
        history.append(res)
        if res <= tol * b_norm:
            break
        s = apply_At(r, geom, m)
        gamma_new = float(np.vdot(s, s))
        if gamma_new == 0.0:
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    if clamp:
        np.maximum(x, 0.0, out=x)
    return Volume(x, geom.vol_spacing), history
