"""Compiled inner loops shared by the volume sampler and the projector.

Conventions: volumes are indexed ``vol[i, j, k]`` with ``i`` along x; a point
is inside the volume when its continuous voxel coordinate lies in
``[-0.5, n - 0.5]`` on every axis. Inside the box, neighbour indices are
clamped to the grid so the outer half-voxel shell extends the edge values.
Outside the box every sampler returns 0.
"""

import math

import numpy as np
from numba import njit

NEAREST, MEAN, TRILINEAR = 0, 1, 2
MODES = {"nearest": NEAREST, "mean": MEAN, "trilinear": TRILINEAR}


@njit(cache=True, inline="always")
def _axis(c, n):
    i0 = math.floor(c)
    f = c - i0
    i1 = i0 + 1
    if i0 < 0:
        i0 = 0
    if i1 > n - 1:
        i1 = n - 1
    if i0 > n - 1:
        i0 = n - 1
    if i1 < 0:
        i1 = 0
    return i0, i1, f


@njit(cache=True, inline="always")
def _inside(cx, cy, cz, nx, ny, nz):
    return (-0.5 <= cx <= nx - 0.5) and (-0.5 <= cy <= ny - 0.5) and (-0.5 <= cz <= nz - 0.5)


@njit(cache=True, inline="always")
def _trilinear(vol, cx, cy, cz):
    nx, ny, nz = vol.shape
    i0, i1, fx = _axis(cx, nx)
    j0, j1, fy = _axis(cy, ny)
    k0, k1, fz = _axis(cz, nz)
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    return (
        gx * gy * gz * vol[i0, j0, k0] + gx * gy * fz * vol[i0, j0, k1]
        + gx * fy * gz * vol[i0, j1, k0] + gx * fy * fz * vol[i0, j1, k1]
        + fx * gy * gz * vol[i1, j0, k0] + fx * gy * fz * vol[i1, j0, k1]
        + fx * fy * gz * vol[i1, j1, k0] + fx * fy * fz * vol[i1, j1, k1]
    )


@njit(cache=True, inline="always")
def _splat(vol, cx, cy, cz, value):
    # Exact transpose of _trilinear: same indices, same weights.
    nx, ny, nz = vol.shape
    i0, i1, fx = _axis(cx, nx)
    j0, j1, fy = _axis(cy, ny)
    k0, k1, fz = _axis(cz, nz)
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    vol[i0, j0, k0] += gx * gy * gz * value
    vol[i0, j0, k1] += gx * gy * fz * value
    vol[i0, j1, k0] += gx * fy * gz * value
    vol[i0, j1, k1] += gx * fy * fz * value
    vol[i1, j0, k0] += fx * gy * gz * value
    vol[i1, j0, k1] += fx * gy * fz * value
    vol[i1, j1, k0] += fx * fy * gz * value
    vol[i1, j1, k1] += fx * fy * fz * value


@njit(cache=True, inline="always")
def _nearest(vol, cx, cy, cz):
    nx, ny, nz = vol.shape
    i0, i1, fx = _axis(cx, nx)
    j0, j1, fy = _axis(cy, ny)
    k0, k1, fz = _axis(cz, nz)
    # Ties (f == 0.5) resolve to the lower index on that axis.
    i = i1 if fx > 0.5 else i0
    j = j1 if fy > 0.5 else j0
    k = k1 if fz > 0.5 else k0
    return vol[i, j, k]


@njit(cache=True, inline="always")
def _mean8(vol, cx, cy, cz):
    nx, ny, nz = vol.shape
    i0, i1, fx = _axis(cx, nx)
    j0, j1, fy = _axis(cy, ny)
    k0, k1, fz = _axis(cz, nz)
    # A coordinate exactly on a lattice plane collapses the cell on that axis.
    if fx == 0.0:
        i1 = i0
    if fy == 0.0:
        j1 = j0
    if fz == 0.0:
        k1 = k0
    # Pairwise halving: exact when a collapsed cell repeats one value.
    x0 = 0.5 * (0.5 * (vol[i0, j0, k0] + vol[i0, j0, k1]) + 0.5 * (vol[i0, j1, k0] + vol[i0, j1, k1]))
    x1 = 0.5 * (0.5 * (vol[i1, j0, k0] + vol[i1, j0, k1]) + 0.5 * (vol[i1, j1, k0] + vol[i1, j1, k1]))
    return 0.5 * (x0 + x1)


@njit(cache=True)
def sample_points(vol, origin, spacing, points, mode):
    n = points.shape[0]
    nx, ny, nz = vol.shape
    out = np.zeros(n)
    for p in range(n):
        cx = (points[p, 0] - origin[0]) / spacing[0]
        cy = (points[p, 1] - origin[1]) / spacing[1]
        cz = (points[p, 2] - origin[2]) / spacing[2]
        if not _inside(cx, cy, cz, nx, ny, nz):
            continue
        if mode == NEAREST:
            out[p] = _nearest(vol, cx, cy, cz)
        elif mode == MEAN:
            out[p] = _mean8(vol, cx, cy, cz)
        else:
            out[p] = _trilinear(vol, cx, cy, cz)
    return out


@njit(cache=True)
def project_rays(vol, origin, spacing, ray_o, ray_d, t_near, t_far, hit, m):
    """Midpoint-rule line integrals, one per ray."""
    n = ray_o.shape[0]
    nx, ny, nz = vol.shape
    out = np.zeros(n)
    for r in range(n):
        if not hit[r]:
            continue
        dt = (t_far[r] - t_near[r]) / m
        acc = 0.0
        for j in range(m):
            t = t_near[r] + (j + 0.5) * dt
            cx = (ray_o[r, 0] + t * ray_d[r, 0] - origin[0]) / spacing[0]
            cy = (ray_o[r, 1] + t * ray_d[r, 1] - origin[1]) / spacing[1]
            cz = (ray_o[r, 2] + t * ray_d[r, 2] - origin[2]) / spacing[2]
            if _inside(cx, cy, cz, nx, ny, nz):
                acc += _trilinear(vol, cx, cy, cz)
        out[r] = acc * dt
    return out


@njit(cache=True)
def backproject_rays(values, out, origin, spacing, ray_o, ray_d, t_near, t_far, hit, m):
    """Adjoint of :func:`project_rays`; accumulates into ``out`` in ray order."""
    n = ray_o.shape[0]
    nx, ny, nz = out.shape
    for r in range(n):
        if not hit[r] or values[r] == 0.0:
            continue
        dt = (t_far[r] - t_near[r]) / m
        w = values[r] * dt
        for j in range(m):
            t = t_near[r] + (j + 0.5) * dt
            cx = (ray_o[r, 0] + t * ray_d[r, 0] - origin[0]) / spacing[0]
            cy = (ray_o[r, 1] + t * ray_d[r, 1] - origin[1]) / spacing[1]
            cz = (ray_o[r, 2] + t * ray_d[r, 2] - origin[2]) / spacing[2]
            if _inside(cx, cy, cz, nx, ny, nz):
                _splat(out, cx, cy, cz, w)
    return out
