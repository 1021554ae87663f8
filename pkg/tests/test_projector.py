import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import box_chord, shepp_logan_line_integral

from rhotomo.errors import ValidationError
from rhotomo.geometry import Ray, ScanGeometry, clip_to_volume, ray_for_pixel, uniform_angles, view_rays
from rhotomo.projector import (
    ProjectionSet,
    add_noise,
    apply_A,
    apply_At,
    forward_project,
    sample_ray,
)
from rhotomo.volume import Volume, shepp_logan_3d


def central_pixel(g):
    return g.det_rows // 2, g.det_cols // 2


def adjoint_gap(geom, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(geom.vol_dims)
    y = rng.standard_normal(geom.n_views * geom.det_rows * geom.det_cols)
    ax = apply_A(x, geom, m)
    return abs(ax @ y - np.vdot(x, apply_At(y, geom, m))) / (np.linalg.norm(ax) * np.linalg.norm(y))


class TestSampleRay:
    ray = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.0, 10.0)

    def test_midpoints(self):
        s = sample_ray(self.ray, 5)
        np.testing.assert_allclose(s.t_values, [1, 3, 5, 7, 9])
        assert s.delta_t == 2.0
        np.testing.assert_allclose(s.points[:, 0], s.t_values)

    def test_single_bin(self):
        ray = Ray(np.zeros(3), np.array([0.0, 1.0, 0.0]), 2.0, 4.0)
        np.testing.assert_allclose(sample_ray(ray, 1).t_values, [3.0])

    def test_stratified_bins(self):
        rng = np.random.default_rng(0)
        m = 7
        edges = np.arange(m) * (10.0 / m)
        for _ in range(10_000 // m + 1):
            t = sample_ray(self.ray, m, "stratified", rng).t_values
            assert np.all(t >= edges) and np.all(t < edges + 10.0 / m)

    def test_stratified_reproducible(self):
        a = sample_ray(self.ray, 9, "stratified", np.random.default_rng(5)).t_values
        b = sample_ray(self.ray, 9, "stratified", np.random.default_rng(5)).t_values
        np.testing.assert_array_equal(a, b)

    def test_midpoint_ignores_rng(self):
        a = sample_ray(self.ray, 4, "midpoint", np.random.default_rng(1)).t_values
        np.testing.assert_array_equal(a, sample_ray(self.ray, 4).t_values)

    @pytest.mark.parametrize("kw", [{"m": 0}, {"m": 3, "mode": "other"}, {"m": 3, "mode": "stratified"}])
    def test_errors(self, kw):
        with pytest.raises(ValidationError):
            sample_ray(self.ray, **kw)

    def test_unclipped_ray(self):
        with pytest.raises(ValidationError):
            sample_ray(Ray(np.zeros(3), np.array([1.0, 0, 0])), 3)


class TestForwardProject:
    def test_uniform_cube_central_ray(self):
        g = ScanGeometry(1000.0, 1500.0, 9, 9, 1.0, 1.0, (16, 16, 16), (2.0, 2.0, 2.0), [0.0, 0.7])
        vol = Volume(np.ones((16, 16, 16)), (2.0, 2.0, 2.0))
        img = forward_project(vol, g, 4 * 16).images
        r, c = central_pixel(g)
        assert img[0, r, c] == pytest.approx(32.0, rel=0.01)

    def test_uniform_cube_matches_box_chord_everywhere(self):
        g = ScanGeometry.covering((12, 12, 12), (1.0, 1.0, 1.0), 50.0, 80.0, uniform_angles(5, 0, 2 * math.pi))
        img = forward_project(Volume(np.ones((12, 12, 12))), g, 48).images
        o, d = view_rays(g)
        expect = np.array([box_chord(oo, dd, g.half_extent) for oo, dd in zip(o.reshape(-1, 3), d.reshape(-1, 3))])
        np.testing.assert_allclose(img.reshape(-1), expect, atol=1e-9)

    def test_shepp_logan_central_ray(self):
        n = 64
        g = ScanGeometry(400.0, 600.0, 3, 3, 1.0, 1.0, (n, n, n), (1.0, 1.0, 1.0), [0.0])
        vol = shepp_logan_3d((n, n, n))
        img = forward_project(vol, g, 4 * n).images
        ray = ray_for_pixel(0.0, 0.0, 0.0, g)
        expect = shepp_logan_line_integral(ray.origin, ray.direction, g.half_extent)
        assert img[0, 1, 1] == pytest.approx(expect, rel=0.02)

    def test_zero_volume(self, small_geom):
        assert not forward_project(Volume.zeros(small_geom.vol_dims), small_geom, 8).images.any()

    def test_misses_are_zero(self):
        g = ScanGeometry.covering((8, 8, 8), (1.0, 1.0, 1.0), 40.0, 60.0, [0.0])
        img = forward_project(Volume(np.ones((8, 8, 8))), g, 16).images
        assert img[0, 0, 0] == 0.0 and img[0, -1, -1] == 0.0

    def test_nonnegative(self, small_geom, rng):
        vol = Volume(rng.random(small_geom.vol_dims))
        assert forward_project(vol, small_geom, 16).images.min() >= 0.0

    def test_linearity(self, small_geom, rng):
        a, b = rng.standard_normal(small_geom.vol_dims), rng.standard_normal(small_geom.vol_dims)
        lhs = apply_A(2.5 * a - 0.75 * b, small_geom, 16)
        rhs = 2.5 * apply_A(a, small_geom, 16) - 0.75 * apply_A(b, small_geom, 16)
        assert np.abs(lhs - rhs).max() < 1e-9

    def test_dims_mismatch(self, small_geom):
        with pytest.raises(ValidationError):
            forward_project(Volume.zeros((8, 8, 8)), small_geom, 4)

    def test_midpoint_convergence(self):
        # Smooth blob: the error shrinks at least first order in m (second
        # order is what the midpoint rule delivers here).
        g = ScanGeometry.covering((16, 16, 16), (1.0, 1.0, 1.0), 60.0, 90.0, uniform_angles(4))
        vol = Volume.zeros((16, 16, 16))
        c = vol.voxel_centers()
        vol.data[...] = np.exp(-(c**2).sum(-1) / 18.0)
        ref = forward_project(vol, g, 4096).images
        err = [np.abs(forward_project(vol, g, m).images - ref).max() for m in (64, 128)]
        ratio = err[0] / err[1]
        assert ratio >= 2.0 * 0.7
        assert ratio == pytest.approx(4.0, rel=0.3)


class TestAdjoint:
    def test_adjointness(self, small_geom):
        for seed in range(5):
            assert adjoint_gap(small_geom, 16, seed) < 1e-10

    @given(st.integers(0, 2**32 - 1), st.integers(1, 9))
    def test_adjointness_random_geometry(self, seed, m):
        rng = np.random.default_rng(seed)
        dims = tuple(int(n) for n in rng.integers(3, 8, 3))
        g = ScanGeometry.covering(dims, tuple(rng.uniform(0.5, 2, 3)), 40.0, 70.0, rng.uniform(-7, 7, 3))
        assert adjoint_gap(g, m, seed) < 1e-10

    def test_zero_projections(self, small_geom):
        y = np.zeros(small_geom.n_views * small_geom.det_rows * small_geom.det_cols)
        assert not apply_At(y, small_geom, 8).any()

    def test_one_hot_support(self, small_geom):
        x = np.zeros(small_geom.vol_dims)
        ijk = (5, 9, 7)
        x[ijk] = 1.0
        img = apply_A(x, small_geom, 64)
        centre = (np.array(ijk) - (np.array(small_geom.vol_dims) - 1) / 2) * np.array(small_geom.vol_spacing)
        o, d = view_rays(small_geom)
        o, d = o.reshape(-1, 3), d.reshape(-1, 3)
        # Perpendicular distance of each ray to the voxel centre.
        w = centre - o
        dist = np.linalg.norm(w - (w * d).sum(1)[:, None] * d, axis=1)
        assert img.max() > 0
        assert np.all(dist[img > 0] < math.sqrt(3) * 1.0 + 1e-9)

    def test_size_errors(self, small_geom):
        with pytest.raises(ValidationError):
            apply_A(np.zeros(10), small_geom, 4)
        with pytest.raises(ValidationError):
            apply_At(np.zeros(10), small_geom, 4)
        with pytest.raises(ValidationError):
            apply_A(np.zeros(small_geom.vol_dims), small_geom, 0)


class TestProjectionSet:
    def test_shape_checked(self, small_geom):
        with pytest.raises(ValidationError):
            ProjectionSet(small_geom, np.zeros((1, 2, 3)))

    def test_split_even_odd(self):
        g = ScanGeometry.covering((8, 8, 8), (1.0, 1.0, 1.0), 40.0, 60.0, uniform_angles(100))
        proj = ProjectionSet(g, np.arange(100.0)[:, None, None] * np.ones((100, g.det_rows, g.det_cols)))
        train, test = proj.split_even_odd()
        assert train.geom.n_views == test.geom.n_views == 50
        union = np.sort(np.concatenate([train.angles, test.angles]))
        np.testing.assert_array_equal(union, g.angles)
        np.testing.assert_array_equal(train.images[:, 0, 0], np.arange(0, 100, 2))


class TestNoise:
    def test_zero_level_identical(self, small_geom, rng):
        proj = ProjectionSet(small_geom, rng.random((8, small_geom.det_rows, small_geom.det_cols)))
        out = add_noise(proj, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.images, proj.images)
        assert out.images is not proj.images

    def test_sigma(self):
        g = ScanGeometry(100.0, 150.0, 1000, 1000, 1.0, 1.0, (8, 8, 8), (1.0, 1.0, 1.0), [0.0])
        clean = np.full((1, 1000, 1000), 2.0)
        clean[0, 0, 0] = 5.0
        noisy = add_noise(ProjectionSet(g, clean), 0.03, np.random.default_rng(3)).images
        assert np.std(noisy - clean) == pytest.approx(0.03 * 5.0, rel=0.05)
        assert abs(np.mean(noisy - clean)) < 0.01 * 0.15

    def test_reproducible(self, small_geom, rng):
        proj = ProjectionSet(small_geom, rng.random((8, small_geom.det_rows, small_geom.det_cols)))
        a = add_noise(proj, 0.03, np.random.default_rng(9)).images
        b = add_noise(proj, 0.03, np.random.default_rng(9)).images
        np.testing.assert_array_equal(a, b)

    def test_negative_level(self, small_geom):
        with pytest.raises(ValidationError):
            add_noise(ProjectionSet(small_geom, np.zeros((8, small_geom.det_rows, small_geom.det_cols))), -0.1, None)
