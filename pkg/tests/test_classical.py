import math

import numpy as np
import pytest

from rhotomo.classical import angular_step, cgls, fdk, ramp_filter, ramp_kernel
from rhotomo.errors import NumericalError, ValidationError
from rhotomo.geometry import ScanGeometry, uniform_angles
from rhotomo.metrics import psnr
from rhotomo.projector import ProjectionSet, apply_A, apply_At, forward_project
from rhotomo.volume import Volume, shepp_logan_3d


def noiseless(dims, n_views, stop=2 * math.pi, m=None):
    vol = shepp_logan_3d(dims)
    g = ScanGeometry.covering(dims, (1.0, 1.0, 1.0), 4.0 * dims[0], 6.0 * dims[0], uniform_angles(n_views, 0, stop))
    return vol, forward_project(vol, g, m or 4 * dims[0])


class TestRamp:
    def test_kernel_values(self):
        h = ramp_kernel(4, 0.5)
        # k = -3..3: -1/(pi k tau)^2 for odd k, 1/(4 tau^2) at 0, 0 for even k.
        tau = 0.5
        expect = [-1 / (math.pi * 3 * tau) ** 2, 0, -1 / (math.pi * tau) ** 2, 1 / (4 * tau**2),
                  -1 / (math.pi * tau) ** 2, 0, -1 / (math.pi * 3 * tau) ** 2]
        np.testing.assert_allclose(h, expect)

    @pytest.mark.parametrize("n", [1, 2, 7, 16, 33])
    def test_fft_equals_direct_convolution(self, n, rng):
        rows = rng.standard_normal((3, n))
        h = ramp_kernel(n, 1.3)
        direct = np.array([np.convolve(r, h)[n - 1:2 * n - 1] for r in rows]) * 1.3
        np.testing.assert_allclose(ramp_filter(rows, 1.3), direct, atol=1e-12)

    def test_removes_constant_far_from_edges(self):
        # The Ram-Lak kernel sums to ~0, so a long constant row filters to ~0 mid-row.
        out = ramp_filter(np.ones((1, 401)), 1.0)
        assert abs(out[0, 200]) < 1e-3


class TestAngularStep:
    def test_full_scan(self):
        step, factor = angular_step(uniform_angles(360, 0, 2 * math.pi))
        assert step == pytest.approx(2 * math.pi / 360) and factor == 1.0

    def test_half_scan(self):
        step, factor = angular_step(uniform_angles(100))
        assert step == pytest.approx(math.pi / 100) and factor == 2.0

    def test_single_view(self):
        assert angular_step([0.3])[1] == 1.0


class TestFDK:
    def test_zero_projections(self, small_geom):
        proj = ProjectionSet(small_geom, np.zeros((8, small_geom.det_rows, small_geom.det_cols)))
        out = fdk(proj, 16)
        assert out.dims == small_geom.vol_dims and not out.data.any()
        assert out.spacing == small_geom.vol_spacing

    def test_linear_before_clamp(self, small_geom, rng):
        proj = ProjectionSet(small_geom, rng.random((8, small_geom.det_rows, small_geom.det_cols)))
        a = fdk(ProjectionSet(small_geom, 3.5 * proj.images), 16, clamp=False).data
        b = 3.5 * fdk(proj, 16, clamp=False).data
        assert np.abs(a - b).max() < 1e-9

    def test_clamped_nonnegative(self, small_geom, rng):
        proj = ProjectionSet(small_geom, rng.standard_normal((8, small_geom.det_rows, small_geom.det_cols)))
        assert fdk(proj, 16).data.min() >= 0.0

    def test_calibrated_centre(self):
        vol, proj = noiseless((32, 32, 32), 180)
        rec = fdk(proj, 128)
        c = rec.data[14:18, 14:18, 14:18].mean()
        assert c == pytest.approx(vol.data[14:18, 14:18, 14:18].mean(), rel=0.05)

    def test_short_scan_factor(self):
        # A half-turn scan with the factor 2 lands near the full-scan level.
        vol, full = noiseless((32, 32, 32), 120)
        _, half = noiseless((32, 32, 32), 60, stop=math.pi)
        a = fdk(full, 128).data[12:20, 12:20, 12:20].mean()
        b = fdk(half, 128).data[12:20, 12:20, 12:20].mean()
        assert b == pytest.approx(a, rel=0.1)

    def test_sparse_worse_than_dense(self):
        vol, dense = noiseless((24, 24, 24), 120)
        _, sparse = noiseless((24, 24, 24), 12)
        assert psnr(fdk(sparse, 96).data, vol.data, 1.0) < psnr(fdk(dense, 96).data, vol.data, 1.0)


class TestCGLS:
    def setup_method(self):
        self.g = ScanGeometry.covering((8, 8, 8), (1.0, 1.0, 1.0), 40.0, 60.0, uniform_angles(4))
        self.x = np.random.default_rng(0).random((8, 8, 8))
        self.b = ProjectionSet(self.g, apply_A(self.x, self.g, 16).reshape(4, self.g.det_rows, self.g.det_cols))

    def test_monotone_history(self):
        _, hist = cgls(self.b, 16, iters=60, tol=0.0)
        assert hist[0] == pytest.approx(np.linalg.norm(self.b.images))
        assert np.all(np.diff(hist) <= 0)

    def test_first_iteration_is_scaled_backprojection(self):
        vol, hist = cgls(self.b, 16, iters=1, tol=0.0, clamp=False)
        s = apply_At(self.b.images, self.g, 16)
        alpha = np.vdot(s, s) / np.sum(apply_A(s, self.g, 16) ** 2)
        np.testing.assert_allclose(vol.data, alpha * s, rtol=1e-10, atol=1e-14)
        assert len(hist) == 2

    def test_tolerance_stops_early(self):
        _, hist = cgls(self.b, 16, iters=500, tol=1e-3)
        assert len(hist) < 501
        assert hist[-1] <= 1e-3 * hist[0]

    def test_zero_data(self):
        zero = ProjectionSet(self.g, np.zeros_like(self.b.images))
        vol, hist = cgls(zero, 16, iters=5)
        assert not vol.data.any() and hist == [0.0]

    def test_clamp_at_end(self):
        neg = ProjectionSet(self.g, -self.b.images)
        assert cgls(neg, 16, iters=5)[0].data.min() >= 0.0
        assert cgls(neg, 16, iters=5, clamp=False)[0].data.min() < 0.0

    def test_bad_iters(self):
        with pytest.raises(ValidationError):
            cgls(self.b, 16, iters=0)

    def test_non_finite(self):
        bad = self.b.images.copy()
        bad[0, 3, 3] = np.inf
        with pytest.raises(NumericalError):
            cgls(ProjectionSet(self.g, bad), 16, iters=3)

    def test_output_geometry(self):
        vol, _ = cgls(self.b, 16, iters=2)
        assert isinstance(vol, Volume) and vol.dims == (8, 8, 8) and vol.spacing == (1.0, 1.0, 1.0)
