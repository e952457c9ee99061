"""The velocity operator: kernel closed forms, grid inversion identities,
blob/treecode point evaluation, and the resolvent-smoothed variant."""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from vortexlab import (
    FieldError,
    ScalarField,
    biot_savart_field,
    blob_kernel,
    gradient,
    gradient_ratios,
    gradient_velocity,
    k_epsilon,
    kernel_eval,
    lamb_oseen,
    lp_norm,
    mean_free_part,
    resolvent,
    velocity_at_points,
)
from vortexlab import verification

from conftest import random_smooth_field


class TestKernel:
    def test_point_value(self):
        v = kernel_eval(np.array([1.0, 0.0]))
        assert v[0] == 0.0
        assert v[1] == pytest.approx(1 / (2 * math.pi), rel=1e-14)

    def test_antisymmetry(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((100, 2))
        assert np.allclose(kernel_eval(-x), -kernel_eval(x), rtol=0, atol=1e-15)

    def test_magnitude_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((100, 2)) * 3
        speed = np.hypot(*kernel_eval(x).T)
        assert np.max(np.abs(speed * 2 * math.pi * np.hypot(*x.T) - 1)) <= 1e-14

    def test_singular_at_origin(self):
        with pytest.raises(FieldError, match="singular"):
            kernel_eval(np.array([0.0, 0.0]))

    def test_blob_bounded(self):
        delta = 0.2
        rng = np.random.default_rng(2)
        x = rng.standard_normal((500, 2)) * 0.05
        speed = np.hypot(*blob_kernel(x, delta).T)
        # max of (1-e^{-s})/s type profile: |k_delta| <= C/delta with C < 1
        assert np.all(speed <= 1.0 / delta)
        assert np.allclose(blob_kernel(np.zeros((1, 2)), delta), 0.0)


class TestGridOperator:
    def test_divergence_and_curl(self, grid128):
        """Spectral div of K(u) vanishes and the curl recovers u, mode-wise
        with the mean mode excluded (the inversion cannot see the mean)."""
        u = lamb_oseen.gaussian_density(grid128, 0.5)
        y = biot_savart_field(u, method="torus")
        dvx = gradient(ScalarField(grid128, y.vx))
        dvy = gradient(ScalarField(grid128, y.vy))
        div = ScalarField(grid128, dvx.vx + dvy.vy)
        curl = dvy.vx - dvx.vy
        assert lp_norm(div, 2) <= 1e-10 * lp_norm(u, 2)
        gap = ScalarField(grid128, curl - mean_free_part(u).values)
        assert lp_norm(gap, 2) <= 1e-8 * lp_norm(u, 2)

    def test_azimuthal_speed_closed_form(self, grid128):
        """Radial Gaussian vorticity: speed is (1-e^{-r^2/2s^2})/(2 pi r).

        The closed form is independently confirmed by 1D quadrature of the
        enclosed circulation before being asserted against the solver.
        """
        s_sq = 0.36
        u = lamb_oseen.gaussian_density(grid128, s_sq)
        y = biot_savart_field(u)

        def circulation(r):
            dens = lambda rr: rr / s_sq * math.exp(-rr**2 / (2 * s_sq))
            return integrate.quad(dens, 0, r)[0] / (2 * math.pi * r) * 1.0

        s = math.sqrt(s_sq)
        for mult in (0.5, 1.0, 2.0):
            r = mult * s
            closed = (1 - math.exp(-r**2 / (2 * s_sq))) / (2 * math.pi * r)
            assert circulation(r) == pytest.approx(closed, rel=1e-9)
            i = np.argmin(np.abs(grid128.x1 - r))
            r_grid = abs(grid128.x1[i])
            want = (1 - math.exp(-r_grid**2 / (2 * s_sq))) / (2 * math.pi * r_grid)
            got = y.vy[i, np.argmin(np.abs(grid128.x1))]
            assert got == pytest.approx(want, abs=1e-6)

    def test_zero_field(self, grid32):
        y = biot_savart_field(ScalarField(grid32, np.zeros((32, 32))))
        assert np.all(y.vx == 0.0) and np.all(y.vy == 0.0)


class TestGradientVelocity:
    def test_trace_free(self, grid64):
        u = random_smooth_field(grid64, 5)
        tf = gradient_velocity(u)
        assert np.max(np.abs(tf.trace())) <= 1e-10 * lp_norm(u, 2)

    def test_curl_identity(self, grid64):
        u = random_smooth_field(grid64, 6)
        tf = gradient_velocity(u)
        diff = tf.asymmetry() - mean_free_part(u).values
        rel = lp_norm(ScalarField(grid64, diff), 2) / lp_norm(u, 2)
        assert rel <= 1e-8

    def test_riesz_bound_p2(self, grid64):
        """|grad K(u)|_2 / |u|_2 <= 1 + roundoff for 50 band-limited fields."""
        worst = 0.0
        for seed in range(50):
            u = random_smooth_field(grid64, seed)
            worst = max(worst, gradient_ratios(u)[2.0])
        assert worst <= 1.01


class TestPointEvaluation:
    def test_vortex_pair_speed(self):
        """Two half-weight vortices at separation d: each moves at
        (1/2)/(2 pi d), perpendicular to the separation (two-body closed
        form)."""
        d = 1.0
        delta = d / 100
        pos = np.array([[-d / 2, 0.0], [d / 2, 0.0]])
        w = np.array([0.5, 0.5])
        v = velocity_at_points((pos, w), pos, delta)
        want = 0.5 / (2 * math.pi * d)
        # first vortex is advected downward by the second (positive vorticity)
        assert v[0, 0] == pytest.approx(0.0, abs=1e-15)
        assert abs(v[0, 1]) == pytest.approx(want, rel=0.01)
        assert np.allclose(v[0], -v[1])

    def test_symmetric_cloud_centroid(self):
        rng = np.random.default_rng(7)
        n = 40000
        pos = rng.standard_normal((n, 2))
        w = np.full(n, 1.0 / n)
        v = velocity_at_points((pos, w), np.zeros((1, 2)), 0.05)
        assert np.hypot(v[0, 0], v[0, 1]) <= 3.0 / math.sqrt(n)

    def test_treecode_matches_direct(self):
        rng = np.random.default_rng(8)
        n = 10000
        pos = rng.standard_normal((n, 2))
        w = rng.random(n) / n
        delta = 0.02
        t0 = time.perf_counter()
        vd = velocity_at_points((pos, w), pos, delta, method="direct")
        t1 = time.perf_counter()
        vt = velocity_at_points((pos, w), pos, delta, method="treecode")
        t2 = time.perf_counter()
        scale = np.max(np.hypot(vd[:, 0], vd[:, 1]))
        err = np.max(np.hypot(vt[:, 0] - vd[:, 0], vt[:, 1] - vd[:, 1])) / scale
        print(f"\ntreecode vs direct, N={n}: max rel err {err:.2e}, "
              f"wall ratio {(t1 - t0) / (t2 - t1):.1f}x")
        assert err <= 1e-3

    def test_treecode_deterministic_and_permutation_stable(self):
        rng = np.random.default_rng(9)
        pos = rng.standard_normal((3000, 2))
        w = np.full(3000, 1 / 3000)
        tgt = rng.standard_normal((64, 2))
        a = velocity_at_points((pos, w), tgt, 0.05, method="treecode")
        b = velocity_at_points((pos, w), tgt, 0.05, method="treecode")
        assert np.array_equal(a, b)
        perm = rng.permutation(3000)
        c = velocity_at_points((pos[perm], w[perm]), tgt, 0.05, method="treecode")
        scale = np.max(np.hypot(a[:, 0], a[:, 1]))
        assert np.max(np.abs(c - a)) <= 1e-12 * scale

    def test_blob_consistency_order(self):
        """delta -> 0 recovers the principal-value sum at separated targets
        with observed order >= 1."""
        rng = np.random.default_rng(10)
        pos = rng.random((2000, 2)) * 0.5  # cloud in [0, 0.5]^2
        w = np.full(2000, 1 / 2000)
        tgt = np.array([[1.5, 1.2], [2.0, -0.3], [-0.8, 1.1]])
        exact = velocity_at_points((pos, w), tgt, 1e-12)
        scale = np.max(np.hypot(exact[:, 0], exact[:, 1]))
        deltas = [0.8, 0.6, 0.45]
        errs = [np.max(np.abs(velocity_at_points((pos, w), tgt, d) - exact)) / scale
                for d in deltas]
        order = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
        assert order >= 1.0

    def test_rejects_bad_parameters(self):
        pos = np.zeros((4, 2))
        w = np.full(4, 0.25)
        with pytest.raises(FieldError, match="delta"):
            velocity_at_points((pos, w), pos, 0.0)
        with pytest.raises(ValueError, match="theta"):
            velocity_at_points((pos + np.arange(8).reshape(4, 2), w), pos, 0.1,
                               method="treecode", theta=1.5)
        with pytest.raises(FieldError, match="grid"):
            velocity_at_points((pos, w), pos, 0.1, method="grid")


class TestResolventVelocity:
    def test_appendix_identity(self, grid64):
        """K_eps(z) = -K(z) + eps K(Phi_eps z), mode-wise exact."""
        z = lamb_oseen.gaussian_density(grid64, 0.4)
        for eps in (0.1, 1.0, 10.0):
            ke = k_epsilon(z, eps)
            k = biot_savart_field(z, method="torus")
            kphi = biot_savart_field(resolvent(z, eps), method="torus")
            rx = ke.vx + k.vx - eps * kphi.vx
            ry = ke.vy + k.vy - eps * kphi.vy
            resid = math.sqrt(lp_norm(ScalarField(grid64, rx), 2) ** 2
                              + lp_norm(ScalarField(grid64, ry), 2) ** 2)
            assert resid <= 1e-10 * lp_norm(z, 2)

    def test_comparison_bound(self, grid64):
        """|K_eps z|_2 <= 2 |K z|_2 across a bank of band-limited fields."""
        for seed in range(50):
            z = random_smooth_field(grid64, seed)
            k = biot_savart_field(z, method="torus")
            knorm = math.sqrt(lp_norm(ScalarField(grid64, k.vx), 2) ** 2
                              + lp_norm(ScalarField(grid64, k.vy), 2) ** 2)
            for eps in (0.01, 0.1, 1.0):
                ke = k_epsilon(z, eps)
                kenorm = math.sqrt(lp_norm(ScalarField(grid64, ke.vx), 2) ** 2
                                   + lp_norm(ScalarField(grid64, ke.vy), 2) ** 2)
                assert kenorm <= 2 * knorm * (1 + 1e-12)

    def test_eps_to_zero_convergence(self, grid64):
        z = random_smooth_field(grid64, 77)
        k = biot_savart_field(z, method="torus")
        gaps = []
        for eps in (1.0, 0.1, 0.01):
            ke = k_epsilon(z, eps)
            gaps.append(math.sqrt(lp_norm(ScalarField(grid64, ke.vx + k.vx), 2) ** 2
                                  + lp_norm(ScalarField(grid64, ke.vy + k.vy), 2) ** 2))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_young_type_ratio_bounded(self, grid64):
        """|K(z)|_4 / |z|_{4/3} stays bounded across a bank; the constant is
        empirical and only finiteness/positivity is asserted."""
        ratios = []
        for seed in range(20):
            z = random_smooth_field(grid64, seed)
            y = biot_savart_field(z, method="torus")
            y4 = (lp_norm(ScalarField(grid64, y.vx), 4) ** 4
                  + lp_norm(ScalarField(grid64, y.vy), 4) ** 4) ** 0.25
            ratios.append(y4 / lp_norm(z, 4 / 3))
        assert np.all(np.isfinite(ratios)) and np.all(np.array(ratios) > 0)
        print(f"\nempirical |K(z)|_4 / |z|_4/3 across bank: "
              f"max {max(ratios):.4f}, min {min(ratios):.4f}")


class TestResolventKernelStructure:
    """Pointwise structure of grad-perp g_eps: equals -k(x) m(eps |x|^2)
    with m in (0, 1], increasing to |k| as eps decreases."""

    def test_kernel_factor_structure(self):
        rng = np.random.default_rng(12)
        radii = rng.uniform(0.1, 5.0, 20)
        angles = rng.uniform(0, 2 * np.pi, 20)
        pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        for eps in (0.5, 2.0):
            for x in pts:
                gq = verification.resolvent_kernel_gradperp(x, eps, by="quadrature")
                gb = verification.resolvent_kernel_gradperp(x, eps, by="bessel")
                assert np.allclose(gq, gb, rtol=1e-8, atol=1e-12)
                k = kernel_eval(x)
                m = verification.resolvent_kernel_factor(eps * float(x @ x))
                assert 0.0 < m <= 1.0
                assert np.allclose(gq, -k * m, rtol=1e-8, atol=1e-12)

    def test_monotone_recovery_of_k(self):
        x = np.array([0.8, -0.3])
        k_mag = np.hypot(*kernel_eval(x))
        mags = [np.hypot(*verification.resolvent_kernel_gradperp(x, eps))
                for eps in (2.0, 0.5, 0.05)]
        assert mags[0] < mags[1] < mags[2] <= k_mag * (1 + 1e-9)
