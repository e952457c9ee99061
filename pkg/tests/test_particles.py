"""The interacting-particle system: sampling, Euler-Maruyama stepping,
marginal reconstruction, velocity representation, and the pathwise probes."""

import math
import types
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from vortexlab import (
    FieldError,
    Grid2D,
    ParticleEnsemble,
    ScalarField,
    SdeConfig,
    StabilityError,
    biot_savart_field,
    blob_kernel,
    em_step,
    gradient_velocity,
    interpolate_velocity,
    lamb_oseen,
    marginal_density,
    pathwise_uniqueness_probe,
    sample_initial,
    simulate,
    velocity_representation,
)
from vortexlab.solver import grid_drift_provider
from vortexlab import verification


def _cfg(**kw):
    base = dict(nu=0.1, t_end=1.0, dt=0.05, n_particles=100, seed=0,
                method="direct")
    base.update(kw)
    return SdeConfig(**base)


class TestSampleInitial:
    def test_single_atom_all_at_origin(self):
        ens = sample_initial([(1.0, (0.0, 0.0))], 250, seed=4)
        assert ens.n == 250
        assert np.all(ens.positions == 0.0)
        assert ens.time == 0.0

    def test_gaussian_density_clt(self, gaussian64):
        n = 100_000
        ens = sample_initial(gaussian64, n, seed=7)
        mean = ens.positions.mean(axis=0)
        assert np.all(np.abs(mean) <= 3.0 / math.sqrt(n))
        cov = np.cov(ens.positions.T)
        # cell jitter adds dx^2/12 per axis on top of the unit target
        assert abs(cov[0, 0] - 1.0) <= 0.05
        assert abs(cov[1, 1] - 1.0) <= 0.05
        assert abs(cov[0, 1]) <= 0.02

    def test_same_seed_bitwise(self, gaussian64):
        a = sample_initial(gaussian64, 1000, seed=3)
        b = sample_initial(gaussian64, 1000, seed=3)
        assert np.array_equal(a.positions, b.positions)
        c = sample_initial(gaussian64, 1000, seed=4)
        assert not np.array_equal(a.positions, c.positions)

    def test_rejects_non_probability(self, grid64):
        lopsided = lamb_oseen.gaussian_density(grid64, 0.5, mass=2.0)
        with pytest.raises(FieldError, match="mass"):
            sample_initial(lopsided, 10, seed=0)
        signed = ScalarField(grid64, np.full((64, 64), -0.1))
        with pytest.raises(FieldError, match="negative"):
            sample_initial(signed, 10, seed=0)

    def test_categorical_atom_weights(self):
        atoms = [(0.25, (-1.0, 0.0)), (0.75, (1.0, 0.0))]
        ens = sample_initial(atoms, 10_000, seed=9)
        frac_right = np.mean(ens.positions[:, 0] > 0)
        assert frac_right == pytest.approx(0.75, abs=0.02)

    def test_mollified_atom_spread(self):
        s0 = 0.04
        ens = sample_initial([(1.0, (0.5, -0.5))], 20_000, seed=1,
                             sigma0_sq=s0)
        assert np.allclose(ens.positions.mean(axis=0), (0.5, -0.5), atol=0.01)
        var = ens.positions.var(axis=0)
        assert np.all(np.abs(var - s0) <= 0.05 * s0)

    def test_mollification_rejections(self, gaussian64):
        with pytest.raises(FieldError, match="atomic"):
            sample_initial(gaussian64, 10, seed=0, sigma0_sq=0.1)
        with pytest.raises(FieldError, match="nonnegative"):
            sample_initial([(1.0, (0.0, 0.0))], 10, seed=0, sigma0_sq=-0.1)


class TestEmStep:
    def test_brownian_displacement_scaling(self):
        """A single particle has no interaction drift, so one step of size
        dt is exactly sqrt(2 nu dt) times a standard 2D Gaussian: the mean
        squared displacement over many independent runs must be 4 nu dt."""
        nu = 0.25
        cfg = _cfg(nu=nu, t_end=1.0, dt=1.0, n_particles=1)
        total = 0.0
        m = 10_000
        for seed in range(m):
            ens = ParticleEnsemble(np.zeros((1, 2)), seed=seed)
            out = em_step(ens, cfg)
            total += float(np.sum((out.positions - ens.positions) ** 2))
        assert total / m == pytest.approx(4 * nu * 1.0, rel=0.05)

    def test_no_noise_no_drift_stationary(self):
        cfg = _cfg(nu=0.0, n_particles=1)
        ens = ParticleEnsemble(np.array([[0.4, -1.2]]), seed=0)
        for _ in range(5):
            ens = em_step(ens, cfg)
        assert np.array_equal(ens.positions, [[0.4, -1.2]])

    def test_pair_rotation_matches_ode_oracle(self):
        """Two half-weight blobs at separation d rotate about their center;
        the Euler path angle must track a high-order integration of the same
        two-body field to 1%, and that oracle itself matches the closed-form
        angular speed 1/(2 pi d^2)."""
        d, delta, T = 1.0, 0.01, 2.0
        cfg = _cfg(nu=0.0, t_end=T, dt=0.05, n_particles=2, delta=delta)
        ens = ParticleEnsemble(np.array([[-d / 2, 0.0], [d / 2, 0.0]]), seed=0)
        for _ in range(round(T / cfg.dt)):
            ens = em_step(ens, cfg)

        def swept(p):  # counterclockwise angle from the start at angle pi
            return (math.atan2(p[1], p[0]) - math.pi) % (2 * math.pi)

        theta_em = swept(ens.positions[0])

        def rhs(t, z):
            v1 = 0.5 * blob_kernel(z[:2] - z[2:], delta)
            v2 = 0.5 * blob_kernel(z[2:] - z[:2], delta)
            return np.concatenate([v1, v2])

        sol = solve_ivp(rhs, (0.0, T), [-d / 2, 0.0, d / 2, 0.0],
                        rtol=1e-12, atol=1e-14)
        theta_ref = swept(sol.y[:2, -1])
        omega = 1.0 / (2.0 * math.pi * d**2)
        assert theta_ref == pytest.approx(omega * T, rel=1e-4)
        assert theta_em == pytest.approx(theta_ref, rel=0.01)

    def test_stability_violation_reports_admissible(self):
        cfg = _cfg(nu=0.0, dt=0.1, n_particles=2, delta=0.01)
        close = ParticleEnsemble(np.array([[0.0, 0.0], [0.02, 0.0]]), seed=0)
        with pytest.raises(StabilityError) as err:
            em_step(close, cfg)
        assert err.value.dt == 0.1
        assert 0 < err.value.admissible < 0.1


class TestMarginalDensity:
    def test_point_cloud_reproduces_kernel(self):
        """All particles at one point: the KDE is the (periodized, slightly
        cell-broadened) Gaussian of the bandwidth, with mass exactly 1."""
        g = Grid2D(8.0, 128)
        h = 0.3
        p = (0.3, -0.2)
        ens = ParticleEnsemble(np.tile(p, (500, 1)), seed=0)
        kde = marginal_density(ens, g, bandwidth=h)
        assert kde.mass() == pytest.approx(1.0, abs=1e-12)
        assert kde.min() >= 0.0
        target = lamb_oseen.gaussian_density(g, h**2, center=p)
        l1 = float(np.sum(np.abs(kde.values - target.values)) * g.cell_area)
        assert l1 <= 0.02

    def test_l1_error_decreases_with_n(self):
        g = Grid2D(12.0, 64)
        truth = lamb_oseen.gaussian_density(g, 1.0)
        medians = []
        for n in (1_000, 10_000, 100_000):
            errs = []
            for seed in (0, 1, 2):
                pos = np.random.default_rng(seed).standard_normal((n, 2))
                kde = marginal_density(ParticleEnsemble(pos, seed=seed), g)
                errs.append(float(np.sum(np.abs(kde.values - truth.values))
                                  * g.cell_area))
            medians.append(float(np.median(errs)))
        assert medians[0] > medians[1] > medians[2]

    def test_nonnegative_unit_mass_random(self, grid64):
        for seed in range(5):
            pos = np.random.default_rng(seed).uniform(-3, 3, (400, 2))
            kde = marginal_density(ParticleEnsemble(pos, seed=seed), grid64)
            assert kde.min() >= 0.0
            assert kde.mass() == pytest.approx(1.0, abs=1e-8)

    def test_bad_bandwidth_rejected(self, grid64):
        ens = ParticleEnsemble(np.zeros((10, 2)), seed=0)
        with pytest.raises(FieldError, match="bandwidth"):
            marginal_density(ens, grid64, bandwidth=-0.5)
        # degenerate cloud cannot use the automatic rule either
        with pytest.raises(FieldError, match="bandwidth"):
            marginal_density(ens, grid64)


class TestSimulate:
    def test_bitwise_determinism(self, gaussian64):
        cfg = _cfg(nu=0.05, t_end=0.2, dt=0.05, n_particles=400, seed=11,
                   kde_grid=Grid2D(12.0, 64))
        a = simulate(gaussian64, cfg)
        b = simulate(gaussian64, cfg)
        assert np.array_equal(a.ensembles[-1].positions,
                              b.ensembles[-1].positions)
        assert np.array_equal(a.kde_fields[-1].values, b.kde_fields[-1].values)
        assert a.diagnostics == b.diagnostics

    def test_restart_continues_same_noise_path(self, gaussian64):
        cfg = _cfg(nu=0.05, t_end=0.2, dt=0.05, n_particles=300, seed=2,
                   snapshot_times=(0.0, 0.1, 0.2))
        full = simulate(gaussian64, cfg)
        mid = full.ensemble_at(0.1)
        cont = simulate(mid, replace(cfg, t_end=0.1, snapshot_times=(0.1,)))
        assert cont.times[-1] == pytest.approx(0.2)
        assert np.array_equal(cont.ensembles[-1].positions,
                              full.ensemble_at(0.2).positions)

    def test_reference_discrepancy_recorded(self):
        g = Grid2D(8.0, 64)
        nu, s0 = 0.1, 0.09
        cfg = _cfg(nu=nu, t_end=0.2, dt=0.05, n_particles=3000, seed=5,
                   kde_grid=g)
        off = s0 / (2 * nu)
        ref = lambda t: lamb_oseen.vorticity_field(g, t + off, nu)
        traj = simulate([(1.0, (0.0, 0.0))], cfg, reference=ref, sigma0_sq=s0)
        assert traj.meta["mollified_measure"]["time_offset"] == pytest.approx(off)
        for d in traj.diagnostics:
            assert 0 <= d["e_l1"] <= 0.5
            assert math.isfinite(d["kde_l43"])

    def test_zero_viscosity_mollification_has_no_time_offset(self):
        cfg = _cfg(nu=0.0, t_end=0.05, dt=0.05, n_particles=500, seed=1)
        traj = simulate([(1.0, (0.0, 0.0))], cfg, sigma0_sq=0.04)
        entry = traj.meta["mollified_measure"]
        assert entry["sigma0_sq"] == 0.04
        assert "time_offset" not in entry

    def test_ensemble_input_validation(self, gaussian64):
        cfg = _cfg(n_particles=50)
        ens = sample_initial(gaussian64, 50, seed=0)
        with pytest.raises(FieldError, match="sampling a measure"):
            simulate(ens, cfg, sigma0_sq=0.1)
        with pytest.raises(FieldError, match="particles"):
            simulate(sample_initial(gaussian64, 40, seed=0), cfg)


class TestVelocityRepresentation:
    def test_oseen_azimuthal_profile(self):
        """Particles drawn from the self-similar law carry its velocity:
        the KDE-reconstructed field matches the closed-form azimuthal speed
        at r in {1, 2} to 5%."""
        nu, t = 0.125, 2.0  # per-axis variance 2*nu*t = 0.5
        rng = np.random.default_rng(12)
        pos = math.sqrt(2 * nu * t) * rng.standard_normal((200_000, 2))
        g = Grid2D(12.0, 128)
        v = velocity_representation(ParticleEnsemble(pos, seed=12), g)
        for r in (1.0, 2.0):
            want = (1 - math.exp(-r**2 / (4 * nu * t))) / (2 * math.pi * r)
            got = interpolate_velocity(v, np.array([[r, 0.0]]))[0]
            assert abs(got[1]) == pytest.approx(want, rel=0.05)
            assert abs(got[0]) <= 0.05 * want

    def test_symmetric_cloud_centroid_velocity(self):
        n = 40_000
        pos = np.random.default_rng(3).standard_normal((n, 2))
        v = velocity_representation(ParticleEnsemble(pos, seed=3),
                                    Grid2D(12.0, 64))
        speed = np.hypot(*interpolate_velocity(v, np.zeros((1, 2)))[0])
        assert speed <= 5.0 / math.sqrt(n)

    def test_composition_identity(self, grid64):
        pos = np.random.default_rng(8).standard_normal((2000, 2))
        ens = ParticleEnsemble(pos, seed=8)
        via_rep = velocity_representation(ens, grid64, bandwidth=0.2)
        direct = biot_savart_field(marginal_density(ens, grid64, 0.2))
        assert np.array_equal(via_rep.vx, direct.vx)
        assert np.array_equal(via_rep.vy, direct.vy)

    def test_ensemble_requires_grid(self):
        ens = ParticleEnsemble(np.zeros((5, 2)), seed=0)
        with pytest.raises(FieldError, match="grid"):
            velocity_representation(ens)


@pytest.fixture(scope="module")
def oseen_reference():
    """Exact self-similar trajectory used as a frozen drift by the probes."""
    g = Grid2D(10.0, 128)
    times = np.round(np.arange(0.0, 0.5 + 1e-12, 0.025), 10)
    return lamb_oseen.exact_trajectory(g, times, nu=0.05, sigma0_sq=0.05)


class TestPathwiseProbe:
    def test_identical_drifts_zero_gap(self):
        cfg = _cfg(nu=0.05, t_end=0.2, dt=0.05, n_particles=64, seed=6)
        still = lambda t, pts: np.zeros_like(pts)
        rep = pathwise_uniqueness_probe(
            ParticleEnsemble(np.random.default_rng(6).standard_normal((64, 2)),
                             seed=6),
            cfg, drift_a=still, drift_b=still)
        assert rep["sup_mean_gap"] == 0.0

    def test_seed_mismatch_rejected(self, oseen_reference):
        cfg = _cfg(nu=0.05, t_end=0.5, dt=0.025, n_particles=64, seed=6)
        ens = ParticleEnsemble(np.zeros((64, 2)), seed=7)
        with pytest.raises(FieldError, match="seed"):
            pathwise_uniqueness_probe(None, cfg, oseen_reference, ens0=ens)

    def test_argument_validation(self, oseen_reference):
        cfg = _cfg(nu=0.05, t_end=0.5, dt=0.025, n_particles=16, seed=0)
        still = lambda t, pts: np.zeros_like(pts)
        with pytest.raises(FieldError, match="not both"):
            pathwise_uniqueness_probe(np.zeros((16, 2)), cfg, oseen_reference,
                                      drift_a=still, drift_b=still)
        with pytest.raises(FieldError, match="reference"):
            pathwise_uniqueness_probe(np.zeros((16, 2)), cfg)

    def test_drift_grid_refinement_shrinks_gap(self, oseen_reference):
        """Coarse-vs-native drift interpolation gap shrinks when the coarse
        grid is refined (the drift error is the only difference between the
        two noise-coupled systems)."""
        u0 = oseen_reference.fields[0]
        cfg = _cfg(nu=0.05, t_end=0.5, dt=0.025, n_particles=1024, seed=9)
        rep32 = pathwise_uniqueness_probe(u0, cfg, oseen_reference, coarse_n=32)
        rep64 = pathwise_uniqueness_probe(u0, cfg, oseen_reference, coarse_n=64)
        assert rep32["coarse_n"] == 32 and rep32["fine_n"] == 128
        assert 0 < rep64["sup_mean_gap"] < rep32["sup_mean_gap"] <= 0.05
        assert rep32["sup_mean_gap"] / rep64["sup_mean_gap"] >= 1.5

    def test_perturbed_start_gronwall_report(self, oseen_reference):
        """Shift every initial position by 1e-3 and rerun on the same noise;
        the terminal gap over the initial gap is reported against the
        Gronwall bound exp(Lambda T) with Lambda the measured drift Lipschitz
        proxy (reported, not asserted)."""
        T = 0.5
        drift = grid_drift_provider(
            oseen_reference.times,
            [biot_savart_field(f) for f in oseen_reference.fields])
        cfg = _cfg(nu=0.05, t_end=T, dt=0.025, n_particles=512, seed=5)
        base = sample_initial(oseen_reference.fields[0], 512, seed=5)
        shifted = ParticleEnsemble(base.positions + 1e-3, seed=5)
        ta = simulate(base, cfg, drift_field=drift)
        tb = simulate(shifted, cfg, drift_field=drift)
        gap0 = math.sqrt(2.0) * 1e-3
        gap = float(np.mean(np.hypot(
            *(ta.ensembles[-1].positions - tb.ensembles[-1].positions).T)))
        lam = max(float(gradient_velocity(f).frobenius().max())
                  for f in oseen_reference.fields)
        print(f"\nperturbed-start growth: C = {gap / gap0:.4f}, "
              f"Gronwall bound exp(Lambda T) = {math.exp(lam * T):.4f} "
              f"(Lambda = {lam:.4f})")
        assert math.isfinite(gap) and gap > 0


class TestInvariants:
    def test_exchangeability(self, grid64):
        rng = np.random.default_rng(10)
        pos = rng.standard_normal((3000, 2))
        perm = rng.permutation(3000)
        a = marginal_density(ParticleEnsemble(pos, seed=0), grid64, 0.15)
        b = marginal_density(ParticleEnsemble(pos[perm], seed=0), grid64, 0.15)
        assert np.allclose(a.values, b.values, rtol=0, atol=1e-12 * a.max())

    def test_centroid_conserved_without_noise(self):
        """Antisymmetric pairwise kernel: the ensemble centroid is invariant
        under the pure drift flow (direct summation)."""
        cfg = _cfg(nu=0.0, t_end=1.0, dt=0.05, n_particles=200)
        ens = ParticleEnsemble(
            np.random.default_rng(2).standard_normal((200, 2)), seed=2)
        c_prev = ens.centroid()
        for _ in range(20):
            ens = em_step(ens, cfg)
            c = ens.centroid()
            assert np.max(np.abs(c - c_prev)) <= 1e-10
            c_prev = c

    def test_diffusion_scaling_without_drift(self):
        nu, dt, steps = 0.1, 0.05, 20
        cfg = _cfg(nu=nu, t_end=1.0, dt=dt, n_particles=5000,
                   drift_enabled=False)
        ens = ParticleEnsemble(np.zeros((5000, 2)), seed=3)
        for _ in range(steps):
            ens = em_step(ens, cfg)
        var = float(ens.positions.var())
        assert var == pytest.approx(2 * nu * dt * steps, rel=0.05)

    def test_kde_marginals_satisfy_weak_form(self):
        """The smoothed empirical law, pushed through the distributional-form
        residual, sits at the sampling noise floor (calibrated constant on
        top of the N^(-1/2) scale; bandwidth ~ N^(-1/4) keeps the smoothing
        bias at the same order)."""
        g = Grid2D(10.0, 64)
        n = 20_000
        u0 = lamb_oseen.gaussian_density(g, 0.3)
        cfg = _cfg(nu=0.1, t_end=0.5, dt=0.02, n_particles=n, seed=1,
                   method="treecode", kde_grid=g,
                   bandwidth=math.sqrt(0.3) * n ** -0.25,
                   snapshot_times=tuple(np.round(
                       np.arange(0.0, 0.5 + 1e-12, 0.02), 10)))
        traj = simulate(u0, cfg)
        view = types.SimpleNamespace(times=traj.times, fields=traj.kde_fields,
                                     config=traj.config)
        rep = verification.weak_residual(view, u0)
        print(f"\nKDE weak-form residual: {rep.max_normalized:.2e} "
              f"(floor scale {1 / math.sqrt(n):.2e})")
        assert rep.max_normalized <= 1.0 / math.sqrt(n)


class TestSdeConfig:
    def test_validation(self):
        with pytest.raises(FieldError, match="viscosity"):
            _cfg(nu=-0.1)
        with pytest.raises(FieldError, match="dt"):
            _cfg(dt=0.0)
        with pytest.raises(FieldError, match="particle"):
            _cfg(n_particles=0)
        with pytest.raises(FieldError, match="method"):
            _cfg(method="magic")
        with pytest.raises(FieldError, match="kde_grid"):
            _cfg(method="grid")
        with pytest.raises(FieldError, match="delta"):
            _cfg(delta=-1.0)
        with pytest.raises(FieldError, match="bandwidth"):
            _cfg(bandwidth=0.0)

    def test_snapshot_lattice(self):
        with pytest.raises(FieldError, match="multiple of dt"):
            _cfg(dt=0.02, snapshot_times=(0.03,))
        with pytest.raises(FieldError, match="increasing"):
            _cfg(snapshot_times=(0.2, 0.1))
        cfg = _cfg(dt=0.02, snapshot_times=(0.04, 0.1))
        assert cfg.schedule() == (0.04, 0.1)
        assert _cfg().schedule() == (0.0, 1.0)
