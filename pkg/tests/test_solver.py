"""Nonlinear and linearized solves: stepping identities, conservation,
convergence, and the from-measure entry point."""

import math

import numpy as np
import pytest

from vortexlab import (
    BlowupError,
    CflError,
    FieldError,
    Grid2D,
    ScalarField,
    SolverConfig,
    VelocityField,
    heat_semigroup,
    lamb_oseen,
    lp_norm,
    solve,
    solve_from_measure,
    solve_linearized,
    step_mild,
)
from vortexlab.solver import mollify_atoms
from vortexlab.verification import (
    conservation_report,
    drift_regularity_report,
    restrict_to_grid,
)


def _l2_diff(a: ScalarField, b: ScalarField) -> float:
    return lp_norm(ScalarField(a.grid, a.values - b.values), 2)


def _two_bump(grid: Grid2D, s_sq: float = 0.1, offset: float = 0.7) -> ScalarField:
    a = lamb_oseen.gaussian_density(grid, s_sq, center=(-offset, 0.0), mass=0.5)
    b = lamb_oseen.gaussian_density(grid, s_sq, center=(offset, 0.0), mass=0.5)
    return ScalarField(grid, a.values + b.values)


@pytest.fixture(scope="module")
def small_regression():
    """Self-similar vortex solved at desk scale; shared by the conservation,
    stability, and accuracy assertions below."""
    grid = Grid2D(10.0, 128)
    nu, t0, T = 0.05, 0.5, 1.0
    u0 = lamb_oseen.vorticity_field(grid, t0, nu)
    cfg = SolverConfig(nu=nu, t_end=T, snapshot_times=(0.0, 0.25, 0.5, 0.75, 1.0))
    traj = solve(u0, cfg)
    return grid, nu, t0, traj


class TestStepMild:
    def test_zero_field(self, grid64):
        cfg = SolverConfig(nu=0.1, t_end=1.0)
        out = step_mild(ScalarField(grid64, np.zeros((64, 64))), 0.05, cfg)
        assert np.all(out.values == 0.0)

    def test_radial_step_is_pure_diffusion(self, grid64):
        """For radial data the induced velocity is azimuthal, perpendicular
        to the radial gradient, so the transport term cancels pointwise and
        one step must match the heat semigroup."""
        nu = 0.1
        u = lamb_oseen.gaussian_density(grid64, 0.25)
        cfg = SolverConfig(nu=nu, t_end=1.0)
        dt = 0.01
        stepped = step_mild(u, dt, cfg)
        heated = heat_semigroup(u, dt, nu=nu)
        assert _l2_diff(stepped, heated) <= 1e-8 * lp_norm(u, 2)

    def test_mass_preserved(self, grid64):
        u = _two_bump(grid64)
        out = step_mild(u, 0.02, SolverConfig(nu=0.05, t_end=1.0))
        assert out.mass() == pytest.approx(u.mass(), abs=1e-12)

    def test_cfl_violation_carries_admissible(self, grid64):
        u = lamb_oseen.gaussian_density(grid64, 0.1)
        with pytest.raises(CflError) as err:
            step_mild(u, 50.0, SolverConfig(nu=0.05, t_end=100.0))
        assert err.value.dt == 50.0
        assert 0 < err.value.admissible < 50.0

    def test_nonpositive_dt_rejected(self, grid64):
        u = lamb_oseen.gaussian_density(grid64, 0.1)
        with pytest.raises(FieldError, match="dt"):
            step_mild(u, 0.0, SolverConfig(nu=0.05, t_end=1.0))


class TestSolve:
    def test_self_similar_accuracy(self, small_regression):
        grid, nu, t0, traj = small_regression
        exact = lamb_oseen.vorticity_field(grid, t0 + 1.0, nu)
        err = lp_norm(ScalarField(grid, traj.field_at(1.0).values - exact.values), 1)
        assert err <= 1e-3

    def test_snapshots_and_diagnostics(self, small_regression):
        _, _, _, traj = small_regression
        assert np.array_equal(traj.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert len(traj.fields) == len(traj.diagnostics) == 5
        for d in traj.diagnostics:
            for key in ("mass", "min", "l1", "l43", "l2", "l4", "linf",
                        "max_speed", "dt_last"):
                assert key in d

    def test_mass_positivity_lp_stability(self, small_regression):
        _, _, _, traj = small_regression
        rep = conservation_report(traj)
        linf0 = traj.diagnostics[0]["linf"]
        assert rep["mass_drift"] <= 1e-10
        assert rep["min_value"] >= -1e-8 * linf0
        for p in ("l43", "l2", "l4"):
            assert rep[f"{p}_sup_ratio"] <= 1.05

    def test_drift_regularity_reported_finite(self, small_regression):
        _, _, _, traj = small_regression
        rep = drift_regularity_report(traj)
        assert math.isfinite(rep["sup_k4"]) and math.isfinite(rep["sup_grad_k4"])

    def test_self_convergence_order(self):
        """Refining (dx, dt) -> (dx/2, dt/2) contracts the terminal error at
        observed order >= 1.8 (non-radial data so the transport term is
        genuinely exercised)."""
        L, T, dt0 = 8.0, 0.5, 0.05
        sols = {}
        for n, dt in ((64, dt0), (128, dt0 / 2), (256, dt0 / 4)):
            g = Grid2D(L, n)
            cfg = SolverConfig(nu=0.05, t_end=T, dt=dt)
            sols[n] = solve(_two_bump(g), cfg)
        e1 = _l2_diff(sols[64].field_at(T),
                      restrict_to_grid(sols[128].field_at(T), Grid2D(L, 64)))
        e2 = _l2_diff(sols[128].field_at(T),
                      restrict_to_grid(sols[256].field_at(T), Grid2D(L, 128)))
        order = math.log2(e1 / e2)
        assert order >= 1.8

    def test_fixed_dt_cfl_guard(self):
        g = Grid2D(8.0, 64)
        u0 = lamb_oseen.gaussian_density(g, 0.05)
        with pytest.raises(CflError) as err:
            solve(u0, SolverConfig(nu=0.05, t_end=1.0, dt=0.9))
        assert err.value.admissible < 0.9

    def test_probability_preconditions(self, grid64):
        signed = ScalarField(grid64, np.full((64, 64), -0.1))
        with pytest.raises(FieldError, match="negative"):
            solve(signed, SolverConfig(nu=0.1, t_end=0.1))
        off_mass = lamb_oseen.gaussian_density(grid64, 0.2, mass=2.0)
        with pytest.raises(FieldError, match="mass"):
            solve(off_mass, SolverConfig(nu=0.1, t_end=0.1))

    def test_blowup_guard_aborts_with_record(self):
        """A compressive frozen drift grows |v|_inf exponentially; the guard
        must abort and hand back the partial trajectory."""
        g = Grid2D(8.0, 64)
        X, Y = g.meshgrid()
        squeeze = lambda t: VelocityField(g, -X, -Y)
        v0 = lamb_oseen.gaussian_density(g, 0.3)
        cfg = SolverConfig(nu=0.01, t_end=2.0, dt=0.005, blowup_factor=1.5,
                           snapshot_times=(0.0, 2.0))
        with pytest.raises(BlowupError) as err:
            solve_linearized(v0, squeeze, cfg)
        assert err.value.linf > 1.5 * err.value.linf0
        assert err.value.trajectory.meta["aborted"]["time"] == pytest.approx(
            err.value.t)


class TestSolveLinearized:
    def test_self_consistency(self):
        """The nonlinear solution solves its own linearization: freezing the
        drift from the solved trajectory and rerunning must land within 2x
        the solver's own refinement error."""
        L, T, dt = 8.0, 0.5, 0.05
        g = Grid2D(L, 64)
        u0 = _two_bump(g)
        snaps = tuple(np.round(np.arange(0.0, T + dt / 2, dt), 10))
        base = solve(u0, SolverConfig(nu=0.05, t_end=T, dt=dt,
                                      snapshot_times=snaps))
        v = solve_linearized(u0, base, SolverConfig(nu=0.05, t_end=T, dt=dt))
        gap = _l2_diff(v.field_at(T), base.field_at(T))

        fine = solve(_two_bump(Grid2D(L, 128)),
                     SolverConfig(nu=0.05, t_end=T, dt=dt / 2))
        e_ref = _l2_diff(base.field_at(T),
                         restrict_to_grid(fine.field_at(T), g))
        assert gap <= 2 * e_ref

    def test_nonnegativity_preserved(self, grid64):
        """For resolved nonnegative data the linearized solve undershoots by
        roundoff only (coarse data rings at the truncation level instead)."""
        v0 = lamb_oseen.gaussian_density(grid64, 0.25, center=(0.3, 0.0))
        base = solve(lamb_oseen.gaussian_density(grid64, 0.3),
                     SolverConfig(nu=0.1, t_end=0.3, dt=0.05,
                                  snapshot_times=(0.0, 0.15, 0.3)))
        traj = solve_linearized(v0, base,
                                SolverConfig(nu=0.1, t_end=0.3, dt=0.05))
        assert min(d["min"] for d in traj.diagnostics) >= -1e-10 * v0.max()

    def test_zero_mass_stays_zero(self, grid64):
        a = lamb_oseen.gaussian_density(grid64, 0.2, center=(-0.5, 0.0))
        b = lamb_oseen.gaussian_density(grid64, 0.2, center=(0.5, 0.0))
        v0 = ScalarField(grid64, a.values - b.values)
        base = solve(lamb_oseen.gaussian_density(grid64, 0.3),
                     SolverConfig(nu=0.1, t_end=0.3, dt=0.05,
                                  snapshot_times=(0.0, 0.15, 0.3)))
        cfg = SolverConfig(nu=0.1, t_end=0.3, dt=0.05, require_probability=False,
                           snapshot_times=(0.0, 0.3))
        traj = solve_linearized(v0, base, cfg)
        assert all(abs(d["mass"]) <= 1e-12 for d in traj.diagnostics)

    def test_zero_drift_is_heat_flow(self, grid64):
        nu, T = 0.1, 0.4
        zeros = np.zeros((64, 64))
        still = lambda t: VelocityField(grid64, zeros, zeros)
        v0 = lamb_oseen.gaussian_density(grid64, 0.25)
        traj = solve_linearized(v0, still,
                                SolverConfig(nu=nu, t_end=T, dt=0.05))
        heated = heat_semigroup(v0, T, nu=nu)
        assert _l2_diff(traj.field_at(T), heated) <= 1e-10 * lp_norm(v0, 2)

    def test_base_validation(self, grid64):
        u0 = lamb_oseen.gaussian_density(grid64, 0.3)
        base = solve(u0, SolverConfig(nu=0.1, t_end=0.2, dt=0.05))
        with pytest.raises(FieldError, match="ends at"):
            solve_linearized(u0, base, SolverConfig(nu=0.1, t_end=1.0, dt=0.05))
        other = lamb_oseen.gaussian_density(Grid2D(6.0, 64), 0.3)
        with pytest.raises(FieldError, match="grid"):
            solve_linearized(other, base, SolverConfig(nu=0.1, t_end=0.2, dt=0.05))


class TestSolveFromMeasure:
    def test_single_atom_matches_self_similar(self):
        grid = Grid2D(20.0, 256)
        nu = 0.05
        cfg = SolverConfig(nu=nu, t_end=1.0, snapshot_times=(0.0, 1.0))
        traj = solve_from_measure(grid, [(1.0, (0.0, 0.0))], cfg)
        info = traj.meta["mollified_measure"]
        assert info["time_offset"] == pytest.approx(info["sigma0_sq"] / (2 * nu))
        exact = lamb_oseen.vorticity_field(grid, 1.0 + info["time_offset"], nu)
        err = lp_norm(ScalarField(grid, traj.field_at(1.0).values - exact.values), 1)
        assert err <= 5e-3

    def test_two_atoms_centroid_stationary(self):
        grid = Grid2D(12.0, 128)
        atoms = [(0.5, (-1.0, 0.0)), (0.5, (1.0, 0.0))]
        cfg = SolverConfig(nu=0.1, t_end=0.5, snapshot_times=(0.0, 0.5))
        traj = solve_from_measure(grid, atoms, cfg)
        X, Y = grid.meshgrid()
        # x jumps across the periodic seam, so the seam row takes the average
        # coordinate (-L/2 + L/2)/2 = 0 in the first-moment quadrature
        Xq, Yq = X.copy(), Y.copy()
        Xq[0, :] = 0.0
        Yq[:, 0] = 0.0

        def centroid(f):
            return (float(np.sum(Xq * f.values)) * grid.dx**2,
                    float(np.sum(Yq * f.values)) * grid.dx**2)

        c0 = centroid(traj.field_at(0.0))
        c1 = centroid(traj.field_at(0.5))
        assert abs(c1[0] - c0[0]) <= 1e-6
        assert abs(c1[1] - c0[1]) <= 1e-6

    def test_weight_preconditions(self, grid64):
        cfg = SolverConfig(nu=0.1, t_end=0.1)
        ok = [(0.7, (-0.5, 0.0)), (0.3, (0.5, 0.0))]
        solve_from_measure(grid64, ok, cfg)
        with pytest.raises(FieldError, match="sum to 1"):
            mollify_atoms(grid64, [(0.7, (-0.5, 0.0)), (0.4, (0.5, 0.0))], 0.1)
        with pytest.raises(FieldError, match="nonnegative"):
            mollify_atoms(grid64, [(1.5, (0.0, 0.0)), (-0.5, (1.0, 0.0))], 0.1)
