"""Executable checks of the governing theory.

Each function turns one structural guarantee of the dynamics into a number
with an associated tolerance story:

* :func:`weak_residual` -- the space-time distributional formulation tested
  against a bank of smooth compactly supported test functions;
* :func:`uniqueness_functional` -- the resolvent-smoothed distance
  ``h_eps(t) = (Phi_eps z, z)_2`` between two trajectories, its exact
  spectral decomposition, and the Gronwall-type envelope that drives the
  uniqueness argument;
* :func:`decay_fit` -- power-law decay exponents of ``|u(t)|_p`` and
  ``|K(u(t))|_p`` for near-atomic data;
* :func:`flow_property_check` / :func:`markov_probe` -- the restart
  consistency of the solution map and the conditional-law (nonlinear Markov)
  structure of the particle system;
* pointwise kernel identities for the resolvent-smoothed drift.

Everything here consumes trajectories through their public snapshots only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import kv

from .biot_savart import biot_savart_field
from .fields import (FieldError, Grid2D, ScalarField, VelocityField, gradient,
                     lp_norm)
from .solver import SolverConfig, solve, solve_linearized

# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported space-time test function.

    Spatial part: the standard bump ``phi(x) = exp(1/((|x-x0|/R)^2 - 1))``
    inside the disc of radius ``R`` about ``x0``, identically zero outside.
    Temporal part: either a bump normalized to ``psi(0) = 1`` or the
    polynomial cutoff ``(1 - (t/T)^2)^2``, both vanishing (with derivative)
    at the end of their support ``[0, T)``.  All derivative formulas are
    analytic.
    """

    center: tuple[float, float]
    radius: float
    t_support: float
    temporal: str = "bump"  # or "polynomial"

    def __post_init__(self):
        if not self.radius > 0:
            raise FieldError(f"bump radius must be positive, got {self.radius}")
        if not self.t_support > 0:
            raise FieldError(f"temporal support must be positive, got {self.t_support}")
        if self.temporal not in ("bump", "polynomial"):
            raise FieldError(f"unknown temporal profile {self.temporal!r}")

    # -- spatial ----------------------------------------------------------
    def _q(self, X, Y):
        return ((X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2) / self.radius**2

    def phi(self, X, Y):
        q = self._q(X, Y)
        inside = q < 1.0 - 1e-9
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(inside, np.exp(1.0 / np.where(inside, q - 1.0, -1.0)), 0.0)

    def grad_phi(self, X, Y):
        q = self._q(X, Y)
        inside = q < 1.0 - 1e-9
        qm = np.where(inside, q - 1.0, -1.0)
        with np.errstate(divide="ignore", over="ignore"):
            w = np.where(inside, np.exp(1.0 / qm), 0.0)
            a = -1.0 / qm**2  # d/dq of 1/(q-1)
        gx = w * a * 2.0 * (X - self.center[0]) / self.radius**2
        gy = w * a * 2.0 * (Y - self.center[1]) / self.radius**2
        return gx, gy

    def lap_phi(self, X, Y):
        q = self._q(X, Y)
        inside = q < 1.0 - 1e-9
        qm = np.where(inside, q - 1.0, -1.0)
        with np.errstate(divide="ignore", over="ignore"):
            w = np.where(inside, np.exp(1.0 / qm), 0.0)
            a = -1.0 / qm**2
            ap = 2.0 / qm**3
        r2 = self.radius**2
        return w * ((a * a + ap) * 4.0 * q / r2 + a * 4.0 / r2)

    # -- temporal ---------------------------------------------------------
    def psi(self, t):
        t = np.asarray(t, dtype=np.float64)
        s = t / self.t_support
        ok = (s >= 0) & (s < 1.0 - 1e-12)
        sm = np.where(ok, s, 0.0)
        if self.temporal == "bump":
            with np.errstate(divide="ignore", over="ignore"):
                val = np.exp(1.0 + 1.0 / np.where(ok, sm * sm - 1.0, -1.0))
        else:
            val = (1.0 - sm * sm) ** 2
        return np.where(ok, val, 0.0)

    def dpsi(self, t):
        t = np.asarray(t, dtype=np.float64)
        s = t / self.t_support
        ok = (s >= 0) & (s < 1.0 - 1e-12)
        sm = np.where(ok, s, 0.0)
        if self.temporal == "bump":
            qm = np.where(ok, sm * sm - 1.0, -1.0)
            with np.errstate(divide="ignore", over="ignore"):
                val = np.exp(1.0 + 1.0 / qm) * (-2.0 * sm / qm**2) / self.t_support
        else:
            val = -4.0 * sm * (1.0 - sm * sm) / self.t_support
        return np.where(ok, val, 0.0)

    def label(self) -> str:
        return (f"bump(x0=({self.center[0]:g},{self.center[1]:g}),R={self.radius:g})"
                f"*{self.temporal}(T={self.t_support:g})")


def default_test_bank(L: float, t_end: float) -> list[TestFunction]:
    """Twelve members: 3 radii x 4 centers spanning core and far field, with
    alternating temporal profiles."""
    radii = [0.15 * L, 0.25 * L, 0.4 * L]
    centers = [(0.0, 0.0), (0.2 * L, 0.0), (0.0, 0.2 * L), (-0.15 * L, -0.15 * L)]
    bank = []
    i = 0
    for c in centers:
        for R in radii:
            bank.append(TestFunction(c, R, 0.95 * t_end,
                                     "bump" if i % 2 == 0 else "polynomial"))
            i += 1
    return bank


# ---------------------------------------------------------------------------
# weak-form residuals
# ---------------------------------------------------------------------------


@dataclass
class ResidualReport:
    entries: list[dict]
    max_normalized: float
    quadrature: dict
    normalization: str

    def raw(self) -> np.ndarray:
        return np.array([e["raw"] for e in self.entries])


def _initial_pairing(tf: TestFunction, u0) -> float:
    """<phi, u0> for a density field or an atoms list (exact pointwise)."""
    if isinstance(u0, ScalarField):
        X, Y = u0.grid.meshgrid()
        return float(np.sum(tf.phi(X, Y) * u0.values) * u0.grid.cell_area)
    total = 0.0
    for w, (px, py) in u0:
        total += w * float(tf.phi(np.float64(px), np.float64(py)))
    return total


def _residual_core(times: np.ndarray, u_fields: Sequence[ScalarField],
                   velocities: Sequence[VelocityField], u0, nu: float,
                   bank: Sequence[TestFunction], min_time_samples: int
                   ) -> ResidualReport:
    if not bank:
        raise FieldError("test-function bank is empty")
    times = np.asarray(times, dtype=np.float64)
    grid = u_fields[0].grid
    X, Y = grid.meshgrid()
    da = grid.cell_area

    l1_series = np.array([lp_norm(f, 1) for f in u_fields])
    u_l1l1 = float(np.trapezoid(l1_series, times))

    entries = []
    for tf in bank:
        inside = np.count_nonzero(tf.psi(times) > 0)
        if inside < min_time_samples:
            raise FieldError(
                f"only {inside} snapshots inside the temporal support of "
                f"{tf.label()}; need >= {min_time_samples}")
        phi = tf.phi(X, Y)
        gx, gy = tf.grad_phi(X, Y)
        lap = tf.lap_phi(X, Y)
        psi = tf.psi(times)
        dpsi = tf.dpsi(times)

        s_phi = np.empty(times.size)
        s_lap = np.empty(times.size)
        s_adv = np.empty(times.size)
        for i, (f, y) in enumerate(zip(u_fields, velocities)):
            s_phi[i] = np.sum(f.values * phi)
            s_lap[i] = np.sum(f.values * lap)
            s_adv[i] = np.sum(f.values * (y.vx * gx + y.vy * gy))
        integrand = (dpsi * s_phi + nu * psi * s_lap + psi * s_adv) * da
        raw = float(np.trapezoid(integrand, times)) + float(tf.psi(0.0)) * _initial_pairing(tf, u0)

        w2inf = max(
            float(np.max(np.abs(phi))) * float(np.max(np.abs(psi))),
            float(np.max(np.abs(phi))) * float(np.max(np.abs(dpsi))),
            float(np.max(np.hypot(gx, gy))) * float(np.max(np.abs(psi))),
            float(np.max(np.abs(lap))) * float(np.max(np.abs(psi))),
        )
        denom = w2inf * u_l1l1
        entries.append({
            "label": tf.label(),
            "raw": raw,
            "normalized": raw / denom if denom > 0 else 0.0,
            "w2inf": w2inf,
        })
    return ResidualReport(
        entries=entries,
        max_normalized=float(max(abs(e["normalized"]) for e in entries)),
        quadrature={"n_times": int(times.size),
                    "dt_min": float(np.min(np.diff(times))) if times.size > 1 else 0.0,
                    "dt_max": float(np.max(np.diff(times))) if times.size > 1 else 0.0,
                    "dx": grid.dx},
        normalization="raw / (W2inf(test) * L1_t L1_x(u)); W2inf = max slot sup-norm "
                      "over {phi*psi', grad phi*psi, lap phi*psi, phi*psi}",
    )


def _trajectory_pieces(traj) -> tuple[np.ndarray, list[ScalarField]]:
    times = np.asarray(traj.times, dtype=np.float64)
    fields = list(traj.fields)
    if times.size != len(fields):
        raise FieldError("trajectory times and fields disagree in length")
    if times.size < 2:
        raise FieldError("need at least two snapshots for the time quadrature")
    return times, fields


def weak_residual(traj, u0, bank: Sequence[TestFunction] | None = None,
                  nu: float | None = None, min_time_samples: int = 20,
                  velocity_method: str = "free_space") -> ResidualReport:
    """Residual of the distributional formulation on a trajectory.

    For each bank member, quadrature (midpoint in space, trapezoid in time) of

        int_0^T int u * (psi' phi + nu psi lap phi + psi K(u).grad phi) dx dt
            + psi(0) <phi, u0>,

    which vanishes for an exact solution with ``psi(T) = 0``.  ``u0`` may be
    a density field or an atoms list (measure-valued initial data pair
    exactly against the smooth test function).
    """
    times, fields = _trajectory_pieces(traj)
    if nu is None:
        nu = traj.config.nu if hasattr(traj.config, "nu") else traj.config["nu"]
    if bank is None:
        bank = default_test_bank(fields[0].grid.L, float(times[-1]))
    vels = [biot_savart_field(f, method=velocity_method) for f in fields]
    return _residual_core(times, fields, vels, u0, float(nu), bank, min_time_samples)


def linearized_weak_residual(v_traj, u_traj, v0, bank: Sequence[TestFunction] | None = None,
                             nu: float | None = None, min_time_samples: int = 20,
                             velocity_method: str = "free_space") -> ResidualReport:
    """Same residual with the drift frozen from ``u_traj`` (the linearized
    equation): the advection velocity is ``K(u(t))`` while the density in all
    slots is ``v(t)``."""
    times, v_fields = _trajectory_pieces(v_traj)
    u_times, u_fields = _trajectory_pieces(u_traj)
    if not np.allclose(times, u_times, atol=1e-9):
        raise FieldError("v and u trajectories must share snapshot times")
    if v_fields[0].grid != u_fields[0].grid:
        raise FieldError("v and u trajectories must share a grid")
    if nu is None:
        nu = v_traj.config.nu if hasattr(v_traj.config, "nu") else v_traj.config["nu"]
    if bank is None:
        bank = default_test_bank(v_fields[0].grid.L, float(times[-1]))
    vels = [biot_savart_field(f, method=velocity_method) for f in u_fields]
    return _residual_core(times, v_fields, vels, v0, float(nu), bank, min_time_samples)


# ---------------------------------------------------------------------------
# uniqueness functional
# ---------------------------------------------------------------------------


@dataclass
class UniquenessReport:
    times: np.ndarray
    eps: float
    h: np.ndarray                  # (Phi_eps z, z)_2
    part_k_eps: np.ndarray         # |K_eps z|_2^2
    part_phi: np.ndarray           # eps |Phi_eps z|_2^2
    decomposition_rel_err: float
    kz_sq: np.ndarray              # |K z|_2^2 (mean mode excluded)
    envelope_integrand: np.ndarray
    envelope_integral: np.ndarray  # cumulative integral of the integrand
    c_fit: float

    def envelope_dominates(self, C: float, rtol: float = 1e-9) -> bool:
        """True when ``h(t) <= C * integral(t)`` for all t past the start."""
        bound = C * self.envelope_integral
        scale = max(float(self.h.max()), 1e-300)
        return bool(np.all(self.h[1:] <= bound[1:] + rtol * scale))


def restrict_to_grid(f: ScalarField, coarse: Grid2D) -> ScalarField:
    """Subsample a field onto a coarser grid whose nodes are a subset of the
    fine ones (same L, n divisible)."""
    gf = f.grid
    if gf.L != coarse.L or gf.n % coarse.n != 0:
        raise FieldError(f"cannot restrict {gf} onto {coarse}")
    step = gf.n // coarse.n
    return ScalarField(coarse, np.ascontiguousarray(f.values[::step, ::step]))


def uniqueness_functional(traj1, traj2, eps: float) -> UniquenessReport:
    """Resolvent-smoothed separation of two trajectories.

    Per snapshot, with ``z = u1 - u2`` and hats the unnormalized FFT:

        h_eps      = (L/n^2)^2 * sum |z_hat|^2 / (eps + |k|^2)
        |K_eps z|^2 = (L/n^2)^2 * sum |k|^2 |z_hat|^2 / (eps + |k|^2)^2
        eps|Phi z|^2 = (L/n^2)^2 * sum eps |z_hat|^2 / (eps + |k|^2)^2

    and the first equals the sum of the other two identically (checked and
    reported).  The envelope integrand is
    ``(1 + |u1|_4^4 + |u2|_{4/3}^4) * |K z|_2^2``; the report fits the
    smallest constant making ``h <= C * int_0^t integrand`` and carries the
    cumulative integral so a frozen C can be re-applied to other runs.
    """
    if not eps > 0:
        raise FieldError(f"eps must be positive, got {eps}")
    t1, f1 = _trajectory_pieces(traj1)
    t2, f2 = _trajectory_pieces(traj2)
    if not np.allclose(t1, t2, atol=1e-9):
        raise FieldError("trajectories must share snapshot times")
    g1, g2 = f1[0].grid, f2[0].grid
    if g1.n > g2.n:
        f1 = [restrict_to_grid(f, g2) for f in f1]
        g = g2
    elif g2.n > g1.n:
        f2 = [restrict_to_grid(f, g1) for f in f2]
        g = g1
    else:
        if g1 != g2:
            raise FieldError(f"incompatible grids {g1} vs {g2}")
        g = g1

    norm = (g.L / (g.n * g.n)) ** 2
    ksq = g.k_sq
    h = np.empty(t1.size)
    pk = np.empty(t1.size)
    pp = np.empty(t1.size)
    kz = np.empty(t1.size)
    integ = np.empty(t1.size)
    rel_errs = []
    for i, (a, b) in enumerate(zip(f1, f2)):
        zhat2 = np.abs(np.fft.fft2(a.values - b.values)) ** 2
        h[i] = norm * float(np.sum(zhat2 / (eps + ksq)))
        pk[i] = norm * float(np.sum(ksq * zhat2 / (eps + ksq) ** 2))
        pp[i] = norm * eps * float(np.sum(zhat2 / (eps + ksq) ** 2))
        if h[i] > 0:
            rel_errs.append(abs(h[i] - (pk[i] + pp[i])) / h[i])
        with np.errstate(divide="ignore", invalid="ignore"):
            kz[i] = norm * float(np.sum(np.where(ksq > 0.0, zhat2 / np.where(ksq > 0, ksq, 1.0), 0.0)))
        integ[i] = (1.0 + lp_norm(a, 4) ** 4 + lp_norm(b, 4.0 / 3.0) ** 4) * kz[i]

    cumint = np.concatenate([[0.0], np.cumsum(
        0.5 * (integ[1:] + integ[:-1]) * np.diff(t1))])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(cumint[1:] > 0.0, h[1:] / np.where(cumint[1:] > 0, cumint[1:], 1.0), 0.0)
    c_fit = float(np.max(ratios)) if ratios.size else 0.0
    return UniquenessReport(
        times=t1, eps=float(eps), h=h, part_k_eps=pk, part_phi=pp,
        decomposition_rel_err=float(max(rel_errs)) if rel_errs else 0.0,
        kz_sq=kz, envelope_integrand=integ, envelope_integral=cumint,
        c_fit=c_fit)


# ---------------------------------------------------------------------------
# decay-law fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    p: float
    quantity: str
    time_offset: float


def decay_fit(traj, p: float, window: tuple[float, float],
              quantity: str = "vorticity",
              time_offset: float | None = None) -> DecayFit:
    """Least-squares power-law fit of ``log |u(t)|_p`` (or ``|K(u)|_p``)
    against ``log(t + offset)`` over the window.

    The offset defaults to the recorded mollification age of measure-valued
    initial data (``sigma0^2 / (2 nu)``): a run mollified at scale sigma0 *is*
    the ideal solution aged by that much, so fitting against the shifted time
    recovers the ideal exponents.  For plain density data the offset is 0.
    """
    if quantity not in ("vorticity", "velocity"):
        raise FieldError(f"unknown quantity {quantity!r}")
    times, fields = _trajectory_pieces(traj)
    if time_offset is None:
        time_offset = float(traj.meta.get("mollified_measure", {}).get("time_offset", 0.0)) \
            if hasattr(traj, "meta") else 0.0
    a, b = window
    if not b > a:
        raise FieldError(f"empty window {window}")
    meta = getattr(traj, "meta", {})
    moll = meta.get("mollified_measure") if isinstance(meta, dict) else None
    if moll is not None:
        nu = traj.config.nu if hasattr(traj.config, "nu") else traj.config["nu"]
        transient = 5.0 * moll["sigma0_sq"] / (4.0 * nu)
        if a < transient - 1e-12:
            raise FieldError(
                f"window start {a} lies inside the mollification transient "
                f"(ends at {transient:.4f}); move the window or remollify")

    sel = (times >= a - 1e-12) & (times <= b + 1e-12) & (times + time_offset > 0)
    if np.count_nonzero(sel) < 5:
        raise FieldError(
            f"only {np.count_nonzero(sel)} snapshots in window {window}; need >= 5")
    ts = times[sel] + time_offset
    if quantity == "vorticity":
        vals = np.array([lp_norm(fields[i], p) for i in np.nonzero(sel)[0]])
    else:
        vals = np.array([lp_norm(biot_savart_field(fields[i]), p)
                         for i in np.nonzero(sel)[0]])
    if np.any(vals <= 0):
        raise FieldError("nonpositive norms in the window; cannot fit a power law")
    x = np.log(ts)
    y = np.log(vals)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(intercept), r2, int(ts.size), float(p),
                    quantity, float(time_offset))


# ---------------------------------------------------------------------------
# flow property
# ---------------------------------------------------------------------------


def flow_property_check(u0: ScalarField, s: float, r: float, t: float,
                        cfg: SolverConfig) -> dict:
    """Restart consistency of the solution map.

    Solve from ``(s, u0)`` to ``t`` directly; separately solve to ``r``,
    restart the solver from the computed state, and continue to ``t``.  The
    dynamics are autonomous, so times enter only through the differences.
    Returns the L1 discrepancy of the two fields at ``t`` plus both runs.
    """
    if not (s <= r <= t):
        raise FieldError(f"need s <= r <= t, got s={s}, r={r}, t={t}")
    if t == s:
        raise FieldError("empty time interval: t == s")
    want = sorted({r - s, t - s} | {x for x in cfg.snapshot_times if 0 < x <= t - s})
    cfg_direct = replace(cfg, t_end=t - s,
                         snapshot_times=tuple(x for x in want if x > 0))
    direct = solve(u0, cfg_direct)
    if r == s:
        # restarting at the start is the same computation by definition
        return {"l1_discrepancy": 0.0, "s": s, "r": r, "t": t,
                "direct": direct, "restarted": direct}
    mid = direct.field_at(r - s)
    # the tail restarts from the solver's own output, which may undershoot
    # zero at the dealiasing level; the probability gate is for fresh data
    cfg_tail = replace(cfg, t_end=t - r, require_probability=False,
                       snapshot_times=tuple(x - (r - s) for x in want if x > r - s))
    restarted = solve(mid, cfg_tail)
    a = direct.field_at(t - s).values
    b = restarted.field_at(t - r).values
    gap = float(np.sum(np.abs(a - b)) * u0.grid.cell_area)
    return {"l1_discrepancy": gap, "s": s, "r": r, "t": t,
            "direct": direct, "restarted": restarted}


# ---------------------------------------------------------------------------
# nonlinear Markov probe
# ---------------------------------------------------------------------------


@dataclass
class MarkovReport:
    bins: list[dict]
    warnings: list[str]
    params: dict
    ptraj: object = None
    base_traj: object = None

    def populated(self) -> list[dict]:
        return [b for b in self.bins if b["count"] >= self.params["min_count"]]

    def max_distance(self) -> float:
        pop = self.populated()
        return max(b["l1_distance"] for b in pop) if pop else math.nan


def _hist_masses(positions: np.ndarray, center: np.ndarray, halfwidth: float,
                 nbins: int) -> tuple[np.ndarray, float]:
    """Normalized histogram over a square window; returns (masses, outside)."""
    lo = center - halfwidth
    ij = np.floor((positions - lo) / (2 * halfwidth / nbins)).astype(np.int64)
    good = np.all((ij >= 0) & (ij < nbins), axis=1)
    h = np.zeros((nbins, nbins))
    np.add.at(h, (ij[good, 0], ij[good, 1]), 1.0)
    n = positions.shape[0]
    return h / n, float(np.count_nonzero(~good)) / n


def _field_masses(f: ScalarField, center: np.ndarray, halfwidth: float,
                  nbins: int) -> tuple[np.ndarray, float]:
    """Project a gridded density onto the same histogram cells."""
    g = f.grid
    X, Y = g.meshgrid()
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    lo = center - halfwidth
    ij = np.floor((pts - lo) / (2 * halfwidth / nbins)).astype(np.int64)
    good = np.all((ij >= 0) & (ij < nbins), axis=1)
    w = f.values.ravel() * g.cell_area
    h = np.zeros((nbins, nbins))
    np.add.at(h, (ij[good, 0], ij[good, 1]), w[good])
    total = float(w.sum())
    return h, total - float(h.sum())


def markov_probe(u0, s: float, r: float, t: float, cfg,
                 bin_radius: float | None = None, *,
                 ptraj=None, base_traj=None,
                 pde_grid: Grid2D | None = None, nu: float | None = None,
                 bin_centers: Sequence[tuple[float, float]] | None = None,
                 n_bins: int = 4, min_count: int = 500, hist_bins: int = 32,
                 window_halfwidth: float | None = None) -> MarkovReport:
    """Conditional-law consistency of the particle system started at ``(s, u0)``.

    For each bin center ``y`` (default: ``n_bins`` points on the ring of the
    cloud's median radius at time ``r``): condition the ensemble on
    ``|X(r) - y| <= bin_radius``, follow exactly those particles to time
    ``t``, and compare their empirical law with the linearized equation
    restarted at ``r`` from a mollified point mass at ``y`` and advected by
    the frozen drift of ``base_traj`` (default: the PDE solved from the same
    ``u0``; with drift disabled in ``cfg`` the reference is the pure heat
    flow, the calibration case).  Distances are binned L1 over a square
    window around the reference's moved center of mass.

    ``ptraj`` reuses an existing particle run (it must carry snapshots at
    ``r - s`` and ``t - s`` on its own clock); the report exposes the run as
    ``report.ptraj`` so further probes can share it.
    """
    if not (s <= r < t):
        raise FieldError(f"need s <= r < t, got s={s}, r={r}, t={t}")
    rr, tt = r - s, t - s

    if pde_grid is None:
        pde_grid = cfg.kde_grid if isinstance(u0, (list, tuple)) or u0 is None \
            else getattr(u0, "grid", cfg.kde_grid)
    if pde_grid is None:
        raise FieldError("markov_probe needs a grid for the reference solve")
    if nu is None:
        nu = cfg.nu

    if ptraj is None:
        from .particles import simulate
        snaps = tuple(sorted({rr, tt} - {0.0}))
        pcfg = replace(cfg, t_end=tt, snapshot_times=snaps)
        ptraj = simulate(u0, pcfg)
    times = np.asarray(ptraj.times)
    i_r = int(np.argmin(np.abs(times - rr)))
    i_t = int(np.argmin(np.abs(times - tt)))
    if abs(times[i_r] - rr) > 1e-9 or abs(times[i_t] - tt) > 1e-9:
        raise FieldError(
            f"particle snapshots at clock {rr} and {tt} are required")
    ens_r = ptraj.ensembles[i_r]
    ens_t = ptraj.ensembles[i_t]

    if base_traj is None and cfg.drift_enabled:
        base_traj = _markov_base_solve(u0, pde_grid, nu, rr, tt,
                                       cfg.kde_grid)

    pos_r = ens_r.positions
    if bin_radius is None:
        bin_radius = 3.0 * _kde_bandwidth_of(ptraj, pos_r)
    if bin_centers is None:
        radii = np.hypot(pos_r[:, 0], pos_r[:, 1])
        ring = float(np.median(radii))
        angles = 2.0 * np.pi * np.arange(n_bins) / n_bins
        bin_centers = [(ring * math.cos(a), ring * math.sin(a)) for a in angles]

    sigma0_sq = (bin_radius / 2.0) ** 2
    if window_halfwidth is None:
        window_halfwidth = bin_radius + 4.0 * math.sqrt(2.0 * nu * (t - r)) \
            + 2.0 * math.sqrt(sigma0_sq)

    # drift provider for the linearized reference (base clock rr + tau)
    if base_traj is not None:
        base_times = np.asarray(base_traj.times)
        if base_times[-1] < tt - 1e-9:
            raise FieldError("base trajectory must cover the probe interval")
        if base_traj.fields[0].grid != pde_grid:
            raise FieldError(
                f"base trajectory grid {base_traj.fields[0].grid} must match "
                f"the reference grid {pde_grid}")
        vels = [biot_savart_field(f) for f in base_traj.fields]

        def drift_at(tau: float) -> VelocityField:
            tb = rr + tau
            i = int(np.searchsorted(base_times, tb, side="right") - 1)
            i = min(max(i, 0), base_times.size - 2)
            lam = (tb - base_times[i]) / (base_times[i + 1] - base_times[i])
            lam = min(max(lam, 0.0), 1.0)
            return VelocityField(pde_grid,
                                 (1 - lam) * vels[i].vx + lam * vels[i + 1].vx,
                                 (1 - lam) * vels[i].vy + lam * vels[i + 1].vy)
    else:
        zero = np.zeros((pde_grid.n, pde_grid.n))

        def drift_at(tau: float) -> VelocityField:
            return VelocityField(pde_grid, zero, zero)

    from .lamb_oseen import gaussian_density
    bins = []
    warnings = []
    lin_cfg = SolverConfig(nu=nu, t_end=t - r, dt=None, cfl_safety=0.4,
                           dt_max=(t - r) / 20.0,
                           snapshot_times=(t - r,), velocity_method="free_space",
                           require_probability=False)
    for c in bin_centers:
        c = np.asarray(c, dtype=np.float64)
        member = np.hypot(pos_r[:, 0] - c[0], pos_r[:, 1] - c[1]) <= bin_radius
        count = int(np.count_nonzero(member))
        entry = {"center": [float(c[0]), float(c[1])], "count": count,
                 "l1_distance": math.nan}
        if count < min_count:
            warnings.append(
                f"bin at ({c[0]:.3f}, {c[1]:.3f}) has {count} < {min_count} "
                "members; skipped")
            bins.append(entry)
            continue
        v0 = gaussian_density(pde_grid, sigma0_sq, center=(float(c[0]), float(c[1])))
        v0 = ScalarField(pde_grid, v0.values / v0.mass())
        ref = solve_linearized(v0, drift_at, lin_cfg)
        ref_t = ref.field_at(t - r)
        # window center follows the reference's center of mass
        Xg, Yg = pde_grid.meshgrid()
        com = np.array([float(np.sum(Xg * ref_t.values)),
                        float(np.sum(Yg * ref_t.values))]) * pde_grid.cell_area
        emp, emp_out = _hist_masses(ens_t.positions[member], com, window_halfwidth,
                                    hist_bins)
        refm, ref_out = _field_masses(ref_t, com, window_halfwidth, hist_bins)
        dist = float(np.sum(np.abs(emp - refm))) + abs(emp_out - ref_out)
        entry["l1_distance"] = dist
        entry["outside_mass"] = [emp_out, ref_out]
        bins.append(entry)

    return MarkovReport(bins=bins, warnings=warnings, params={
        "s": s, "r": r, "t": t, "bin_radius": float(bin_radius),
        "min_count": min_count, "hist_bins": hist_bins,
        "window_halfwidth": float(window_halfwidth),
        "sigma0_sq": float(sigma0_sq),
        "drift": "base" if base_traj is not None else "none",
    }, ptraj=ptraj, base_traj=base_traj)


def _markov_base_solve(u0, grid: Grid2D, nu: float, rr: float, tt: float,
                       kde_grid):
    """PDE trajectory of the probe's own initial data, used as the frozen
    drift of the conditional reference."""
    from .solver import solve_from_measure
    n_snap = 24
    snaps = sorted({tt * (i + 1) / n_snap for i in range(n_snap)} | {rr, tt} - {0.0})
    cfg = SolverConfig(nu=nu, t_end=tt, snapshot_times=tuple(snaps),
                       velocity_method="free_space")
    if isinstance(u0, ScalarField):
        from .solver import solve
        return solve(u0, cfg)
    return solve_from_measure(grid, list(u0), cfg)


def _kde_bandwidth_of(ptraj, positions: np.ndarray) -> float:
    bw = ptraj.config.bandwidth
    if bw is not None:
        return float(bw)
    from ._kde import silverman_bandwidth
    return silverman_bandwidth(positions)


# ---------------------------------------------------------------------------
# conservation / structure report
# ---------------------------------------------------------------------------


def conservation_report(traj) -> dict:
    """Mass drift, L^p monotonicity violations, and negativity undershoot
    across a trajectory's snapshots (all from recorded diagnostics)."""
    diags = traj.diagnostics
    if not diags:
        raise FieldError("trajectory has no diagnostics")
    mass0 = diags[0]["mass"]
    peak0 = max(abs(diags[0]["max"]), abs(diags[0]["min"]), 1e-300)
    report = {
        "mass_drift": max(abs(d["mass"] - mass0) for d in diags),
        "min_value": min(d["min"] for d in diags),
        "undershoot_rel": max(0.0, -min(d["min"] for d in diags)) / peak0,
    }
    for key in ("l1", "l43", "l2", "l4", "linf"):
        series = [d[key] for d in diags]
        increases = [series[i + 1] - series[i] for i in range(len(series) - 1)]
        report[f"{key}_max_increase_rel"] = (max(increases) / series[0]
                                             if series[0] > 0 else 0.0) if increases else 0.0
        report[f"{key}_ratio_final"] = series[-1] / series[0] if series[0] > 0 else 0.0
        report[f"{key}_sup_ratio"] = max(series) / series[0] if series[0] > 0 else 0.0
    return report


def drift_regularity_report(traj) -> dict:
    """Sup over snapshots of |K(u)|_4 and |grad K(u)|_4 (a drift-regularity
    proxy; finiteness is the assertion, values are informational)."""
    from .biot_savart import gradient_velocity
    k4 = []
    gk4 = []
    for f in traj.fields:
        k4.append(lp_norm(biot_savart_field(f), 4))
        gk4.append(lp_norm(gradient_velocity(f), 4))
    return {"sup_k4": float(np.max(k4)), "sup_grad_k4": float(np.max(gk4)),
            "k4": [float(v) for v in k4], "grad_k4": [float(v) for v in gk4]}


# ---------------------------------------------------------------------------
# pointwise resolvent-kernel identities
# ---------------------------------------------------------------------------


def exponential_average_factor(q: float) -> float:
    """``m(q) = int_0^inf e^{-s} e^{-q/(4s)} ds`` by direct quadrature.

    This is the radial damping factor of the resolvent-smoothed kernel:
    ``grad^perp g_eps(x) = -k(x) * m(eps |x|^2)``; it lies in (0, 1] and
    increases to 1 as ``q -> 0``.
    """
    if q < 0:
        raise FieldError(f"q must be nonnegative, got {q}")
    if q == 0.0:
        return 1.0
    val, _ = quad(lambda s: math.exp(-s - q / (4.0 * s)), 0.0, np.inf, limit=200)
    return float(val)


def resolvent_kernel_factor(q: float) -> float:
    """Closed form of the same factor: ``sqrt(q) * K_1(sqrt(q))`` (modified
    Bessel), the Laplace-transform evaluation of the quadrature above."""
    if q < 0:
        raise FieldError(f"q must be nonnegative, got {q}")
    if q == 0.0:
        return 1.0
    sq = math.sqrt(q)
    return float(sq * kv(1, sq))


def resolvent_kernel_gradperp(x: np.ndarray, eps: float,
                              by: str = "quadrature") -> np.ndarray:
    """``grad^perp g_eps`` at a point, via the heat-time integral
    representation (``by='quadrature'``) or the Bessel closed form."""
    x = np.asarray(x, dtype=np.float64)
    r2 = float(x[0] ** 2 + x[1] ** 2)
    if r2 == 0.0:
        raise FieldError("kernel gradient is singular at the origin")
    if by == "quadrature":
        # differentiate the heat-time representation under the integral
        val, _ = quad(lambda s: math.exp(-eps * s) / (4.0 * np.pi * s)
                      * math.exp(-r2 / (4.0 * s)) / (2.0 * s), 0.0, np.inf,
                      limit=200)
        gprime_over_r = -val  # g'(r)/r
    elif by == "bessel":
        m = resolvent_kernel_factor(eps * r2)
        gprime_over_r = -m / (2.0 * np.pi * r2)
    else:
        raise FieldError(f"unknown evaluation route {by!r}")
    return np.array([-x[1], x[0]]) * gprime_over_r


def ladyzhenskaya_ratio(f: ScalarField) -> float:
    """``|f|_4^2 / (|f|_2 |grad f|_2)`` with the spectral gradient; bounded
    by 2 for localized fields (the planar interpolation inequality)."""
    g = gradient(f)
    denom = lp_norm(f, 2) * lp_norm(g, 2)
    if denom == 0.0:
        raise FieldError("ratio undefined for constant fields")
    return float(lp_norm(f, 4) ** 2 / denom)
