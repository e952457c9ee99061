"""Pseudo-spectral time stepping for the viscous vorticity/density equation

    du/dt = nu * Lap(u) - div(K(u) u),

with ``K`` the Biot-Savart map.  The diffusion is integrated exactly through
the Fourier integrating factor; the transport term is advanced with Heun's
method on the filtered equation (second order), products are formed
pseudo-spectrally with 2/3 dealiasing, and the zero mode of the transport
term is pinned to zero so total mass is conserved bitwise.

The scheme per step of size ``h``, with ``E = exp(-nu h |k|^2)`` and
``N(u) = -F[div(K(u) u)]``:

    w1    = E * (w + h * N(u))
    w_new = E * w + (h/2) * (E * N(u) + N(u1))

Stability is governed by transport only (diffusion is exact): steps obey
``h <= cfl_safety * dx / max|K(u)|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .biot_savart import biot_savart_field, interpolate_velocity
from .fields import (FieldError, Grid2D, ScalarField, VelocityField,
                     boundary_support_fraction, lp_norm)

_TINY = 1e-30


class CflError(RuntimeError):
    """A fixed time step exceeds the advective stability limit."""

    def __init__(self, dt: float, admissible: float, t: float):
        self.dt = dt
        self.admissible = admissible
        self.t = t
        super().__init__(
            f"time step {dt:.3e} exceeds the advective limit {admissible:.3e} "
            f"at t={t:.4f}; reduce dt or enable adaptive stepping")


class BlowupError(RuntimeError):
    """The max norm grew past the guard factor; carries the partial run."""

    def __init__(self, t: float, linf: float, linf0: float, trajectory: "Trajectory"):
        self.t = t
        self.linf = linf
        self.linf0 = linf0
        self.trajectory = trajectory
        super().__init__(
            f"|u|_inf = {linf:.3e} at t={t:.4f} exceeds {trajectory.config.blowup_factor}x "
            f"the initial {linf0:.3e}; aborting (partial trajectory retained)")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.  ``dt=None`` selects CFL-adaptive steps."""

    nu: float
    t_end: float
    dt: float | None = None
    cfl_safety: float = 0.4
    dt_max: float = math.inf
    snapshot_times: tuple[float, ...] = ()
    dealias: bool = True
    velocity_method: str = "free_space"
    blowup_factor: float = 10.0
    require_probability: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise FieldError(f"viscosity must be positive, got nu={self.nu}")
        if not self.t_end > 0:
            raise FieldError(f"t_end must be positive, got {self.t_end}")
        if self.dt is not None and not self.dt > 0:
            raise FieldError(f"dt must be positive (or None), got {self.dt}")
        if not (0 < self.cfl_safety <= 1):
            raise FieldError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.velocity_method not in ("free_space", "torus"):
            raise FieldError(f"unknown velocity method {self.velocity_method!r}")
        if not self.blowup_factor > 1:
            raise FieldError(f"blowup_factor must exceed 1, got {self.blowup_factor}")
        times = tuple(float(s) for s in self.snapshot_times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FieldError("snapshot_times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.t_end + 1e-12):
            raise FieldError(
                f"snapshot_times must lie in [0, t_end]; got range "
                f"[{times[0]}, {times[-1]}] with t_end={self.t_end}")
        object.__setattr__(self, "snapshot_times", times)

    def schedule(self) -> tuple[float, ...]:
        """Snapshot times, defaulted to {0, t_end} when none are given."""
        return self.snapshot_times or (0.0, self.t_end)


@dataclass
class Trajectory:
    """Snapshots of a solve: times, fields, per-snapshot diagnostics."""

    grid: Grid2D
    times: np.ndarray
    fields: list[ScalarField]
    diagnostics: list[dict]
    config: SolverConfig
    meta: dict = field(default_factory=dict)

    def field_at(self, t: float, atol: float = 1e-9) -> ScalarField:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol:
            raise FieldError(f"no snapshot at t={t} (closest: {self.times[i]})")
        return self.fields[i]

    @property
    def nu(self) -> float:
        return self.config.nu


def _diagnostics(t: float, u: ScalarField, max_speed: float, dt_last: float) -> dict:
    return {
        "time": float(t),
        "mass": u.mass(),
        "min": u.min(),
        "max": u.max(),
        "l1": lp_norm(u, 1),
        "l43": lp_norm(u, 4.0 / 3.0),
        "l2": lp_norm(u, 2),
        "l4": lp_norm(u, 4),
        "linf": lp_norm(u, math.inf),
        "max_speed": float(max_speed),
        "dt_last": float(dt_last),
        "boundary_fraction": boundary_support_fraction(u),
    }


DriftProvider = Callable[[float], VelocityField]


class _Stepper:
    """Holds the spectral state and advances it; drift is pluggable so the
    same loop serves the nonlinear equation and its linearization."""

    def __init__(self, u0: ScalarField, cfg: SolverConfig,
                 drift: DriftProvider | None = None):
        self.grid = u0.grid
        self.cfg = cfg
        self.drift = drift
        w = np.fft.fft2(u0.values)
        if cfg.dealias:
            w = np.where(self.grid.dealias_mask, w, 0.0)
        self.w = w
        self.u_values = np.fft.ifft2(w).real
        self.t = 0.0

    def current_field(self) -> ScalarField:
        return ScalarField(self.grid, np.ascontiguousarray(self.u_values))

    def velocity(self, t: float, u_values: np.ndarray) -> VelocityField:
        if self.drift is not None:
            return self.drift(t)
        return biot_savart_field(ScalarField(self.grid, u_values),
                                 method=self.cfg.velocity_method)

    def _transport_hat(self, u_values: np.ndarray, y: VelocityField) -> np.ndarray:
        g = self.grid
        fhat = 1j * g.kx * np.fft.fft2(u_values * y.vx) \
            + 1j * g.ky * np.fft.fft2(u_values * y.vy)
        if self.cfg.dealias:
            fhat = np.where(g.dealias_mask, fhat, 0.0)
        fhat[0, 0] = 0.0  # transport moves no mass; keep it exact
        return -fhat

    def step(self, h: float, y1: VelocityField | None = None) -> None:
        """One integrating-factor Heun step of size ``h``."""
        g = self.grid
        if y1 is None:
            y1 = self.velocity(self.t, self.u_values)
        n1 = self._transport_hat(self.u_values, y1)
        E = np.exp(-self.cfg.nu * h * g.k_sq)
        w1 = E * (self.w + h * n1)
        u1 = np.fft.ifft2(w1).real
        y2 = self.velocity(self.t + h, u1)
        n2 = self._transport_hat(u1, y2)
        self.w = E * self.w + 0.5 * h * (E * n1 + n2)
        self.u_values = np.fft.ifft2(self.w).real
        self.t += h


def step_mild(u: ScalarField, dt: float, cfg: SolverConfig) -> ScalarField:
    """Advance a single field by one step (standalone convenience wrapper).

    Raises :class:`CflError` when ``dt`` violates the advective limit.
    """
    if not dt > 0:
        raise FieldError(f"dt must be positive, got {dt}")
    st = _Stepper(u, cfg)
    y = st.velocity(0.0, st.u_values)
    adm = cfg.cfl_safety * u.grid.dx / max(y.max_speed(), _TINY)
    if dt > adm * (1 + 1e-9):
        raise CflError(dt, adm, 0.0)
    st.step(dt, y1=y)
    return st.current_field()


def _validate_initial(u0: ScalarField, cfg: SolverConfig) -> None:
    if cfg.require_probability:
        peak = max(abs(u0.max()), abs(u0.min()), _TINY)
        if u0.min() < -1e-8 * peak:
            raise FieldError(
                f"initial data has negative part {u0.min():.3e} but a "
                "probability density was required (set require_probability=False "
                "for signed data)")
        mass = u0.mass()
        if abs(mass - 1.0) > 1e-8:
            raise FieldError(
                f"initial mass {mass!r} differs from 1 by more than 1e-8; "
                "normalize the density first")


def _run(st: _Stepper, cfg: SolverConfig, grid: Grid2D,
         meta: dict) -> Trajectory:
    snaps = cfg.schedule()
    times: list[float] = []
    fields: list[ScalarField] = []
    diags: list[dict] = []
    traj = Trajectory(grid, np.array([]), fields, diags, cfg, meta)

    u0_field = st.current_field()
    linf0 = max(abs(u0_field.max()), abs(u0_field.min()), _TINY)
    dt_last = 0.0
    warned_boundary = False

    for s in snaps:
        while st.t < s - 1e-12 * max(1.0, s):
            y = st.velocity(st.t, st.u_values)
            vmax = y.max_speed()
            adm = cfg.cfl_safety * grid.dx / max(vmax, _TINY)
            remaining = s - st.t
            if cfg.dt is not None:
                h = min(cfg.dt, remaining)
                if h > adm * (1 + 1e-9):
                    raise CflError(h, adm, st.t)
            else:
                h = min(adm, cfg.dt_max, remaining)
            st.step(h, y1=y)
            dt_last = h
            linf = float(np.max(np.abs(st.u_values)))
            if linf > cfg.blowup_factor * linf0:
                traj.times = np.asarray(times, dtype=np.float64)
                meta["aborted"] = {"time": st.t, "linf": linf}
                raise BlowupError(st.t, linf, linf0, traj)
        u = st.current_field()
        y = st.velocity(st.t, st.u_values)
        d = _diagnostics(s, u, y.max_speed(), dt_last)
        if d["boundary_fraction"] > 1e-8 and not warned_boundary:
            warned_boundary = True
            meta.setdefault("warnings", []).append(
                f"field reaches the domain boundary at t={s:.4f} "
                f"(boundary fraction {d['boundary_fraction']:.2e}); "
                "free-space velocities are unreliable from here on")
        times.append(s)
        fields.append(u)
        diags.append(d)
    traj.times = np.asarray(times, dtype=np.float64)
    return traj


def solve(u0: ScalarField, cfg: SolverConfig) -> Trajectory:
    """Run the nonlinear equation from ``u0`` and record snapshots."""
    _validate_initial(u0, cfg)
    st = _Stepper(u0, cfg)
    return _run(st, cfg, u0.grid, meta={})


def solve_linearized(v0: ScalarField, base, cfg: SolverConfig) -> Trajectory:
    """Advect-diffuse ``v`` in the frozen velocity of ``base``:

        dv/dt = nu Lap v - div(y(t) v).

    ``base`` is a :class:`Trajectory` (velocities are computed at its
    snapshots once and linearly interpolated in time) or a callable
    ``t -> VelocityField``.  With ``base`` the trajectory of ``u`` itself
    this is the defining linear problem of the solution map; mass is
    conserved exactly just like the nonlinear solve.
    """
    if callable(base):
        drift = base
    else:
        if base.grid != v0.grid:
            raise FieldError("base trajectory grid differs from v0 grid")
        ts = np.asarray(base.times, dtype=np.float64)
        if ts.size < 2:
            raise FieldError("base trajectory needs at least two snapshots")
        if cfg.t_end > ts[-1] + 1e-9:
            raise FieldError(
                f"base trajectory ends at t={ts[-1]} before t_end={cfg.t_end}")
        vels = [biot_savart_field(f, method=cfg.velocity_method)
                for f in base.fields]

        def drift(t: float) -> VelocityField:
            i = int(np.searchsorted(ts, t, side="right") - 1)
            i = min(max(i, 0), ts.size - 2)
            lam = (t - ts[i]) / (ts[i + 1] - ts[i])
            lam = min(max(lam, 0.0), 1.0)
            vx = (1 - lam) * vels[i].vx + lam * vels[i + 1].vx
            vy = (1 - lam) * vels[i].vy + lam * vels[i + 1].vy
            return VelocityField(v0.grid, vx, vy)

    _validate_initial(v0, cfg)
    st = _Stepper(v0, cfg, drift=drift)
    return _run(st, cfg, v0.grid, meta={"linearized": True})


def mollify_atoms(grid: Grid2D, atoms: Sequence[tuple[float, tuple[float, float]]],
                  sigma0_sq: float) -> ScalarField:
    """Gaussian mollification of a discrete probability measure, renormalized
    so the grid mass is exactly 1."""
    weights = np.array([a[0] for a in atoms], dtype=np.float64)
    points = np.array([a[1] for a in atoms], dtype=np.float64)
    if np.any(weights < 0):
        raise FieldError(f"atom weights must be nonnegative, got {weights}")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise FieldError(
            f"atom weights must sum to 1 (got {weights.sum()!r}); "
            "normalize the measure first")
    if not sigma0_sq > 0:
        raise FieldError(f"sigma0_sq must be positive, got {sigma0_sq}")
    X, Y = grid.meshgrid()
    vals = np.zeros_like(X)
    for w, (px, py) in zip(weights, points):
        vals += w / (2.0 * np.pi * sigma0_sq) * np.exp(
            -((X - px) ** 2 + (Y - py) ** 2) / (2.0 * sigma0_sq))
    f = ScalarField(grid, vals)
    mass = f.mass()
    if not mass > 0:
        raise FieldError("mollified measure has zero grid mass; atoms outside the box?")
    return ScalarField(grid, vals / mass)


def solve_from_measure(grid: Grid2D, atoms: Sequence[tuple[float, tuple[float, float]]],
                       cfg: SolverConfig, sigma0_sq: float | None = None) -> Trajectory:
    """Solve from a discrete measure ``sum_i w_i delta_{x_i}``.

    The measure is mollified with a Gaussian of per-axis variance
    ``sigma0_sq`` (default ``4 dx^2``) and renormalized.  The mollification
    is recorded in the trajectory metadata: smoothing by this Gaussian
    equals running the heat part for ``sigma0_sq / (2 nu)`` extra time, and
    decay-law fits consume that ``time_offset`` to compare against the
    unmollified ideal.
    """
    if sigma0_sq is None:
        sigma0_sq = 4.0 * grid.dx**2
    u0 = mollify_atoms(grid, atoms, sigma0_sq)
    traj = solve(u0, cfg)
    traj.meta["mollified_measure"] = {
        "atoms": [[float(w), [float(p[0]), float(p[1])]] for w, p in atoms],
        "sigma0_sq": float(sigma0_sq),
        "time_offset": float(sigma0_sq / (2.0 * cfg.nu)),
    }
    return traj


def grid_drift_provider(traj_times: np.ndarray, velocities: list[VelocityField]):
    """Time-interpolating particle-drift sampler built on gridded velocities.

    Returns ``drift(t, points) -> (M, 2)`` doing linear interpolation in time
    and periodic bilinear interpolation in space.
    """
    ts = np.asarray(traj_times, dtype=np.float64)
    if ts.size != len(velocities) or ts.size < 1:
        raise FieldError("times and velocity list must have equal nonzero length")

    def drift(t: float, points: np.ndarray) -> np.ndarray:
        if ts.size == 1:
            return interpolate_velocity(velocities[0], points)
        i = int(np.searchsorted(ts, t, side="right") - 1)
        i = min(max(i, 0), ts.size - 2)
        lam = (t - ts[i]) / (ts[i + 1] - ts[i])
        lam = min(max(lam, 0.0), 1.0)
        a = interpolate_velocity(velocities[i], points)
        b = interpolate_velocity(velocities[i + 1], points)
        return (1 - lam) * a + lam * b

    return drift
