"""Interacting-particle representation of the vorticity dynamics.

N exchangeable particles with uniform weights 1/N follow

    X_i <- X_i + K_delta[empirical law](X_i) * dt + sqrt(2 nu dt) * G_i,

an Euler-Maruyama discretization of the distribution-dependent SDE whose
time-marginal density solves the viscous vorticity equation.  The drift is
the mollified Biot-Savart sum over the ensemble itself (self-interaction
excluded, which is automatic because the blob kernel vanishes at zero
separation).

All randomness is counter-based: the Gaussian increments of step ``k`` come
from a Philox stream keyed by ``(seed, purpose, k)``, so any run is bitwise
reproducible and a run restarted from a saved ensemble continues on exactly
the same noise path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kde
from .biot_savart import velocity_at_points
from .fields import FieldError, Grid2D, ScalarField, VelocityField, lp_norm

_PURPOSE_SAMPLE = 1
_PURPOSE_STEP = 2


class StabilityError(RuntimeError):
    """The time step exceeds the drift stability bound."""

    def __init__(self, dt: float, admissible: float, t: float):
        self.dt = dt
        self.admissible = admissible
        self.t = t
        super().__init__(
            f"time step {dt:.3e} exceeds the admissible {admissible:.3e} at "
            f"t={t:.4f} (max drift x dt must stay below the blob/grid scale)")


def _stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    """Counter-based generator: a pure function of (seed, purpose, index)."""
    if index < 0 or index >= 1 << 48:
        raise FieldError(f"stream index out of range: {index}")
    return np.random.Generator(np.random.Philox(
        key=[np.uint64(seed), np.uint64((purpose << 48) | index)]))


@dataclass(frozen=True)
class SdeConfig:
    """Euler-Maruyama parameters.  ``delta=None`` uses the spacing-based
    default ``c_delta * diameter * N^(-1/2)`` evaluated per step."""

    nu: float
    t_end: float
    dt: float
    n_particles: int
    seed: int
    method: str = "treecode"  # direct | treecode | grid
    delta: float | None = None
    c_delta: float = 2.0
    theta: float = 0.5
    order: int = 6
    leaf_size: int = 16
    bandwidth: float | None = None  # None -> Silverman rule at KDE time
    kde_grid: Grid2D | None = None
    snapshot_times: tuple[float, ...] = ()
    stability_safety: float = 1.0
    drift_enabled: bool = True

    def __post_init__(self):
        if self.nu < 0:
            raise FieldError(f"viscosity must be nonnegative, got nu={self.nu}")
        if not self.dt > 0:
            raise FieldError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise FieldError(f"t_end must be positive, got {self.t_end}")
        if self.n_particles < 1:
            raise FieldError(f"need at least one particle, got {self.n_particles}")
        if self.method not in ("direct", "treecode", "grid"):
            raise FieldError(f"unknown drift method {self.method!r}")
        if self.method == "grid" and self.kde_grid is None:
            raise FieldError("grid drift method requires kde_grid")
        if self.delta is not None and not self.delta > 0:
            raise FieldError(f"delta must be positive when given, got {self.delta}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise FieldError(f"bandwidth must be positive when given, got {self.bandwidth}")
        times = tuple(float(s) for s in self.snapshot_times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FieldError("snapshot_times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] > self.t_end + 1e-12):
            raise FieldError("snapshot_times must lie in [0, t_end]")
        for s in times:
            k = s / self.dt
            if abs(k - round(k)) > 1e-6:
                raise FieldError(
                    f"snapshot time {s} is not a multiple of dt={self.dt}; "
                    "align snapshots with the step lattice")
        object.__setattr__(self, "snapshot_times", times)

    def schedule(self) -> tuple[float, ...]:
        return self.snapshot_times or (0.0, self.t_end)


@dataclass(frozen=True)
class ParticleEnsemble:
    """Immutable particle snapshot; weights are uniformly 1/N."""

    positions: np.ndarray
    seed: int
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise FieldError(f"positions must have shape (N, 2), got {pos.shape}")
        if pos.shape[0] < 1:
            raise FieldError("ensemble needs at least one particle")
        if not np.all(np.isfinite(pos)):
            raise FieldError("particle positions contain non-finite entries")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


# ---------------------------------------------------------------------------
# initial sampling
# ---------------------------------------------------------------------------


def sample_initial(law, n: int, seed: int,
                   sigma0_sq: float = 0.0) -> ParticleEnsemble:
    """Draw N i.i.d. samples from a gridded density or a discrete measure.

    Density case: inverse-CDF over cells (each node owns the cell centered on
    it) plus a uniform jitter within the cell.  Atomic case: categorical draw
    over atoms; with ``sigma0_sq > 0`` each particle is then displaced by a
    centered Gaussian of that per-axis variance, i.e. the sample comes from
    the measure mollified exactly as :func:`~vortexlab.solver.solve_from_measure`
    mollifies it (same time-offset interpretation).  A strictly atomic start
    (``sigma0_sq = 0``) puts many particles at coincident points, which the
    interaction drift rejects as non-finite.  Deterministic given ``seed``.
    """
    if n < 1:
        raise FieldError(f"sample count must be positive, got {n}")
    if sigma0_sq < 0:
        raise FieldError(f"sigma0_sq must be nonnegative, got {sigma0_sq}")
    gen = _stream(seed, _PURPOSE_SAMPLE, 0)

    if isinstance(law, ScalarField):
        if sigma0_sq > 0:
            raise FieldError(
                "sigma0_sq mollification only applies to atomic measures; "
                "smooth the gridded density instead")
        vals = law.values
        peak = max(abs(float(vals.max())), 1e-300)
        if float(vals.min()) < -1e-8 * peak:
            raise FieldError(
                f"density has negative part {vals.min():.3e}; not a probability law")
        mass = law.mass()
        if abs(mass - 1.0) > 1e-8:
            raise FieldError(f"density mass {mass!r} is not 1 (within 1e-8)")
        p = np.clip(vals, 0.0, None).ravel()
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        cells = np.searchsorted(cdf, gen.random(n), side="right")
        cells = np.minimum(cells, p.size - 1)
        g = law.grid
        ix, iy = np.divmod(cells, g.n)
        jitter = gen.random((n, 2)) - 0.5
        pos = np.stack([g.x1[ix], g.x1[iy]], axis=1) + jitter * g.dx
        return ParticleEnsemble(pos, seed=seed)

    atoms = list(law)
    weights = np.array([a[0] for a in atoms], dtype=np.float64)
    points = np.array([a[1] for a in atoms], dtype=np.float64)
    if np.any(weights < 0):
        raise FieldError(f"atom weights must be nonnegative, got {weights}")
    if abs(weights.sum() - 1.0) > 1e-8:
        raise FieldError(f"atom weights sum to {weights.sum()!r}, not 1")
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    which = np.searchsorted(cdf, gen.random(n), side="right")
    which = np.minimum(which, len(atoms) - 1)
    pos = points[which].copy()
    if sigma0_sq > 0:
        pos += math.sqrt(sigma0_sq) * gen.standard_normal((n, 2))
    return ParticleEnsemble(pos, seed=seed)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def resolve_delta(cfg: SdeConfig, positions: np.ndarray) -> float:
    """Blob width: explicit override or ``c_delta * diam * N^(-1/2)``."""
    if cfg.delta is not None:
        return cfg.delta
    span = positions.max(axis=0) - positions.min(axis=0)
    diam = float(np.hypot(span[0], span[1]))
    return max(cfg.c_delta * diam * cfg.n_particles ** (-0.5), 1e-12)


def _drift(ens: ParticleEnsemble, cfg: SdeConfig,
           drift_field: Callable[[float, np.ndarray], np.ndarray] | None):
    if not cfg.drift_enabled:
        return np.zeros_like(ens.positions), math.inf
    if drift_field is not None:
        vel = np.asarray(drift_field(ens.time, ens.positions))
        scale = cfg.kde_grid.dx if cfg.kde_grid is not None else math.inf
        vmax = float(np.max(np.hypot(vel[:, 0], vel[:, 1]))) if vel.size else 0.0
        return vel, cfg.stability_safety * scale / max(vmax, 1e-300)
    delta = resolve_delta(cfg, ens.positions)
    if cfg.method == "grid":
        vel = velocity_at_points((ens.positions, ens.weights), ens.positions,
                                 delta, method="grid", grid=cfg.kde_grid,
                                 bandwidth=cfg.bandwidth)
        scale = cfg.kde_grid.dx
    else:
        vel = velocity_at_points((ens.positions, ens.weights), ens.positions,
                                 delta, method=cfg.method, theta=cfg.theta,
                                 order=cfg.order, leaf_size=cfg.leaf_size)
        scale = delta
    vmax = float(np.max(np.hypot(vel[:, 0], vel[:, 1])))
    if not math.isfinite(vmax):
        raise FieldError(
            f"drift is not finite at t={ens.time}; the ensemble has likely "
            "diverged (check positions and the blob width)")
    return vel, cfg.stability_safety * scale / max(vmax, 1e-300)


def em_step(ens: ParticleEnsemble, cfg: SdeConfig,
            drift_field: Callable[[float, np.ndarray], np.ndarray] | None = None
            ) -> ParticleEnsemble:
    """One Euler-Maruyama step.  ``drift_field(t, points)`` overrides the
    self-interaction drift (used by the pathwise probes, where the drift is a
    frozen external field)."""
    vel, admissible = _drift(ens, cfg, drift_field)
    if cfg.dt > admissible * (1 + 1e-9):
        raise StabilityError(cfg.dt, admissible, ens.time)
    noise = _stream(ens.seed, _PURPOSE_STEP, ens.step_index).standard_normal((ens.n, 2))
    pos = ens.positions + cfg.dt * vel + math.sqrt(2.0 * cfg.nu * cfg.dt) * noise
    return ParticleEnsemble(pos, seed=ens.seed, time=ens.time + cfg.dt,
                            step_index=ens.step_index + 1)


# ---------------------------------------------------------------------------
# marginals and velocity representation
# ---------------------------------------------------------------------------


def marginal_density(ens: ParticleEnsemble, grid: Grid2D,
                     bandwidth: float | None = None) -> ScalarField:
    """Gaussian KDE of the empirical law, deposited on the grid.

    Nonnegative up to clamped roundoff; mass exactly 1 by construction of
    the (periodized, renormalized) kernel.  Default bandwidth: Silverman.
    """
    return _kde.kde_density(grid, ens.positions, bandwidth)


def velocity_representation(obj, grid: Grid2D | None = None,
                            bandwidth: float | None = None) -> VelocityField:
    """Velocity carried by a law: ``K(density)``, with the density taken from
    an ensemble through :func:`marginal_density` or given directly."""
    from .biot_savart import biot_savart_field
    if isinstance(obj, ScalarField):
        return biot_savart_field(obj)
    if grid is None:
        raise FieldError("velocity_representation from an ensemble needs a grid")
    return biot_savart_field(marginal_density(obj, grid, bandwidth))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class ParticleTrajectory:
    times: np.ndarray
    ensembles: list[ParticleEnsemble]
    kde_fields: list[ScalarField] | None
    diagnostics: list[dict]
    config: SdeConfig
    meta: dict = field(default_factory=dict)

    def ensemble_at(self, t: float, atol: float = 1e-9) -> ParticleEnsemble:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > atol:
            raise FieldError(f"no particle snapshot at t={t}")
        return self.ensembles[i]


def simulate(u0, cfg: SdeConfig, reference=None,
             drift_field: Callable[[float, np.ndarray], np.ndarray] | None = None,
             sigma0_sq: float = 0.0) -> ParticleTrajectory:
    """Run the particle system and snapshot ensembles, KDE marginals, and
    diagnostics at the requested times.

    ``u0`` is a density field, an atoms list, or an already-sampled
    :class:`ParticleEnsemble` (in which case its clock and noise stream
    continue from where it stands -- restarting from a saved snapshot
    reproduces the original run bitwise).  ``reference`` is an optional
    ``t -> ScalarField`` callable or PDE trajectory; when present and a
    ``kde_grid`` is configured, the representation discrepancy
    ``e(t) = L1(KDE, reference)`` is recorded per snapshot.

    Atoms may be sampled with Gaussian mollification ``sigma0_sq``; the
    blur and its heat-flow ``time_offset`` land in ``meta["mollified_measure"]``
    so comparisons can shift the reference clock accordingly.
    """
    meta: dict = {}
    if isinstance(u0, ParticleEnsemble):
        ens = u0
        if ens.n != cfg.n_particles:
            raise FieldError(
                f"ensemble has {ens.n} particles but config says {cfg.n_particles}")
        if sigma0_sq > 0:
            raise FieldError("sigma0_sq applies when sampling a measure, "
                             "not when continuing from an ensemble")
    else:
        ens = sample_initial(u0, cfg.n_particles, cfg.seed, sigma0_sq)
        if sigma0_sq > 0 and not isinstance(u0, ScalarField):
            entry = {
                "atoms": [[float(w), [float(p[0]), float(p[1])]]
                          for w, p in u0],
                "sigma0_sq": float(sigma0_sq),
            }
            if cfg.nu > 0:
                entry["time_offset"] = float(sigma0_sq / (2.0 * cfg.nu))
            meta["mollified_measure"] = entry

    ref_at = None
    if reference is not None:
        ref_at = reference if callable(reference) else reference.field_at

    times: list[float] = []
    ensembles: list[ParticleEnsemble] = []
    kdes: list[ScalarField] | None = [] if cfg.kde_grid is not None else None
    diags: list[dict] = []

    def record(t: float):
        times.append(t)
        ensembles.append(ens)
        d = {
            "time": float(t),
            "step_index": ens.step_index,
            "centroid": [float(c) for c in ens.centroid()],
            "mean_sq_radius": float(np.mean(np.sum(ens.positions**2, axis=1))),
        }
        if kdes is not None:
            kde = marginal_density(ens, cfg.kde_grid, cfg.bandwidth)
            kdes.append(kde)
            d["kde_mass"] = kde.mass()
            # surrogate for membership in the uniqueness class: the law's
            # L^{4/3} norm is only observable through the KDE marginal
            d["kde_l43"] = lp_norm(kde, 4.0 / 3.0)
            if ref_at is not None:
                ref = ref_at(t)
                d["e_l1"] = float(np.sum(np.abs(kde.values - ref.values))
                                  * cfg.kde_grid.cell_area)
        diags.append(d)

    t0 = ens.time
    for s in cfg.schedule():
        target = t0 + s
        n_steps = round((target - ens.time) / cfg.dt)
        if abs(target - ens.time - n_steps * cfg.dt) > 1e-6 * cfg.dt + 1e-12:
            raise FieldError(
                f"snapshot at t={target} is unreachable with dt={cfg.dt}")
        for _ in range(n_steps):
            ens = em_step(ens, cfg, drift_field)
        record(ens.time)

    return ParticleTrajectory(np.asarray(times), ensembles, kdes, diags, cfg,
                              meta=meta)


# ---------------------------------------------------------------------------
# pathwise uniqueness probe
# ---------------------------------------------------------------------------


def pathwise_uniqueness_probe(u0, cfg: SdeConfig, reference=None, *,
                              coarse_n: int | None = None,
                              drift_a=None, drift_b=None,
                              ens0: ParticleEnsemble | None = None) -> dict:
    """Drive two particle systems with identical noise but different frozen
    drift evaluations; report the path gap growth.

    With a ``reference`` trajectory the drift is the frozen field
    ``K(u(t))``: path A interpolates it from a grid coarsened to ``coarse_n``
    (default half the native resolution), path B from the native grid -- the
    gap then measures pure drift-discretization sensitivity of the paths.
    Alternatively pass explicit ``drift_a/b(t, points)`` callables.

    The two systems share initial positions and per-step Gaussian draws (same
    seed, same step indices), so any gap is attributable to the drift
    difference alone.  Passing an ``ens0`` with a different seed than the
    config is rejected -- with independent noise the gap measures nothing.
    """
    report_extra: dict = {}
    if reference is not None:
        if drift_a is not None or drift_b is not None:
            raise FieldError("pass either a reference trajectory or explicit "
                             "drift callables, not both")
        from .biot_savart import biot_savart_field
        from .solver import grid_drift_provider
        times = np.asarray(reference.times, dtype=np.float64)
        if times[-1] < cfg.t_end - 1e-9:
            raise FieldError(
                f"reference trajectory ends at t={times[-1]} < t_end={cfg.t_end}")
        fine = [biot_savart_field(f) for f in reference.fields]
        g = reference.fields[0].grid
        if coarse_n is None:
            coarse_n = g.n // 2
        if g.n % coarse_n != 0 or coarse_n < 16:
            raise FieldError(
                f"coarse resolution {coarse_n} must divide the native {g.n} "
                "and be >= 16")
        step = g.n // coarse_n
        cg = Grid2D(g.L, coarse_n)
        coarse = [VelocityField(cg, np.ascontiguousarray(v.vx[::step, ::step]),
                                np.ascontiguousarray(v.vy[::step, ::step]))
                  for v in fine]
        drift_a = grid_drift_provider(times, coarse)
        drift_b = grid_drift_provider(times, fine)
        report_extra = {"coarse_n": int(coarse_n), "fine_n": int(g.n)}
    elif drift_a is None or drift_b is None:
        raise FieldError("need a reference trajectory or both drift callables")

    if ens0 is None:
        ens0 = (u0 if isinstance(u0, ParticleEnsemble)
                else sample_initial(u0, cfg.n_particles, cfg.seed))
    if ens0.seed != cfg.seed:
        raise FieldError(
            f"ensemble seed {ens0.seed} != config seed {cfg.seed}: the probe "
            "requires identical noise streams")

    a = ens0
    b = ens0
    n_steps = round(cfg.t_end / cfg.dt)
    times = [0.0]
    gaps = [0.0]
    for _ in range(n_steps):
        a = em_step(a, cfg, drift_field=drift_a)
        b = em_step(b, cfg, drift_field=drift_b)
        gap = np.hypot(*(a.positions - b.positions).T)
        times.append(a.time)
        gaps.append(float(gap.mean()))
    return {
        "times": np.asarray(times),
        "mean_gap": np.asarray(gaps),
        "sup_mean_gap": float(np.max(gaps)),
        "final_mean_gap": float(gaps[-1]),
        "n_particles": ens0.n,
        **report_extra,
    }
