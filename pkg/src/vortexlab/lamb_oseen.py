"""Closed forms for the self-similar decaying vortex (the key exact solution).

With circulation ``gamma`` and viscosity ``nu``, the vorticity started from a
point vortex at the origin is the spreading Gaussian

    u(x, t) = gamma / (4 pi nu t) * exp(-|x|^2 / (4 nu t)),

whose induced speed is purely azimuthal.  Because the field is radial, the
transport term vanishes identically and the pair (vorticity, velocity) solves
the full nonlinear equation; this makes the family the workhorse regression
oracle.  A variance offset ``sigma0_sq`` shifts the profile to the Gaussian
with per-axis variance ``sigma0_sq + 2 nu t`` (the mollified start used by
measure-valued initial data: mollification by a Gaussian of per-axis variance
``sigma0_sq`` is exactly a time shift ``sigma0_sq / (2 nu)``).
"""

from __future__ import annotations

import numpy as np

from .fields import FieldError, Grid2D, ScalarField, VelocityField


def _variance(t: float, nu: float, sigma0_sq: float) -> float:
    s2 = sigma0_sq + 2.0 * nu * t
    if not s2 > 0:
        raise FieldError(
            f"profile undefined: per-axis variance {s2} (t={t}, nu={nu}, "
            f"sigma0_sq={sigma0_sq}) must be positive")
    return s2


def vorticity(r, t: float, nu: float, gamma: float = 1.0,
              sigma0_sq: float = 0.0):
    """Radial vorticity profile at distance ``r`` (scalar or array)."""
    s2 = _variance(t, nu, sigma0_sq)
    r = np.asarray(r, dtype=np.float64)
    return gamma / (2.0 * np.pi * s2) * np.exp(-(r * r) / (2.0 * s2))


def azimuthal_speed(r, t: float, nu: float, gamma: float = 1.0,
                    sigma0_sq: float = 0.0):
    """Induced speed ``gamma * (1 - exp(-r^2/(2 s^2))) / (2 pi r)``; 0 at r=0."""
    s2 = _variance(t, nu, sigma0_sq)
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0.0,
                       gamma * -np.expm1(-(r * r) / (2.0 * s2))
                       / (2.0 * np.pi * np.where(r > 0, r, 1.0)),
                       0.0)
    return out


def lp_norm_exact(p: float, t: float, nu: float, gamma: float = 1.0,
                  sigma0_sq: float = 0.0) -> float:
    """Exact ``L^p`` norm of the vorticity: ``|gamma| (4 pi nu t_e)^(1/p - 1) p^(-1/p)``
    with the effective time ``t_e = t + sigma0_sq / (2 nu)``."""
    s2 = _variance(t, nu, sigma0_sq)
    if p == np.inf:
        return abs(gamma) / (2.0 * np.pi * s2)
    if not p >= 1:
        raise FieldError(f"p must be >= 1, got {p}")
    return float(abs(gamma) * (2.0 * np.pi * s2) ** (1.0 / p - 1.0) * p ** (-1.0 / p))


def velocity_l2_sq_exact(t: float, nu: float, gamma: float = 1.0,
                         sigma0_sq: float = 0.0, r_max: float = np.inf) -> float:
    """``int_{|x|<r_max} |speed|^2 dx`` by quadrature of the closed-form profile.

    The full-plane integral diverges logarithmically (speed ~ 1/r), so a
    finite truncation radius is required for a finite answer.
    """
    from scipy.integrate import quad
    s2 = _variance(t, nu, sigma0_sq)
    if not np.isfinite(r_max):
        raise FieldError("velocity L^2 on the whole plane diverges; pass r_max")

    def integrand(r):
        v = gamma * -np.expm1(-(r * r) / (2.0 * s2)) / (2.0 * np.pi * r)
        return 2.0 * np.pi * r * v * v

    val, _ = quad(integrand, 0.0, r_max, limit=200)
    return float(val)


def vorticity_field(grid: Grid2D, t: float, nu: float, gamma: float = 1.0,
                    sigma0_sq: float = 0.0, center=(0.0, 0.0)) -> ScalarField:
    """Sample the vorticity on a grid (no periodic wrap; keep it localized)."""
    X, Y = grid.meshgrid()
    r = np.hypot(X - center[0], Y - center[1])
    return ScalarField(grid, np.asarray(vorticity(r, t, nu, gamma, sigma0_sq)))


def velocity_field(grid: Grid2D, t: float, nu: float, gamma: float = 1.0,
                   sigma0_sq: float = 0.0, center=(0.0, 0.0)) -> VelocityField:
    """Sample the closed-form velocity on a grid."""
    X, Y = grid.meshgrid()
    dx = X - center[0]
    dy = Y - center[1]
    r = np.hypot(dx, dy)
    speed = np.asarray(azimuthal_speed(r, t, nu, gamma, sigma0_sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r = np.where(r > 0.0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
    # unit azimuthal direction is (-y, x)/r
    return VelocityField(grid, -dy * inv_r * speed, dx * inv_r * speed)


def gaussian_density(grid: Grid2D, sigma_sq: float, center=(0.0, 0.0),
                     mass: float = 1.0) -> ScalarField:
    """Isotropic Gaussian with per-axis variance ``sigma_sq`` (integral = mass)."""
    if not sigma_sq > 0:
        raise FieldError(f"sigma_sq must be positive, got {sigma_sq}")
    X, Y = grid.meshgrid()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return ScalarField(grid, mass / (2.0 * np.pi * sigma_sq) * np.exp(-r2 / (2.0 * sigma_sq)))


def exact_trajectory(grid: Grid2D, times, nu: float, gamma: float = 1.0,
                     sigma0_sq: float = 0.0, center=(0.0, 0.0)):
    """Closed-form solution sampled on a grid as a :class:`~.solver.Trajectory`.

    Every snapshot is the analytic profile (no time stepping), so this object
    serves as an exact reference wherever a trajectory is consumed: weak-form
    residual refinement studies, drift fields for particle probes, regression
    baselines.  Diagnostics are computed from the sampled fields.
    """
    from .fields import lp_norm
    from .solver import SolverConfig, Trajectory

    ts = np.asarray(times, dtype=np.float64)
    if ts.ndim != 1 or ts.size < 1 or np.any(np.diff(ts) <= 0):
        raise FieldError("times must be a strictly increasing 1-D sequence")
    cfg = SolverConfig(nu=nu, t_end=float(ts[-1]) if ts[-1] > 0 else 1.0,
                       snapshot_times=tuple(float(t) for t in ts if 0 < t <= ts[-1]))
    fields = []
    diags = []
    for t in ts:
        f = vorticity_field(grid, float(t), nu, gamma, sigma0_sq, center)
        fields.append(f)
        diags.append({
            "time": float(t), "mass": f.mass(), "min": f.min(), "max": f.max(),
            "l1": lp_norm(f, 1), "l43": lp_norm(f, 4.0 / 3.0),
            "l2": lp_norm(f, 2), "l4": lp_norm(f, 4),
            "linf": lp_norm(f, np.inf), "max_speed": float("nan"),
            "dt_last": 0.0, "boundary_fraction": 0.0,
        })
    traj = Trajectory(grid=grid, times=ts, fields=fields, diagnostics=diags,
                      config=cfg, meta={"exact": True})
    if sigma0_sq > 0:
        traj.meta["mollified_measure"] = {
            "atoms": [[1.0, [float(center[0]), float(center[1])]]],
            "sigma0_sq": float(sigma0_sq),
            "time_offset": float(sigma0_sq / (2.0 * nu)),
        }
    return traj
