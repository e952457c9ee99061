"""Scenario configs (TOML) and their execution.

A scenario file names a ``kind`` plus nested sections; :func:`run_scenario`
dispatches it, writes a run directory through :mod:`.runio`, and returns an
exit status: 0 when every enabled check passed, 1 when one failed.  Schema
violations raise :class:`ConfigError` with the dotted path of the offending
field; the CLI maps error classes to distinct exit codes.

Supported kinds:

``spectral-run``     solve the PDE, record diagnostics + conservation checks
``particle-run``     run the interacting particle system, KDE marginals
``verify-weak``      weak-form residual of a solve (or an existing run dir)
``verify-uniqueness`` two-resolution separation functional h_eps
``flow-check``       solve/restart/continue consistency
``markov-probe``     conditional-law probe vs the linearized reference
``kernel-bench``     direct vs treecode velocity summation benchmark
``convergence-study`` refinement table {level, h, error, order}
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

try:  # 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - environment-dependent
    import tomli as tomllib

from . import lamb_oseen, runio
from .biot_savart import biot_savart_field, velocity_at_points
from .fields import FieldError, Grid2D, ScalarField, lp_norm, make_grid
from .particles import SdeConfig, simulate
from .solver import SolverConfig, solve, solve_from_measure
from .verification import (decay_fit, default_test_bank, flow_property_check,
                           markov_probe, uniqueness_functional, weak_residual)

SCENARIO_KINDS = ("spectral-run", "particle-run", "verify-weak",
                  "verify-uniqueness", "flow-check", "markov-probe",
                  "kernel-bench", "convergence-study")

OUTPUT_ROOT_ENV = "VORTEXLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Schema violation; carries the dotted path of the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at `{path}`: {message}")


class MissingInputError(FileNotFoundError):
    """A referenced input path does not exist."""


# ---------------------------------------------------------------------------
# loading and validation
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    """Parse a TOML scenario file (syntax errors keep tomllib's line/column
    info, prefixed with the file name)."""
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<syntax>", f"{p}: {e}") from e


def _get(cfg: dict, dotted: str, default=None):
    cur = cfg
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return default
        cur = cur[part]
    return cur


def _need(cfg: dict, dotted: str, typ, pred=None, expect: str = ""):
    val = _get(cfg, dotted)
    if val is None:
        raise ConfigError(dotted, "required field is missing")
    return _coerce(dotted, val, typ, pred, expect)


def _opt(cfg: dict, dotted: str, typ, default, pred=None, expect: str = ""):
    val = _get(cfg, dotted)
    if val is None:
        return default
    return _coerce(dotted, val, typ, pred, expect)


def _coerce(dotted: str, val, typ, pred, expect: str):
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if typ is int and isinstance(val, bool):
        raise ConfigError(dotted, f"expected an integer, got {val!r}")
    if not isinstance(val, typ):
        raise ConfigError(
            dotted, f"expected {getattr(typ, '__name__', typ)}, got {type(val).__name__}")
    if pred is not None and not pred(val):
        raise ConfigError(dotted, expect or f"value {val!r} is invalid")
    return val


def _power_of_two(v) -> bool:
    return isinstance(v, int) and v >= 16 and (v & (v - 1)) == 0


def parse_grid(cfg: dict, section: str = "grid") -> Grid2D:
    L = _need(cfg, f"{section}.L", float, lambda v: v > 0, "must be > 0")
    n = _need(cfg, f"{section}.n", int, _power_of_two,
              "must be a power of two >= 16")
    return make_grid(L, n)


def parse_solver(cfg: dict, section: str = "solver") -> SolverConfig:
    nu = _need(cfg, f"{section}.nu", float, lambda v: v > 0, "must be > 0")
    t_end = _need(cfg, f"{section}.t_end", float, lambda v: v > 0, "must be > 0")
    dt = _opt(cfg, f"{section}.dt", float, None, lambda v: v > 0, "must be > 0")
    snaps = _opt(cfg, f"{section}.snapshot_times", list, None)
    if snaps is None:
        k = _opt(cfg, f"{section}.n_snapshots", int, 8, lambda v: v >= 1,
                 "must be >= 1")
        snaps = [t_end * (i + 1) / k for i in range(k)]
    try:
        return SolverConfig(
            nu=nu, t_end=t_end, dt=dt,
            cfl_safety=_opt(cfg, f"{section}.cfl_safety", float, 0.4,
                            lambda v: 0 < v <= 1, "must be in (0, 1]"),
            dt_max=_opt(cfg, f"{section}.dt_max", float, math.inf,
                        lambda v: v > 0, "must be > 0"),
            snapshot_times=tuple(float(s) for s in snaps),
            dealias=_opt(cfg, f"{section}.dealias", bool, True),
            velocity_method=_opt(cfg, f"{section}.velocity_method", str,
                                 "free_space",
                                 lambda v: v in ("free_space", "torus"),
                                 "must be 'free_space' or 'torus'"),
        )
    except FieldError as e:
        raise ConfigError(section, str(e)) from e


def parse_particles(cfg: dict, seed: int, section: str = "particles") -> SdeConfig:
    kde = _get(cfg, f"{section}.kde_grid")
    kde_grid = parse_grid({"kde_grid": kde}, "kde_grid") if kde is not None else None
    t_end = _need(cfg, f"{section}.t_end", float, lambda v: v > 0, "must be > 0")
    dt = _need(cfg, f"{section}.dt", float, lambda v: v > 0, "must be > 0")
    snaps = _opt(cfg, f"{section}.snapshot_times", list, None)
    if snaps is None:
        k = _opt(cfg, f"{section}.n_snapshots", int, 4, lambda v: v >= 1,
                 "must be >= 1")
        stride = max(1, round(t_end / dt) // k)
        snaps = [i * stride * dt for i in range(1, round(t_end / dt) // stride + 1)]
    try:
        return SdeConfig(
            nu=_need(cfg, f"{section}.nu", float, lambda v: v >= 0, "must be >= 0"),
            t_end=t_end, dt=dt,
            n_particles=_need(cfg, f"{section}.n_particles", int,
                              lambda v: v >= 1, "must be >= 1"),
            seed=seed,
            method=_opt(cfg, f"{section}.method", str, "treecode",
                        lambda v: v in ("direct", "treecode", "grid"),
                        "must be 'direct', 'treecode', or 'grid'"),
            delta=_opt(cfg, f"{section}.delta", float, None,
                       lambda v: v > 0, "must be > 0"),
            bandwidth=_opt(cfg, f"{section}.bandwidth", float, None,
                           lambda v: v > 0, "must be > 0"),
            kde_grid=kde_grid,
            snapshot_times=tuple(float(s) for s in snaps),
            drift_enabled=_opt(cfg, f"{section}.drift_enabled", bool, True),
            c_delta=_opt(cfg, f"{section}.c_delta", float, 2.0,
                         lambda v: v > 0, "must be > 0"),
            theta=_opt(cfg, f"{section}.theta", float, 0.5,
                       lambda v: 0 < v < 1, "must be in (0, 1)"),
        )
    except FieldError as e:
        raise ConfigError(section, str(e)) from e


def build_initial(cfg: dict, grid: Grid2D, nu: float):
    """Initial datum from the ``[initial]`` section.

    Returns ``(kind, payload)`` with kind ``"field"`` (a ScalarField) or
    ``"atoms"`` (a list of ``(w, (x, y))``).
    """
    typ = _need(cfg, "initial.type", str,
                lambda v: v in ("lamb_oseen", "gaussian", "atoms", "field"),
                "must be one of 'lamb_oseen', 'gaussian', 'atoms', 'field'")
    if typ == "lamb_oseen":
        t0 = _need(cfg, "initial.t0", float, lambda v: v > 0, "must be > 0")
        gamma = _opt(cfg, "initial.gamma", float, 1.0)
        center = _opt(cfg, "initial.center", list, [0.0, 0.0])
        f = lamb_oseen.vorticity_field(grid, t0, nu, gamma,
                                       center=(center[0], center[1]))
        return "field", f
    if typ == "gaussian":
        s2 = _need(cfg, "initial.sigma_sq", float, lambda v: v > 0, "must be > 0")
        center = _opt(cfg, "initial.center", list, [0.0, 0.0])
        return "field", lamb_oseen.gaussian_density(grid, s2,
                                                    center=(center[0], center[1]))
    if typ == "atoms":
        raw = _need(cfg, "initial.atoms", list, lambda v: len(v) >= 1,
                    "need at least one atom [w, x, y]")
        atoms = []
        for i, a in enumerate(raw):
            if not isinstance(a, list) or len(a) != 3:
                raise ConfigError(f"initial.atoms[{i}]",
                                  "each atom is [weight, x, y]")
            atoms.append((float(a[0]), (float(a[1]), float(a[2]))))
        return "atoms", atoms
    path = Path(_need(cfg, "initial.path", str))
    if not path.exists():
        raise MissingInputError(f"initial field not found: {path}")
    f, _meta = runio.load_field(path.with_suffix(""))
    if f.grid != grid:
        raise ConfigError("initial.path",
                          f"stored field is on {f.grid}, scenario grid is {grid}")
    return "field", f


def _exact_reference(cfg: dict, nu: float):
    """Closed-form reference ``t -> ScalarField`` for Lamb-Oseen-type initial
    data (aged by t0 or by the mollification variance)."""
    typ = _get(cfg, "initial.type")
    gamma = _opt(cfg, "initial.gamma", float, 1.0)
    center = _opt(cfg, "initial.center", list, [0.0, 0.0])

    if typ == "lamb_oseen":
        t0 = _need(cfg, "initial.t0", float, lambda v: v > 0, "must be > 0")

        def ref(t, grid):
            return lamb_oseen.vorticity_field(grid, t0 + t, nu, gamma,
                                              center=(center[0], center[1]))
        return ref
    if typ == "atoms":
        atoms = _get(cfg, "initial.atoms")
        if atoms is not None and len(atoms) == 1:
            w, x, y = atoms[0]

            def ref(t, grid):
                return lamb_oseen.vorticity_field(grid, t, nu, float(w),
                                                  sigma0_sq=0.0,
                                                  center=(float(x), float(y)))
            return ref
    return None


# ---------------------------------------------------------------------------
# the runner
# ---------------------------------------------------------------------------


def resolve_output_dir(cfg: dict, output_dir, kind: str) -> Path:
    import os
    if output_dir is not None:
        return Path(output_dir)
    if _get(cfg, "output_dir") is not None:
        return Path(_get(cfg, "output_dir"))
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{kind}-{runio.config_hash(cfg)}"


def run_scenario(cfg: dict, output_dir=None, seed: int | None = None,
                 quiet: bool = False, jobs: int = 1) -> tuple[int, Path, list[str]]:
    """Execute one scenario; returns (exit_status, run_dir, summary lines).

    exit_status is 0 when all enabled checks passed, 1 otherwise."""
    kind = _need(cfg, "kind", str, lambda v: v in SCENARIO_KINDS,
                 f"must be one of {', '.join(SCENARIO_KINDS)}")
    if seed is None:
        seed = _opt(cfg, "seed", int, 0)
    run_dir = resolve_output_dir(cfg, output_dir, kind)
    t0 = _time.perf_counter()
    runner = {
        "spectral-run": _run_spectral,
        "particle-run": _run_particle,
        "verify-weak": _run_verify_weak,
        "verify-uniqueness": _run_verify_uniqueness,
        "flow-check": _run_flow_check,
        "markov-probe": _run_markov,
        "kernel-bench": _run_kernel_bench,
        "convergence-study": _run_convergence,
    }[kind]
    result = runner(cfg, seed, jobs)
    wall = _time.perf_counter() - t0

    reports = result.get("reports", {})
    runio.save_run(run_dir, kind, {"scenario": cfg, "seed": seed},
                   traj=result.get("traj"), ptraj=result.get("ptraj"),
                   reports=reports, tables=result.get("tables"),
                   warnings=result.get("warnings"),
                   wall_time_s=wall, seed=seed)
    runio.write_json(run_dir / "config.json",
                     {"schema_version": runio.SCHEMA_VERSION,
                      "scenario": cfg, "seed": seed})
    _append_extra(run_dir, "config.json")

    lines = []
    ok = True
    for name, rep in reports.items():
        ok = ok and rep["pass"]
        lines.append(f"[{'PASS' if rep['pass'] else 'FAIL'}] {name}: "
                     + _summary_of(rep))
    lines.append(f"artifacts: {run_dir}")
    if not quiet:
        for ln in lines:
            print(ln)
    return (0 if ok else 1), run_dir, lines


def _append_extra(run_dir: Path, rel: str) -> None:
    mpath = Path(run_dir) / "manifest.json"
    manifest = runio.read_json(mpath)
    if rel not in manifest["extra_files"]:
        manifest["extra_files"].append(rel)
        runio.write_json(mpath, manifest)


def _summary_of(rep: dict) -> str:
    vals = rep.get("values", {})
    parts = []
    for k in list(vals)[:3]:
        text = f"{vals[k]}"
        if len(text) > 64:
            text = text[:61] + "..."
        parts.append(f"{k}={text}")
    return ", ".join(parts)


# ---------------------------------------------------------------------------
# kind runners
# ---------------------------------------------------------------------------


def _run_spectral(cfg: dict, seed: int, jobs: int) -> dict:
    grid = parse_grid(cfg)
    scfg = parse_solver(cfg)
    ikind, init = build_initial(cfg, grid, scfg.nu)
    if ikind == "atoms":
        traj = solve_from_measure(grid, init, scfg,
                                  sigma0_sq=_opt(cfg, "initial.sigma0_sq",
                                                 float, None,
                                                 lambda v: v > 0, "must be > 0"))
    else:
        traj = solve(init, scfg)

    mass0 = traj.diagnostics[0]["mass"]
    drift = max(abs(d["mass"] - mass0) for d in traj.diagnostics)
    tol_mass = _opt(cfg, "checks.mass_drift", float, 1e-10)
    reports = {
        "conservation": runio.make_report(
            "conservation", {"kind": "spectral-run"},
            {"mass_drift": drift, "min_value": min(d["min"] for d in traj.diagnostics)},
            {"mass_drift": tol_mass}, drift <= tol_mass),
    }

    ref = _exact_reference(cfg, scfg.nu)
    if ref is not None:
        tol = _opt(cfg, "checks.final_l1_vs_exact", float, 1e-3)
        exact = ref(traj.times[-1], grid)
        if ikind == "atoms":
            off = traj.meta["mollified_measure"]["time_offset"]
            exact = lamb_oseen.vorticity_field(
                grid, float(traj.times[-1]) + off, scfg.nu)
        err = float(np.sum(np.abs(traj.fields[-1].values - exact.values))
                    * grid.cell_area)
        reports["regression_l1"] = runio.make_report(
            "regression_l1", {"t": float(traj.times[-1])},
            {"l1_error": err}, {"l1_error": tol}, err <= tol)

    window = _get(cfg, "verify.decay_window")
    if window is not None:
        if (not isinstance(window, list) or len(window) != 2
                or not all(isinstance(v, (int, float))
                           and not isinstance(v, bool) for v in window)
                or not float(window[0]) < float(window[1])):
            raise ConfigError("verify.decay_window",
                              "expected [t_lo, t_hi] with t_lo < t_hi")
        reports["decay"] = _decay_report(cfg, traj, float(window[0]),
                                         float(window[1]))
    return {"traj": traj, "reports": reports,
            "warnings": traj.meta.get("warnings", [])}


def _decay_report(cfg: dict, traj, a: float, b: float) -> dict:
    """Power-law fits of the norm history over [a, b], plus the raw series
    so downstream figure tools never recompute anything."""
    tol = _opt(cfg, "checks.decay_slope_tol", float, 0.05,
               lambda v: v > 0, "must be > 0")
    fits = {
        "vorticity_p2": (decay_fit(traj, 2, (a, b)), -0.5),
        "vorticity_p4": (decay_fit(traj, 4, (a, b)), -0.75),
        "velocity_p4": (decay_fit(traj, 4, (a, b), quantity="velocity"),
                        -0.25),
    }
    off = fits["vorticity_p2"][0].time_offset
    sel = [i for i, t in enumerate(traj.times) if a - 1e-12 <= t <= b + 1e-12]
    values = {
        "window": [a, b],
        "time_offset": off,
        "fits": {k: {"slope": f.slope, "intercept": f.intercept,
                     "r_squared": f.r_squared, "ideal": ideal}
                 for k, (f, ideal) in fits.items()},
        "times": [float(traj.times[i]) + off for i in sel],
        "series": {
            "vorticity_p2": [lp_norm(traj.fields[i], 2) for i in sel],
            "vorticity_p4": [lp_norm(traj.fields[i], 4) for i in sel],
            "velocity_p4": [lp_norm(biot_savart_field(traj.fields[i]), 4)
                            for i in sel],
        },
    }
    ok = all(abs(f.slope - ideal) <= tol for f, ideal in fits.values())
    return runio.make_report("decay", {"window": [a, b]}, values,
                             {"slope_tol": tol}, ok)


def _run_particle(cfg: dict, seed: int, jobs: int) -> dict:
    pcfg = parse_particles(cfg, seed)
    grid_for_init = pcfg.kde_grid
    ikind_init = _get(cfg, "initial.type")
    if ikind_init is None:
        raise ConfigError("initial.type", "required field is missing")
    if ikind_init in ("lamb_oseen", "gaussian", "field"):
        if grid_for_init is None:
            raise ConfigError("particles.kde_grid",
                              "density initial data needs a sampling grid")
        _, init = build_initial(cfg, grid_for_init, pcfg.nu)
    else:
        _, init = build_initial(cfg, Grid2D(1.0, 16), pcfg.nu)  # grid unused

    s0 = 0.0
    if ikind_init == "atoms":
        s0 = _opt(cfg, "initial.sigma0_sq", float, 0.0)
        if s0 < 0:
            raise ConfigError("initial.sigma0_sq", "must be nonnegative")

    ref = _exact_reference(cfg, pcfg.nu)
    reference = None
    if ref is not None and pcfg.kde_grid is not None:
        g = pcfg.kde_grid
        off = s0 / (2.0 * pcfg.nu) if (s0 > 0 and pcfg.nu > 0) else 0.0
        reference = lambda t: ref(t + off, g)
    ptraj = simulate(init, pcfg, reference=reference, sigma0_sq=s0)

    reports = {}
    if ptraj.kde_fields is not None:
        m = [d["kde_mass"] for d in ptraj.diagnostics if "kde_mass" in d]
        worst = max(abs(v - 1.0) for v in m) if m else 0.0
        reports["kde_mass"] = runio.make_report(
            "kde_mass", {}, {"max_abs_mass_defect": worst},
            {"max_abs_mass_defect": 1e-8}, worst <= 1e-8)
    e_series = [d["e_l1"] for d in ptraj.diagnostics if "e_l1" in d]
    if e_series:
        tol = _opt(cfg, "checks.representation_l1", float, 0.05)
        reports["representation"] = runio.make_report(
            "representation", {"n_particles": pcfg.n_particles},
            {"final_e_l1": e_series[-1], "series": e_series},
            {"final_e_l1": tol}, e_series[-1] <= tol)
    return {"ptraj": ptraj, "reports": reports}


def _load_or_solve(cfg: dict, seed: int):
    src = _get(cfg, "input_run")
    if src is not None:
        p = Path(src)
        if not (p / "manifest.json").exists():
            raise MissingInputError(f"input run directory not found: {p}")
        rec = runio.RunRecord(p)
        return rec.trajectory(), rec.grid()
    grid = parse_grid(cfg)
    scfg = parse_solver(cfg)
    ikind, init = build_initial(cfg, grid, scfg.nu)
    if ikind == "atoms":
        return solve_from_measure(grid, init, scfg), grid
    return solve(init, scfg), grid


def _run_verify_weak(cfg: dict, seed: int, jobs: int) -> dict:
    traj, grid = _load_or_solve(cfg, seed)
    u0 = traj.fields[0]
    bank = default_test_bank(grid.L, float(traj.times[-1]))
    rep = weak_residual(traj, u0, bank,
                        min_time_samples=_opt(cfg, "verify.min_time_samples",
                                              int, 20))
    tol = _opt(cfg, "checks.max_normalized_residual", float, 1e-3)
    reports = {"weak_residual": runio.make_report(
        "weak_residual", {"bank": [e["label"] for e in rep.entries]},
        {"max_normalized": rep.max_normalized,
         "normalized": [e["normalized"] for e in rep.entries]},
        {"max_normalized": tol}, rep.max_normalized <= tol)}
    return {"traj": traj, "reports": reports}


def _run_verify_uniqueness(cfg: dict, seed: int, jobs: int) -> dict:
    grid = parse_grid(cfg)
    scfg = parse_solver(cfg)
    n2 = _opt(cfg, "verify.fine_n", int, grid.n * 2, _power_of_two,
              "must be a power of two >= 16")
    eps_list = _opt(cfg, "verify.eps", list, [0.1, 1.0, 10.0])
    ikind, init = build_initial(cfg, grid, scfg.nu)
    fine_grid = make_grid(grid.L, n2)
    ikind2, init2 = build_initial(cfg, fine_grid, scfg.nu)
    if ikind == "atoms":
        t1 = solve_from_measure(grid, init, scfg)
        t2 = solve_from_measure(fine_grid, init2, scfg)
    else:
        t1 = solve(init, scfg)
        t2 = solve(init2, scfg)
    values, passes = {}, []
    tol = _opt(cfg, "checks.decomposition_rel", float, 1e-10)
    for eps in eps_list:
        rep = uniqueness_functional(t1, t2, float(eps))
        values[f"eps={eps}"] = {
            "max_h": float(np.max(rep.h)),
            "decomposition_rel_err": rep.decomposition_rel_err,
            "c_fit": rep.c_fit,
            "times": [float(t) for t in rep.times],
            "h": [float(v) for v in rep.h],
        }
        passes.append(rep.decomposition_rel_err <= tol)
    reports = {"uniqueness": runio.make_report(
        "uniqueness", {"eps": eps_list, "n": grid.n, "fine_n": n2},
        values, {"decomposition_rel": tol}, all(passes))}
    return {"traj": t1, "reports": reports}


def _run_flow_check(cfg: dict, seed: int, jobs: int) -> dict:
    grid = parse_grid(cfg)
    scfg = parse_solver(cfg)
    ikind, init = build_initial(cfg, grid, scfg.nu)
    if ikind == "atoms":
        raise ConfigError("initial.type",
                          "flow-check needs a density initial datum")
    s = _opt(cfg, "verify.s", float, 0.0)
    t = _opt(cfg, "verify.t", float, scfg.t_end)
    r = _opt(cfg, "verify.r", float, 0.5 * (s + t))
    res = flow_property_check(init, s, r, t, scfg)
    tol = _opt(cfg, "checks.discrepancy", float, 1e-9)
    reports = {"flow_property": runio.make_report(
        "flow_property", {"s": s, "r": r, "t": t},
        {"discrepancy": res["l1_discrepancy"]},
        {"discrepancy": tol}, res["l1_discrepancy"] <= tol)}
    return {"traj": res["direct"], "reports": reports}


def _run_markov(cfg: dict, seed: int, jobs: int) -> dict:
    pcfg = parse_particles(cfg, seed)
    if pcfg.kde_grid is None:
        raise ConfigError("particles.kde_grid",
                          "markov-probe needs a grid for the reference solve")
    ikind_init = _get(cfg, "initial.type")
    if ikind_init in ("lamb_oseen", "gaussian", "field"):
        _, init = build_initial(cfg, pcfg.kde_grid, pcfg.nu)
    elif ikind_init == "atoms":
        _, init = build_initial(cfg, Grid2D(1.0, 16), pcfg.nu)
    else:
        raise ConfigError("initial.type", "required field is missing")
    s = _opt(cfg, "verify.s", float, 0.0)
    r = _need(cfg, "verify.r", float, lambda v: v >= s, "must be >= s")
    t = _need(cfg, "verify.t", float, lambda v: v > r, "must be > r")
    bin_radius = _opt(cfg, "verify.bin_radius", float, None,
                      lambda v: v > 0, "must be > 0")
    probe = markov_probe(init, s, r, t, pcfg, bin_radius,
                         min_count=_opt(cfg, "verify.min_count", int, 500))
    # drift-free calibration with the same bins measures the statistical floor
    calib = markov_probe(init, s, r, t, replace(pcfg, drift_enabled=False),
                         probe.params["bin_radius"],
                         bin_centers=[tuple(b["center"]) for b in probe.bins],
                         min_count=probe.params["min_count"],
                         window_halfwidth=probe.params["window_halfwidth"])
    ratio_tol = _opt(cfg, "checks.markov_ratio", float, 3.0)
    pairs = []
    for b, c in zip(probe.bins, calib.bins):
        if math.isnan(b["l1_distance"]) or math.isnan(c["l1_distance"]):
            continue
        pairs.append({"center": b["center"], "distance": b["l1_distance"],
                      "floor": c["l1_distance"],
                      "ratio": b["l1_distance"] / max(c["l1_distance"], 1e-300)})
    ok = bool(pairs) and all(p["ratio"] <= ratio_tol for p in pairs)
    reports = {"markov": runio.make_report(
        "markov", probe.params,
        {"bins": pairs, "warnings": probe.warnings + calib.warnings},
        {"ratio": ratio_tol}, ok)}
    return {"ptraj": probe.ptraj, "reports": reports}


def _parse_n_list(raw) -> list[int]:
    if isinstance(raw, str):
        parts = [p for p in raw.split(",") if p.strip()]
    elif isinstance(raw, list):
        parts = raw
    else:
        raise ConfigError("bench.n", "expected a list or comma-separated string")
    out = []
    for p in parts:
        try:
            out.append(int(float(p)))
        except (TypeError, ValueError):
            raise ConfigError("bench.n", f"bad count {p!r}")
    if not out or any(v < 2 for v in out):
        raise ConfigError("bench.n", "counts must be >= 2")
    return out


def _run_kernel_bench(cfg: dict, seed: int, jobs: int) -> dict:
    ns = _parse_n_list(_get(cfg, "bench.n") or [10_000, 100_000])
    delta_c = _opt(cfg, "bench.c_delta", float, 2.0)
    direct_cap = _opt(cfg, "bench.direct_cap", int, 200_000)
    rng = np.random.default_rng(seed)
    rows = []
    values = {}
    worst = 0.0
    for n in ns:
        pts = rng.standard_normal((n, 2))
        w = np.full(n, 1.0 / n)
        delta = delta_c * float(np.ptp(pts)) * n ** -0.5
        if n > direct_cap:
            rows.append([n, "direct", "", ""])
            vd = None
        else:
            t0 = _time.perf_counter()
            vd = velocity_at_points((pts, w), pts, delta, method="direct")
            ms_d = 1e3 * (_time.perf_counter() - t0)
            rows.append([n, "direct", f"{ms_d:.3f}", "0"])
        t0 = _time.perf_counter()
        vt = velocity_at_points((pts, w), pts, delta, method="treecode")
        ms_t = 1e3 * (_time.perf_counter() - t0)
        if vd is not None:
            scale = float(np.max(np.hypot(vd[:, 0], vd[:, 1])))
            err = float(np.max(np.hypot(*(vt - vd).T))) / max(scale, 1e-300)
            worst = max(worst, err)
            values[f"N={n}"] = {"speedup": ms_d / ms_t, "max_rel_err": err}
            rows.append([n, "treecode", f"{ms_t:.3f}", f"{err:.3e}"])
        else:
            rows.append([n, "treecode", f"{ms_t:.3f}", ""])
    tol = _opt(cfg, "checks.bench_max_rel_err", float, 1e-3)
    reports = {"kernel_bench": runio.make_report(
        "kernel_bench", {"n": ns}, values, {"max_rel_err": tol}, worst <= tol)}
    return {"reports": reports,
            "tables": {"bench/kernel_bench.csv": (runio.BENCH_HEADER, rows)}}


def _run_convergence(cfg: dict, seed: int, jobs: int) -> dict:
    levels = _opt(cfg, "study.levels", int, 3, lambda v: v >= 3,
                  "need at least 3 refinement levels")
    base_kind = _need(cfg, "study.base_kind", str,
                      lambda v: v in ("spectral-run", "particle-run"),
                      "must be 'spectral-run' or 'particle-run'")
    if base_kind == "spectral-run":
        runner = _spectral_level
    else:
        runner = _particle_level

    def one(level):
        return runner(cfg, seed, level)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, range(levels)))
    else:
        results = [one(k) for k in range(levels)]

    rows = []
    warnings = []
    prev = None
    for level, (h, err) in enumerate(results):
        order = ""
        if prev is not None:
            if err >= prev[1]:
                warnings.append(
                    f"non-monotone error at level {level}: {err} >= {prev[1]}")
            if err > 0 and prev[1] > 0 and h != prev[0]:
                order = f"{math.log(prev[1] / err) / math.log(prev[0] / h):.4f}"
        rows.append([level, f"{h:.6e}", f"{err:.6e}", order])
        prev = (h, err)
    orders = [float(r[3]) for r in rows if r[3]]
    decreasing = all(results[i + 1][1] < results[i][1] for i in range(len(results) - 1))
    min_order = _opt(cfg, "checks.min_order", float, None)
    if min_order is not None:
        ok = bool(orders) and min(orders) >= min_order
        thr = {"min_order": min_order}
    else:
        ok = decreasing
        thr = {"decreasing": True}
    reports = {"convergence": runio.make_report(
        "convergence", {"base_kind": base_kind, "levels": levels},
        {"orders": orders, "errors": [r[2] for r in rows],
         "decreasing": decreasing}, thr, ok)}
    return {"reports": reports, "warnings": warnings,
            "tables": {"study/convergence.csv": (runio.CONVERGENCE_HEADER, rows)}}


def _spectral_level(cfg: dict, seed: int, level: int) -> tuple[float, float]:
    """Grid-refinement level: double n, measure L2 error against the closed
    form at t_end.  (Diffusion is integrated exactly and the closed-form
    references are radial, so the spectral truncation error dominates;
    refining dt instead would leave the error unchanged.)"""
    base = parse_grid(cfg)
    scfg = parse_solver(cfg)
    ref = _exact_reference(cfg, scfg.nu)
    if ref is None:
        raise ConfigError("initial.type",
                          "spectral study needs closed-form initial data")
    grid = make_grid(base.L, base.n * 2**level)
    ikind, init = build_initial(cfg, grid, scfg.nu)
    if ikind != "field":
        raise ConfigError("initial.type",
                          "spectral study refines a density initial datum")
    traj = solve(init, replace(scfg, snapshot_times=(scfg.t_end,)))
    exact = ref(scfg.t_end, grid)
    diff = ScalarField(grid, traj.fields[-1].values - exact.values)
    return grid.dx, lp_norm(diff, 2)


def _particle_level(cfg: dict, seed: int, level: int) -> tuple[float, float]:
    """N-refinement level: quadruple the particle count, measure the final
    KDE-vs-closed-form L1 discrepancy."""
    pcfg = parse_particles(cfg, seed)
    if pcfg.kde_grid is None:
        raise ConfigError("particles.kde_grid", "particle study needs a KDE grid")
    ref = _exact_reference(cfg, pcfg.nu)
    if ref is None:
        raise ConfigError("initial.type",
                          "particle study needs closed-form initial data")
    n = pcfg.n_particles * 4**level
    pcfg = replace(pcfg, n_particles=n, snapshot_times=(pcfg.t_end,))
    ikind_init = _get(cfg, "initial.type")
    s0 = 0.0
    if ikind_init == "atoms":
        _, init = build_initial(cfg, Grid2D(1.0, 16), pcfg.nu)
        s0 = _opt(cfg, "initial.sigma0_sq", float, 0.0,
                  lambda v: v >= 0, "must be nonnegative")
    else:
        _, init = build_initial(cfg, pcfg.kde_grid, pcfg.nu)
    g = pcfg.kde_grid
    off = s0 / (2.0 * pcfg.nu) if (s0 > 0 and pcfg.nu > 0) else 0.0
    ptraj = simulate(init, pcfg, reference=lambda t: ref(t + off, g),
                     sigma0_sq=s0)
    err = [d["e_l1"] for d in ptraj.diagnostics if "e_l1" in d][-1]
    return n ** -0.5, float(err)
