"""On-disk run layout: manifests, field/particle snapshots, reports, tables.

A *run directory* is the unit of exchange between the solver, the
verification layer, and external consumers (the report renderer reads these
artifacts and nothing else):

``manifest.json``
    ``{schema_version, kind, created, tool_version, versions, wall_time_s,
    config, config_hash, seed, grid, snapshots, diagnostics, reports,
    extra_files, warnings}``.  ``snapshots`` is a list of
    ``{index, time, field, sidecar, particles?}`` with paths relative to the
    run directory; ``diagnostics`` is a column-oriented table
    ``{columns, rows}``.  Reruns with an identical config produce identical
    manifests apart from ``created`` and ``wall_time_s``.

``fields/snap_XXXX.npy`` + ``fields/snap_XXXX.json``
    The field array (row-major float64 NPY) and its sidecar
    ``{schema_version, L, n, time, name, config_hash, seed}``.

``particles/part_XXXX.bin``
    Little-endian: magic ``VXPART01`` (8 bytes), ``N`` (u64), ``time``
    (f64), ``seed`` (u64), config hash (16 ASCII hex bytes), then ``N``
    packed ``(x, y)`` float64 pairs.

``reports/<check>.json``
    ``{schema_version, check, inputs, inputs_hash, values, thresholds,
    pass}``.

CSV tables use the literal headers ``N,method,wall_ms,max_rel_err_vs_direct``
(benchmarks) and ``level,h,error,order`` (refinement studies).

Every artifact file in a run directory is referenced by exactly one
manifest; :func:`check_outputs` verifies this and reports both orphans and
missing files.  All writes go through a temp-file-then-rename so readers
never observe partial artifacts.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import struct
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .fields import FieldError, Grid2D, ScalarField

SCHEMA_VERSION = 1
_PARTICLE_MAGIC = b"VXPART01"
_PARTICLE_HEADER = struct.Struct("<8sQdQ16s")


class RunIOError(RuntimeError):
    """Malformed, missing, or unsupported on-disk artifacts."""


# ---------------------------------------------------------------------------
# JSON canonicalization and hashing
# ---------------------------------------------------------------------------


def to_jsonable(obj):
    """Recursively convert configs/reports (dataclasses, numpy, paths,
    tuples) into plain JSON-serializable data."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return to_jsonable(float(obj))
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Grid2D):
        return {"L": obj.L, "n": obj.n}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj, key=repr) if isinstance(obj, (set, frozenset)) else obj
        return [to_jsonable(v) for v in items]
    if isinstance(obj, Path):
        return str(obj)
    if callable(obj):
        return f"<callable {getattr(obj, '__name__', 'anonymous')}>"
    raise RunIOError(f"cannot serialize {type(obj).__name__} to JSON")


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    """Stable 16-hex-digit digest of a configuration (canonical JSON)."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_json(path, obj, indent: int = 2) -> None:
    payload = json.dumps(to_jsonable(obj), sort_keys=True, indent=indent)
    _atomic_write_bytes(Path(path), (payload + "\n").encode())


def read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise RunIOError(f"missing artifact: {path}")
    except json.JSONDecodeError as e:
        raise RunIOError(f"corrupt JSON in {path}: {e}")


def _require_schema(meta: dict, path) -> None:
    v = meta.get("schema_version")
    if v != SCHEMA_VERSION:
        raise RunIOError(
            f"{path}: unsupported schema_version {v!r} (this build reads "
            f"{SCHEMA_VERSION})")


# ---------------------------------------------------------------------------
# field snapshots
# ---------------------------------------------------------------------------


def save_field(stem, f: ScalarField, time: float, name: str,
               cfg_hash: str = "", seed: int | None = None
               ) -> tuple[Path, Path]:
    """Write ``<stem>.npy`` (the array) + ``<stem>.json`` (the sidecar);
    returns both paths."""
    stem = Path(stem)
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(f.values, dtype=np.float64),
            allow_pickle=False)
    npy = stem.with_suffix(".npy")
    _atomic_write_bytes(npy, buf.getvalue())
    sidecar = stem.with_suffix(".json")
    write_json(sidecar, {
        "schema_version": SCHEMA_VERSION,
        "L": f.grid.L, "n": f.grid.n,
        "time": float(time), "name": name,
        "config_hash": cfg_hash, "seed": seed,
    })
    return npy, sidecar


def load_field(stem) -> tuple[ScalarField, dict]:
    """Read a field snapshot written by :func:`save_field`."""
    stem = Path(stem)
    meta = read_json(stem.with_suffix(".json"))
    _require_schema(meta, stem.with_suffix(".json"))
    try:
        vals = np.load(stem.with_suffix(".npy"), allow_pickle=False)
    except FileNotFoundError:
        raise RunIOError(f"missing artifact: {stem.with_suffix('.npy')}")
    if vals.shape != (meta["n"], meta["n"]):
        raise RunIOError(
            f"{stem}: array shape {vals.shape} does not match sidecar n={meta['n']}")
    grid = Grid2D(float(meta["L"]), int(meta["n"]))
    return ScalarField(grid, np.ascontiguousarray(vals, dtype=np.float64)), meta


# ---------------------------------------------------------------------------
# particle snapshots
# ---------------------------------------------------------------------------


def save_particles(path, positions: np.ndarray, time: float, seed: int,
                   cfg_hash: str = "") -> Path:
    path = Path(path)
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise RunIOError(f"positions must be (N, 2), got {pos.shape}")
    head = _PARTICLE_HEADER.pack(
        _PARTICLE_MAGIC, pos.shape[0], float(time), int(seed) & (2**64 - 1),
        cfg_hash.ljust(16)[:16].encode("ascii"))
    _atomic_write_bytes(path, head + pos.tobytes(order="C"))
    return path


def load_particles(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise RunIOError(f"missing artifact: {path}")
    if len(blob) < _PARTICLE_HEADER.size:
        raise RunIOError(f"{path}: truncated particle file")
    magic, n, time, seed, h = _PARTICLE_HEADER.unpack_from(blob)
    if magic != _PARTICLE_MAGIC:
        raise RunIOError(f"{path}: bad magic {magic!r}")
    want = _PARTICLE_HEADER.size + 16 * n
    if len(blob) != want:
        raise RunIOError(f"{path}: expected {want} bytes for N={n}, got {len(blob)}")
    pos = np.frombuffer(blob, dtype="<f8", offset=_PARTICLE_HEADER.size).reshape(n, 2)
    meta = {"n_particles": int(n), "time": float(time), "seed": int(seed),
            "config_hash": h.decode("ascii").strip()}
    return np.array(pos), meta


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

_DIAG_ORDER = ["time", "mass", "min", "max", "l1", "l43", "l2", "l4", "linf",
               "max_speed", "dt_last", "boundary_fraction"]


def _diag_table(diags: list[dict]) -> dict:
    if not diags:
        return {"columns": [], "rows": []}
    cols = [c for c in _DIAG_ORDER if c in diags[0]]
    cols += sorted(k for k in diags[0] if k not in cols)
    rows = [[to_jsonable(d.get(c)) for c in cols] for d in diags]
    return {"columns": cols, "rows": rows}


def _versions() -> dict:
    import scipy
    from . import __version__
    return {"python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "vortexlab": __version__}


def save_run(run_dir, kind: str, config, traj=None, ptraj=None,
             reports: dict | None = None, tables: dict | None = None,
             extra_files: list | None = None, warnings: list | None = None,
             wall_time_s: float = 0.0, seed: int | None = None) -> Path:
    """Write a complete run directory and its manifest.

    ``traj`` (PDE trajectory) and/or ``ptraj`` (particle trajectory) supply
    snapshots; when both are given their snapshot clocks must line up (the
    particle layout indexes KDE fields and particle files side by side).
    ``reports`` maps check names to report dicts (see :func:`make_report`);
    ``tables`` maps relative CSV paths to (header, rows).
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_json = to_jsonable(config)
    h = config_hash(cfg_json)
    manifest: dict = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "created": datetime.now(timezone.utc).isoformat(),
        "tool_version": _versions()["vortexlab"],
        "versions": _versions(),
        "wall_time_s": float(wall_time_s),
        "config": cfg_json,
        "config_hash": h,
        "seed": seed,
        "grid": None,
        "snapshots": [],
        "diagnostics": {"columns": [], "rows": []},
        "reports": [],
        "extra_files": [],
        "warnings": list(warnings or []),
    }

    grid = None
    if traj is not None:
        grid = traj.grid
    elif ptraj is not None and ptraj.config.kde_grid is not None:
        grid = ptraj.config.kde_grid
    if grid is not None:
        manifest["grid"] = {"L": grid.L, "n": grid.n}

    times = None
    if traj is not None:
        times = [float(t) for t in traj.times]
    elif ptraj is not None:
        times = [float(t) for t in ptraj.times]

    if times is not None:
        for i, t in enumerate(times):
            entry: dict = {"index": i, "time": t}
            if traj is not None:
                npy, sidecar = save_field(
                    run_dir / "fields" / f"snap_{i:04d}", traj.fields[i], t,
                    name=f"{kind}/u[{i}]", cfg_hash=h, seed=seed)
                entry["field"] = str(npy.relative_to(run_dir))
                entry["sidecar"] = str(sidecar.relative_to(run_dir))
            elif ptraj is not None and ptraj.kde_fields is not None:
                npy, sidecar = save_field(
                    run_dir / "fields" / f"snap_{i:04d}", ptraj.kde_fields[i],
                    t, name=f"{kind}/kde[{i}]", cfg_hash=h, seed=seed)
                entry["field"] = str(npy.relative_to(run_dir))
                entry["sidecar"] = str(sidecar.relative_to(run_dir))
            if ptraj is not None:
                try:
                    ens = ptraj.ensemble_at(t)
                except FieldError:
                    ens = None  # no particle state on this clock tick
                if ens is not None:
                    p = save_particles(
                        run_dir / "particles" / f"part_{i:04d}.bin",
                        ens.positions, t, ens.seed, cfg_hash=h)
                    entry["particles"] = str(p.relative_to(run_dir))
            manifest["snapshots"].append(entry)

    diags = traj.diagnostics if traj is not None else (
        ptraj.diagnostics if ptraj is not None else [])
    manifest["diagnostics"] = _diag_table(diags)

    for name, rep in (reports or {}).items():
        rel = f"reports/{name}.json"
        write_json(run_dir / rel, rep)
        manifest["reports"].append(rel)

    for rel, (header, rows) in (tables or {}).items():
        write_csv(run_dir / rel, header, rows)
        manifest["extra_files"].append(rel)

    for rel in extra_files or []:
        manifest["extra_files"].append(str(rel))

    write_json(run_dir / "manifest.json", manifest)
    return run_dir / "manifest.json"


class RunRecord:
    """Lazy reader for a run directory; refuses unknown schema versions and
    never mutates the inputs."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.manifest_path = self.run_dir / "manifest.json"
        self.manifest = read_json(self.manifest_path)
        _require_schema(self.manifest, self.manifest_path)

    @property
    def kind(self) -> str:
        return self.manifest["kind"]

    @property
    def times(self) -> list:
        return [s["time"] for s in self.manifest["snapshots"]]

    def grid(self) -> Grid2D:
        g = self.manifest.get("grid")
        if not g:
            raise RunIOError(f"{self.run_dir}: run has no grid")
        return Grid2D(float(g["L"]), int(g["n"]))

    def diagnostics(self) -> list[dict]:
        tab = self.manifest.get("diagnostics") or {"columns": [], "rows": []}
        return [dict(zip(tab["columns"], row)) for row in tab["rows"]]

    def field(self, i: int) -> tuple[ScalarField, dict]:
        snap = self.manifest["snapshots"][i]
        if "field" not in snap:
            raise RunIOError(f"snapshot {i} has no field file")
        return load_field((self.run_dir / snap["field"]).with_suffix(""))

    def particles(self, i: int) -> tuple[np.ndarray, dict]:
        snap = self.manifest["snapshots"][i]
        if "particles" not in snap:
            raise RunIOError(f"snapshot {i} has no particle file")
        return load_particles(self.run_dir / snap["particles"])

    def reports(self) -> dict:
        out = {}
        for rel in self.manifest.get("reports", []):
            rep = read_json(self.run_dir / rel)
            _require_schema(rep, rel)
            out[rep["check"]] = rep
        return out

    def trajectory(self):
        """Reconstruct a solver-independent trajectory view (times, fields,
        diagnostics) for the verification layer."""
        from .solver import SolverConfig, Trajectory
        times = np.asarray(self.times, dtype=np.float64)
        fields = [self.field(i)[0] for i in range(times.size)]
        if not fields:
            raise RunIOError(f"{self.run_dir}: no field snapshots")
        cfg_dict = self.manifest.get("config") or {}
        nu = float(_dig(cfg_dict, "nu", default=float("nan")))
        t_end = float(times[-1]) if times[-1] > 0 else 1.0
        cfg = SolverConfig(nu=nu if math.isfinite(nu) and nu > 0 else 1.0,
                           t_end=t_end,
                           snapshot_times=tuple(t for t in map(float, times)
                                                if 0 < t <= t_end))
        meta = {"run_dir": str(self.run_dir), "kind": self.kind,
                "config": cfg_dict}
        moll = _dig(cfg_dict, "mollified_measure", default=None)
        if moll:
            meta["mollified_measure"] = moll
        return Trajectory(grid=fields[0].grid, times=times, fields=fields,
                          diagnostics=self.diagnostics(), config=cfg, meta=meta)


def _dig(d: dict, key: str, default=None):
    """Find ``key`` anywhere in a nested dict (first match, depth-first)."""
    if not isinstance(d, dict):
        return default
    if key in d:
        return d[key]
    for v in d.values():
        if isinstance(v, dict):
            found = _dig(v, key, default=_MISSING)
            if found is not _MISSING:
                return found
    return default


_MISSING = object()


def check_outputs(run_dir) -> dict:
    """Orphan/missing audit: every file in the run directory must be
    referenced by the manifest (and vice versa)."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise RunIOError(f"no manifest.json in {run_dir}")
    manifest = read_json(manifest_path)
    _require_schema(manifest, manifest_path)
    referenced = {"manifest.json"}
    for snap in manifest.get("snapshots", []):
        for key in ("field", "sidecar", "particles"):
            if key in snap:
                referenced.add(snap[key])
    referenced.update(manifest.get("reports", []))
    referenced.update(manifest.get("extra_files", []))
    present = {str(p.relative_to(run_dir)) for p in run_dir.rglob("*")
               if p.is_file()}
    return {
        "orphans": sorted(present - referenced),
        "missing": sorted(referenced - present),
        "n_referenced": len(referenced),
        "n_present": len(present),
    }


# ---------------------------------------------------------------------------
# reports and CSV tables
# ---------------------------------------------------------------------------


def make_report(check: str, inputs: dict, values: dict, thresholds: dict,
                passed: bool) -> dict:
    """The stable report schema: ``{schema_version, check, inputs,
    inputs_hash, values, thresholds, pass}``."""
    inputs = to_jsonable(inputs)
    return {
        "schema_version": SCHEMA_VERSION,
        "check": check,
        "inputs": inputs,
        "inputs_hash": config_hash(inputs),
        "values": to_jsonable(values),
        "thresholds": to_jsonable(thresholds),
        "pass": bool(passed),
    }


BENCH_HEADER = ["N", "method", "wall_ms", "max_rel_err_vs_direct"]
CONVERGENCE_HEADER = ["level", "h", "error", "order"]


def write_csv(path, header: list[str], rows: list) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    _atomic_write_bytes(path, buf.getvalue().encode())
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise RunIOError(f"missing artifact: {path}")
    if not rows:
        raise RunIOError(f"{path}: empty CSV")
    return rows[0], rows[1:]
