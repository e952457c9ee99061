/**
 * Read-only access to a run directory: the manifest, check reports, the
 * diagnostics table, CSV tables, field snapshots (NPY) and particle
 * snapshots (packed binary).  Loading is lazy and cached; nothing here ever
 * writes into the run directory.
 *
 * Artifacts carrying a schema_version other than the supported one are
 * refused outright -- stale readers must fail, not misread.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { NpyArray, parseNpy } from "./npy.js";

export const SCHEMA_VERSION = 1;

export class ArtifactError extends Error {}

export interface Snapshot {
  index: number;
  time: number;
  field?: string;
  sidecar?: string;
  particles?: string;
}

export interface Manifest {
  schema_version: number;
  kind: string;
  created: string;
  tool_version: string;
  wall_time_s: number;
  config: unknown;
  config_hash: string;
  seed: number | null;
  grid: { L: number; n: number } | null;
  snapshots: Snapshot[];
  diagnostics: { columns: string[]; rows: unknown[][] };
  reports: string[];
  extra_files: string[];
  warnings: string[];
}

export interface Report {
  schema_version: number;
  check: string;
  inputs: Record<string, unknown>;
  inputs_hash: string;
  values: Record<string, unknown>;
  thresholds: Record<string, unknown>;
  pass: boolean;
}

export interface ParticleSnapshot {
  nParticles: number;
  time: number;
  seed: number;
  configHash: string;
  /** Interleaved (x0, y0, x1, y1, ...) positions. */
  positions: Float64Array;
}

/** Numbers survive JSON as-is except non-finite ones, which the writer
 *  stores as the strings "nan" / "inf" / "-inf". */
export function asNumber(v: unknown): number {
  if (typeof v === "number") return v;
  if (v === "nan") return NaN;
  if (v === "inf") return Infinity;
  if (v === "-inf") return -Infinity;
  if (typeof v === "string" && v !== "" && Number.isFinite(Number(v))) {
    return Number(v);
  }
  throw new ArtifactError(`expected a number, got ${JSON.stringify(v)}`);
}

function readJson(file: string): unknown {
  let text: string;
  try {
    text = fs.readFileSync(file, "utf-8");
  } catch {
    throw new ArtifactError(`missing artifact: ${file}`);
  }
  try {
    return JSON.parse(text);
  } catch (e) {
    throw new ArtifactError(`corrupt JSON in ${file}: ${String(e)}`);
  }
}

function requireSchema(obj: Record<string, unknown>, file: string): void {
  const v = obj["schema_version"];
  if (v !== SCHEMA_VERSION) {
    throw new ArtifactError(
      `${file}: unsupported schema_version ${JSON.stringify(v)} ` +
      `(this reader understands ${SCHEMA_VERSION})`);
  }
}

const PARTICLE_MAGIC = "VXPART01";
const PARTICLE_HEADER_BYTES = 48;

export function parseParticles(buf: Buffer, file: string): ParticleSnapshot {
  if (buf.length < PARTICLE_HEADER_BYTES) {
    throw new ArtifactError(`${file}: truncated particle file`);
  }
  if (buf.subarray(0, 8).toString("latin1") !== PARTICLE_MAGIC) {
    throw new ArtifactError(`${file}: bad particle magic`);
  }
  const n = Number(buf.readBigUInt64LE(8));
  const time = buf.readDoubleLE(16);
  const seed = Number(buf.readBigUInt64LE(24));
  const configHash = buf.subarray(32, 48).toString("ascii").trim();
  const want = PARTICLE_HEADER_BYTES + 16 * n;
  if (buf.length !== want) {
    throw new ArtifactError(
      `${file}: expected ${want} bytes for N=${n}, got ${buf.length}`);
  }
  const payload = Buffer.from(buf.subarray(PARTICLE_HEADER_BYTES));
  const positions = new Float64Array(
    payload.buffer, payload.byteOffset, 2 * n);
  return { nParticles: n, time, seed, configHash, positions };
}

export class RunArtifacts {
  readonly runDir: string;
  readonly manifestPath: string;
  readonly manifest: Manifest;
  private reportCache: Map<string, Report> | null = null;
  private npyCache = new Map<string, NpyArray>();

  constructor(runDir: string) {
    this.runDir = runDir;
    this.manifestPath = path.join(runDir, "manifest.json");
    const m = readJson(this.manifestPath) as Record<string, unknown>;
    requireSchema(m, this.manifestPath);
    this.manifest = m as unknown as Manifest;
  }

  /** All check reports listed in the manifest, keyed by check name. */
  reports(): Map<string, Report> {
    if (this.reportCache === null) {
      this.reportCache = new Map();
      for (const rel of this.manifest.reports) {
        const file = path.join(this.runDir, rel);
        const rep = readJson(file) as Record<string, unknown>;
        requireSchema(rep, file);
        this.reportCache.set(String(rep["check"]), rep as unknown as Report);
      }
    }
    return this.reportCache;
  }

  report(check: string): Report | undefined {
    return this.reports().get(check);
  }

  /** The diagnostics table as one object per row. */
  diagnostics(): Record<string, unknown>[] {
    const tab = this.manifest.diagnostics ?? { columns: [], rows: [] };
    return tab.rows.map((row) =>
      Object.fromEntries(tab.columns.map((c, i) => [c, row[i]])));
  }

  /** A CSV table (path relative to the run dir) as raw strings. */
  csv(rel: string): { header: string[]; rows: string[][] } {
    const file = path.join(this.runDir, rel);
    let text: string;
    try {
      text = fs.readFileSync(file, "utf-8");
    } catch {
      throw new ArtifactError(`missing artifact: ${file}`);
    }
    // The writer emits plain comma-separated fields with no quoting or
    // embedded separators, so a line split is a faithful parse.
    const lines = text.split("\n").filter((ln) => ln.length > 0);
    if (lines.length === 0) throw new ArtifactError(`${file}: empty CSV`);
    const cells = lines.map((ln) => ln.split(","));
    return { header: cells[0], rows: cells.slice(1) };
  }

  field(index: number): NpyArray {
    const snap = this.manifest.snapshots[index];
    if (snap === undefined || snap.field === undefined) {
      throw new ArtifactError(
        `${this.runDir}: snapshot ${index} has no field file`);
    }
    const rel = snap.field;
    if (!this.npyCache.has(rel)) {
      if (snap.sidecar !== undefined) {
        const side = path.join(this.runDir, snap.sidecar);
        requireSchema(readJson(side) as Record<string, unknown>, side);
      }
      let buf: Buffer;
      try {
        buf = fs.readFileSync(path.join(this.runDir, rel));
      } catch {
        throw new ArtifactError(
          `missing artifact: ${path.join(this.runDir, rel)}`);
      }
      this.npyCache.set(rel, parseNpy(buf));
    }
    return this.npyCache.get(rel)!;
  }

  particles(index: number): ParticleSnapshot {
    const snap = this.manifest.snapshots[index];
    if (snap === undefined || snap.particles === undefined) {
      throw new ArtifactError(
        `${this.runDir}: snapshot ${index} has no particle file`);
    }
    const file = path.join(this.runDir, snap.particles);
    let buf: Buffer;
    try {
      buf = fs.readFileSync(file);
    } catch {
      throw new ArtifactError(`missing artifact: ${file}`);
    }
    return parseParticles(buf, file);
  }

  /** Snapshot indices that carry a particle file, oldest first. */
  particleSnapshots(): number[] {
    return this.manifest.snapshots
      .filter((s) => s.particles !== undefined)
      .map((s) => s.index);
  }

  fieldSnapshots(): number[] {
    return this.manifest.snapshots
      .filter((s) => s.field !== undefined)
      .map((s) => s.index);
  }

  hasCsv(rel: string): boolean {
    return this.manifest.extra_files.includes(rel);
  }
}
