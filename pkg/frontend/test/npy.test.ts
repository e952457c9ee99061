import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { NpyError, parseNpy } from "../src/npy.js";
import { RunArtifacts } from "../src/artifacts.js";

const FIXTURES = fileURLToPath(new URL("../fixtures", import.meta.url));

/** Hand-build an NPY buffer so the parser is tested against the format
 *  spec, not against itself. */
function craft(descr: string, shape: number[], data: number[],
               major = 1): Buffer {
  let header = `{'descr': '${descr}', 'fortran_order': False, ` +
    `'shape': (${shape.join(", ")}${shape.length === 1 ? "," : ""}), }`;
  const base = major === 1 ? 10 : 12;
  const padded = Math.ceil((base + header.length + 1) / 64) * 64;
  header = header.padEnd(padded - base - 1, " ") + "\n";
  const head = Buffer.alloc(base + header.length);
  head.write("\x93NUMPY", 0, "latin1");
  head[6] = major;
  head[7] = 0;
  if (major === 1) head.writeUInt16LE(header.length, 8);
  else head.writeUInt32LE(header.length, 8);
  head.write(header, base, "latin1");
  const itemsize = descr === "<f4" ? 4 : 8;
  const payload = Buffer.alloc(data.length * itemsize);
  data.forEach((v, i) => {
    if (itemsize === 4) payload.writeFloatLE(v, 4 * i);
    else payload.writeDoubleLE(v, 8 * i);
  });
  return Buffer.concat([head, payload]);
}

describe("parseNpy", () => {
  it("reads a v1 float64 C-order array exactly", () => {
    const vals = [1.5, -2.25, 3.125, 0.0, 1e-300, 7e200];
    const arr = parseNpy(craft("<f8", [2, 3], vals));
    expect(arr.shape).toEqual([2, 3]);
    expect(arr.dtype).toBe("<f8");
    expect(Array.from(arr.data)).toEqual(vals);
  });

  it("reads a v2 header", () => {
    const arr = parseNpy(craft("<f8", [3], [1, 2, 3], 2));
    expect(arr.shape).toEqual([3]);
    expect(Array.from(arr.data)).toEqual([1, 2, 3]);
  });

  it("widens float32 to float64", () => {
    const arr = parseNpy(craft("<f4", [2], [0.5, -1.5]));
    expect(Array.from(arr.data)).toEqual([0.5, -1.5]);
  });

  it("rejects bad magic", () => {
    expect(() => parseNpy(Buffer.from("not an array")))
      .toThrow(NpyError);
  });

  it("rejects Fortran order", () => {
    const buf = craft("<f8", [2, 2], [1, 2, 3, 4]);
    const patched = Buffer.from(
      buf.toString("latin1").replace("False", "True "), "latin1");
    expect(() => parseNpy(patched)).toThrow(/Fortran/);
  });

  it("rejects unsupported dtypes", () => {
    const buf = craft("<f8", [1], [1]);
    const patched = Buffer.from(
      buf.toString("latin1").replace("<f8", "<i8"), "latin1");
    expect(() => parseNpy(patched)).toThrow(/dtype/);
  });

  it("rejects payload length mismatches", () => {
    const buf = craft("<f8", [2, 3], [1, 2, 3, 4, 5, 6]);
    expect(() => parseNpy(buf.subarray(0, buf.length - 8)))
      .toThrow(/bytes/);
  });

  it("reads a real snapshot whose discrete mass matches the diagnostics",
     () => {
    const art = new RunArtifacts(path.join(FIXTURES, "regression"));
    const arr = art.field(0);
    const { L, n } = art.manifest.grid!;
    expect(arr.shape).toEqual([n, n]);
    const cell = (L / n) ** 2;
    let sum = 0;
    for (const v of arr.data) sum += v;
    const mass = art.diagnostics()[0]["mass"] as number;
    expect(sum * cell).toBeCloseTo(mass, 10);
  });

  it("fixture snapshots are plain files, never symlinks", () => {
    const dir = path.join(FIXTURES, "regression", "fields");
    for (const f of fs.readdirSync(dir)) {
      expect(fs.lstatSync(path.join(dir, f)).isSymbolicLink()).toBe(false);
    }
  });
});
