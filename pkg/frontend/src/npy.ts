/**
 * Minimal reader for the NPY array format (versions 1.0 and 2.0), covering
 * exactly what the run directories contain: C-order little-endian float
 * arrays.  Everything else is rejected loudly rather than guessed at.
 */

export interface NpyArray {
  shape: number[];
  /** Flattened values in row-major order (float32 input is widened). */
  data: Float64Array;
  dtype: string;
}

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

export class NpyError extends Error {}

export function parseNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new NpyError("not an NPY file (bad magic)");
  }
  const major = buf[6];
  let headerLen: number;
  let dataStart: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    dataStart = 10 + headerLen;
  } else if (major === 2) {
    headerLen = buf.readUInt32LE(8);
    dataStart = 12 + headerLen;
  } else {
    throw new NpyError(`unsupported NPY version ${major}.${buf[7]}`);
  }
  const header = buf.subarray(dataStart - headerLen, dataStart)
    .toString("latin1");

  const descr = /'descr':\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order':\s*(True|False)/.exec(header)?.[1];
  const shapeRaw = /'shape':\s*\(([^)]*)\)/.exec(header)?.[1];
  if (descr === undefined || fortran === undefined || shapeRaw === undefined) {
    throw new NpyError(`malformed NPY header: ${header.trim()}`);
  }
  if (fortran !== "False") {
    throw new NpyError("Fortran-order arrays are not supported");
  }
  const shape = shapeRaw.split(",").map((s) => s.trim()).filter((s) => s)
    .map((s) => {
      const n = Number(s);
      if (!Number.isInteger(n) || n < 0) {
        throw new NpyError(`bad shape entry ${JSON.stringify(s)}`);
      }
      return n;
    });
  const count = shape.reduce((a, b) => a * b, 1);

  const itemsize = descr === "<f8" ? 8 : descr === "<f4" ? 4 : 0;
  if (itemsize === 0) {
    throw new NpyError(`unsupported dtype ${JSON.stringify(descr)}`);
  }
  if (buf.length !== dataStart + count * itemsize) {
    throw new NpyError(
      `payload is ${buf.length - dataStart} bytes; ` +
      `shape (${shape.join(", ")}) x ${descr} needs ${count * itemsize}`);
  }

  // Realign: the typed-array views below need offsets divisible by itemsize.
  const payload = Buffer.from(buf.subarray(dataStart));
  const raw = itemsize === 8
    ? new Float64Array(payload.buffer, payload.byteOffset, count)
    : new Float32Array(payload.buffer, payload.byteOffset, count);
  return { shape, data: Float64Array.from(raw), dtype: descr };
}
