/**
 * Figure builders: each takes loaded run artifacts and produces an SVG plus
 * the exact numbers it displays.  Nothing is recomputed here beyond plot
 * transforms (log scales, pixel mapping); every annotated quantity is the
 * artifact value verbatim, exposed in `numbers` so callers can cross-check.
 */

import { RunArtifacts, ArtifactError, asNumber } from "./artifacts.js";
import { PALETTE, Plot, esc } from "./svg.js";

export interface Figure {
  kind: string;
  title: string;
  svg: string;
  /** label -> exact artifact value displayed in the figure. */
  numbers: Record<string, unknown>;
  sources: string[];
}

export const FIGURE_KINDS = ["decay", "convergence", "hseries",
                             "particles"] as const;
export type FigureKind = (typeof FIGURE_KINDS)[number];

/** Why a figure kind cannot be drawn from this run, or null if it can. */
export function unavailable(art: RunArtifacts, kind: FigureKind
                            ): string | null {
  switch (kind) {
    case "decay":
      return art.report("decay") ? null : "run has no decay report";
    case "convergence":
      return art.hasCsv("study/convergence.csv")
        ? null : "run has no convergence table";
    case "hseries":
      return art.report("uniqueness") ? null : "run has no uniqueness report";
    case "particles":
      return art.particleSnapshots().length > 0
        ? null : "run has no particle snapshots";
  }
}

export function buildFigure(art: RunArtifacts, kind: FigureKind): Figure {
  const reason = unavailable(art, kind);
  if (reason !== null) {
    throw new ArtifactError(`${art.runDir}: ${reason}`);
  }
  switch (kind) {
    case "decay": return decayFigure(art);
    case "convergence": return convergenceFigure(art);
    case "hseries": return hSeriesFigure(art);
    case "particles": return particlesFigure(art);
  }
}

const SERIES_LABEL: Record<string, string> = {
  vorticity_p2: "|u|_2",
  vorticity_p4: "|u|_4",
  velocity_p4: "|K(u)|_4",
};

function decayFigure(art: RunArtifacts): Figure {
  const rep = art.report("decay")!;
  const v = rep.values as {
    times: number[];
    series: Record<string, number[]>;
    fits: Record<string, { slope: number; intercept: number;
                           r_squared: number; ideal: number }>;
  };
  const times = v.times.map(asNumber);
  const names = Object.keys(SERIES_LABEL).filter((k) => k in v.series);
  const all = names.flatMap((k) => v.series[k].map(asNumber));
  const plot = new Plot({
    title: "Norm decay (log-log) with fitted power laws",
    xLabel: "t + mollification age", yLabel: "norm",
    xLog: true, yLog: true,
  });
  plot.domain(Math.min(...times), Math.max(...times),
              Math.min(...all) * 0.8, Math.max(...all) * 1.25);
  const numbers: Record<string, unknown> = {};
  names.forEach((name, i) => {
    const color = PALETTE[i % PALETTE.length];
    const ys = v.series[name].map(asNumber);
    plot.points(times, ys, color);
    // the stored fit, drawn as exp(intercept) * t^slope across the window
    const fit = v.fits[name];
    const slope = asNumber(fit.slope);
    const intercept = asNumber(fit.intercept);
    const fx = [times[0], times[times.length - 1]];
    plot.line(fx, fx.map((t) => Math.exp(intercept) * t ** slope),
              color, "4 3");
    plot.legend(`${SERIES_LABEL[name]}  slope ${String(fit.slope)}`, color);
    plot.note(`${SERIES_LABEL[name]}: slope ${String(fit.slope)} ` +
              `(self-similar ${String(fit.ideal)}), ` +
              `R^2 ${String(fit.r_squared)}`);
    numbers[`${name}.slope`] = fit.slope;
    numbers[`${name}.ideal`] = fit.ideal;
    numbers[`${name}.r_squared`] = fit.r_squared;
  });
  return { kind: "decay", title: "Norm decay", svg: plot.toString(),
           numbers, sources: ["reports/decay.json"] };
}

function convergenceFigure(art: RunArtifacts): Figure {
  const rel = "study/convergence.csv";
  const { header, rows } = art.csv(rel);
  const hCol = header.indexOf("h");
  const eCol = header.indexOf("error");
  const oCol = header.indexOf("order");
  if (hCol < 0 || eCol < 0 || oCol < 0) {
    throw new ArtifactError(`${rel}: expected columns h, error, order; ` +
                            `got ${header.join(",")}`);
  }
  const hs = rows.map((r) => Number(r[hCol]));
  const errs = rows.map((r) => Number(r[eCol]));
  const plot = new Plot({
    title: "Refinement study: error vs h",
    xLabel: "h", yLabel: "error", xLog: true, yLog: true,
  });
  plot.domain(Math.min(...hs) * 0.8, Math.max(...hs) * 1.25,
              Math.min(...errs) * 0.5, Math.max(...errs) * 2);
  plot.line(hs, errs, PALETTE[0]).points(hs, errs, PALETTE[0]);
  const numbers: Record<string, unknown> = {};
  rows.forEach((r, i) => {
    const order = r[oCol];
    numbers[`level${i}.h`] = r[hCol];
    numbers[`level${i}.error`] = r[eCol];
    if (order !== "") {
      numbers[`level${i}.order`] = order;
      const p = plot.toPixel(hs[i], errs[i]);
      plot.raw(`<text x="${(p.x + 8).toFixed(2)}" y="${p.y.toFixed(2)}" ` +
               `font-family="SFMono-Regular,Menlo,monospace" ` +
               `font-size="10">order ${esc(order)}</text>`);
    }
  });
  const kindIn = art.report("convergence")?.inputs["base_kind"];
  plot.note(`levels: ${rows.map((r) => `h=${r[hCol]} error=${r[eCol]}`)
    .join("  ")}`);
  if (typeof kindIn === "string") plot.note(`refined: ${kindIn}`);
  return { kind: "convergence", title: "Refinement study",
           svg: plot.toString(), numbers, sources: [rel] };
}

function hSeriesFigure(art: RunArtifacts): Figure {
  const rep = art.report("uniqueness")!;
  const entries = Object.entries(rep.values).filter(([k]) =>
    k.startsWith("eps=")) as [string, {
      max_h: number; times: number[]; h: number[];
    }][];
  if (entries.length === 0) {
    throw new ArtifactError("uniqueness report lists no eps entries");
  }
  const pos = entries.flatMap(([, v]) => v.h.map(asNumber))
    .filter((x) => x > 0);
  const times = entries[0][1].times.map(asNumber);
  const plot = new Plot({
    title: "Separation functional h_eps(t) between resolutions",
    xLabel: "t", yLabel: "h_eps", yLog: true,
  });
  plot.domain(Math.min(...times), Math.max(...times),
              Math.min(...pos) * 0.5, Math.max(...pos) * 2);
  const numbers: Record<string, unknown> = {};
  entries.forEach(([key, v], i) => {
    const color = PALETTE[i % PALETTE.length];
    const ts: number[] = [];
    const hs: number[] = [];
    v.times.forEach((t, j) => {
      const h = asNumber(v.h[j]);
      if (h > 0) {   // log axis; exact zeros (identical states) are omitted
        ts.push(asNumber(t));
        hs.push(h);
      }
    });
    plot.line(ts, hs, color).points(ts, hs, color, 2.5);
    plot.legend(`${key}  max ${String(v.max_h)}`, color);
    numbers[`${key}.max_h`] = v.max_h;
  });
  const n = rep.inputs["n"];
  const fineN = rep.inputs["fine_n"];
  plot.note(`grids: n=${String(n)} vs fine_n=${String(fineN)}; ` +
            `max_h annotated per eps`);
  return { kind: "hseries", title: "Separation functional",
           svg: plot.toString(), numbers, sources: ["reports/uniqueness.json"] };
}

/** Two-stop color ramp used for the KDE underlay (white -> blue). */
function ramp(t: number): string {
  const c = (a: number, b: number) => Math.round(a + (b - a) * t);
  return `rgb(${c(255, 18)},${c(255, 64)},${c(255, 171)})`;
}

function particlesFigure(art: RunArtifacts): Figure {
  const idx = art.particleSnapshots().at(-1)!;
  const snap = art.manifest.snapshots[idx];
  const parts = art.particles(idx);
  const grid = art.manifest.grid;
  const plot = new Plot({
    title: `Particle cloud at t=${String(snap.time)}`,
    xLabel: "x", yLabel: "y", width: 460, height: 470,
  });
  // axis box: the KDE grid when present, else the cloud's bounding square
  let half: number;
  if (grid !== null) {
    half = asNumber(grid.L) / 2;
  } else {
    let m = 0;
    for (const v of parts.positions) m = Math.max(m, Math.abs(v));
    half = m * 1.05;
  }
  plot.domain(-half, half, -half, half);

  const numbers: Record<string, unknown> = {};
  const sources: string[] = [snap.particles!];
  if (snap.field !== undefined && grid !== null) {
    const f = art.field(idx);
    const n = f.shape[0];
    let peak = 0;
    for (const v of f.data) peak = Math.max(peak, v);
    const p0 = plot.toPixel(-half, half);
    const p1 = plot.toPixel(half, -half);
    const w = (p1.x - p0.x) / n;
    const h = (p1.y - p0.y) / n;
    const cells: string[] = [];
    for (let i = 0; i < n; i += 1) {        // row = x index (ij indexing)
      for (let j = 0; j < n; j += 1) {
        const t = peak > 0 ? f.data[i * n + j] / peak : 0;
        if (t < 0.004) continue;            // skip visually-white cells
        cells.push(`<rect x="${(p0.x + i * w).toFixed(2)}" ` +
                   `y="${(p1.y - (j + 1) * h).toFixed(2)}" ` +
                   `width="${(w + 0.05).toFixed(2)}" ` +
                   `height="${(h + 0.05).toFixed(2)}" ` +
                   `fill="${ramp(t)}"/>`);
      }
    }
    plot.raw(cells.join(""));
    sources.push(snap.field);
  }

  const maxDots = 2000;       // fixed prefix: deterministic, not resampled
  const shown = Math.min(parts.nParticles, maxDots);
  const xs: number[] = [];
  const ys: number[] = [];
  for (let i = 0; i < shown; i += 1) {
    xs.push(parts.positions[2 * i]);
    ys.push(parts.positions[2 * i + 1]);
  }
  plot.points(xs, ys, "#24292f", 1.2);

  numbers["n_particles"] = parts.nParticles;
  numbers["time"] = snap.time;
  plot.note(`N = ${String(parts.nParticles)} (showing first ${shown}), ` +
            `t = ${String(snap.time)}, seed = ${String(parts.seed)}`);
  const repRep = art.report("representation");
  if (repRep !== undefined) {
    const e = (repRep.values as { final_e_l1: unknown }).final_e_l1;
    plot.note(`marginal vs closed form: L1 error ${String(e)}`);
    numbers["final_e_l1"] = e;
  }
  return { kind: "particles", title: "Particle cloud",
           svg: plot.toString(), numbers, sources };
}
