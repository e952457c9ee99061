/**
 * A small deterministic SVG plotting surface: fixed fonts, fixed palette,
 * no timestamps, no randomness, so re-rendering a figure from the same
 * artifacts is byte-identical.
 */

export function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export const PALETTE = ["#1f6feb", "#d1242f", "#1a7f37", "#9a6700", "#8250df"];

const FONT = 'font-family="SFMono-Regular,Menlo,monospace"';

/** Round to a stable short decimal for coordinates (avoids 1e-17 noise). */
function px(v: number): string {
  return Number(v.toFixed(2)).toString();
}

export function fmtTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 0.01 && a < 10000) {
    return Number(v.toPrecision(6)).toString();
  }
  const e = Math.floor(Math.log10(a));
  const m = v / 10 ** e;
  const ms = Number(m.toPrecision(3)).toString();
  return ms === "1" ? `1e${e}` : `${ms}e${e}`;
}

export interface Scale {
  map(v: number): number;
  ticks(): number[];
  readonly log: boolean;
}

export function linearScale(d0: number, d1: number,
                            r0: number, r1: number): Scale {
  if (!(d1 > d0)) d1 = d0 + 1;
  const map = (v: number) => r0 + ((v - d0) / (d1 - d0)) * (r1 - r0);
  const ticks = () => {
    const raw = (d1 - d0) / 4;
    const mag = 10 ** Math.floor(Math.log10(raw));
    const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => s >= raw)!;
    const out: number[] = [];
    for (let v = Math.ceil(d0 / step) * step; v <= d1 + 1e-9 * step; v += step) {
      out.push(Math.abs(v) < 1e-12 * step ? 0 : v);
    }
    return out;
  };
  return { map, ticks, log: false };
}

export function logScale(d0: number, d1: number,
                         r0: number, r1: number): Scale {
  if (!(d0 > 0) || !(d1 > 0)) {
    throw new RangeError("log scale needs positive bounds");
  }
  if (!(d1 > d0)) d1 = d0 * 10;
  const l0 = Math.log10(d0);
  const l1 = Math.log10(d1);
  const map = (v: number) => r0 + ((Math.log10(v) - l0) / (l1 - l0)) * (r1 - r0);
  const ticks = () => {
    const out: number[] = [];
    for (let e = Math.floor(l0); e <= Math.ceil(l1); e += 1) {
      for (const m of l1 - l0 > 3 ? [1] : [1, 2, 5]) {
        const v = m * 10 ** e;
        if (v >= d0 * (1 - 1e-9) && v <= d1 * (1 + 1e-9)) out.push(v);
      }
    }
    return out;
  };
  return { map, ticks, log: true };
}

export interface PlotOptions {
  width?: number;
  height?: number;
  title: string;
  xLabel: string;
  yLabel: string;
  xLog?: boolean;
  yLog?: boolean;
}

const MARGIN = { left: 64, right: 16, top: 34, bottom: 44 };

export class Plot {
  readonly width: number;
  readonly height: number;
  private readonly opts: PlotOptions;
  private xScale: Scale | null = null;
  private yScale: Scale | null = null;
  private readonly shapes: string[] = [];
  private readonly legends: { label: string; color: string }[] = [];
  private readonly notes: string[] = [];

  constructor(opts: PlotOptions) {
    this.opts = opts;
    this.width = opts.width ?? 560;
    this.height = opts.height ?? 380;
  }

  /** Fix the data window; must be called before adding shapes. */
  domain(x0: number, x1: number, y0: number, y1: number): this {
    const mk = (log: boolean | undefined, d0: number, d1: number,
                r0: number, r1: number) =>
      log ? logScale(d0, d1, r0, r1) : linearScale(d0, d1, r0, r1);
    this.xScale = mk(this.opts.xLog, x0, x1,
                     MARGIN.left, this.width - MARGIN.right);
    this.yScale = mk(this.opts.yLog, y0, y1,
                     this.height - MARGIN.bottom, MARGIN.top);
    return this;
  }

  private sc(): { x: Scale; y: Scale } {
    if (this.xScale === null || this.yScale === null) {
      throw new Error("Plot.domain() must be called before drawing");
    }
    return { x: this.xScale, y: this.yScale };
  }

  line(xs: number[], ys: number[], color: string, dash = ""): this {
    const { x, y } = this.sc();
    const pts = xs.map((v, i) => `${px(x.map(v))},${px(y.map(ys[i]))}`);
    const extra = dash ? ` stroke-dasharray="${dash}"` : "";
    this.shapes.push(
      `<polyline points="${pts.join(" ")}" fill="none" stroke="${color}"` +
      ` stroke-width="1.5"${extra}/>`);
    return this;
  }

  points(xs: number[], ys: number[], color: string, r = 3): this {
    const { x, y } = this.sc();
    for (let i = 0; i < xs.length; i += 1) {
      this.shapes.push(
        `<circle cx="${px(x.map(xs[i]))}" cy="${px(y.map(ys[i]))}" ` +
        `r="${r}" fill="${color}" fill-opacity="0.75"/>`);
    }
    return this;
  }

  /** Raw SVG placed inside the plot area (already in pixel coordinates). */
  raw(fragment: string): this {
    this.shapes.push(fragment);
    return this;
  }

  toPixel(vx: number, vy: number): { x: number; y: number } {
    const { x, y } = this.sc();
    return { x: x.map(vx), y: y.map(vy) };
  }

  legend(label: string, color: string): this {
    this.legends.push({ label, color });
    return this;
  }

  /** A annotation line rendered under the plot frame. */
  note(text: string): this {
    this.notes.push(text);
    return this;
  }

  toString(): string {
    const { x, y } = this.sc();
    const left = MARGIN.left;
    const right = this.width - MARGIN.right;
    const top = MARGIN.top;
    const bottom = this.height - MARGIN.bottom;
    const noteSpace = this.notes.length === 0 ? 0 : 8 + this.notes.length * 16;
    const h = this.height + noteSpace;
    const out: string[] = [];
    out.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}"` +
             ` height="${h}" viewBox="0 0 ${this.width} ${h}">`);
    out.push(`<rect width="${this.width}" height="${h}" fill="white"/>`);
    out.push(`<text x="${left}" y="20" ${FONT} font-size="13" ` +
             `font-weight="bold">${esc(this.opts.title)}</text>`);
    // frame + ticks
    out.push(`<rect x="${left}" y="${top}" width="${right - left}" ` +
             `height="${bottom - top}" fill="none" stroke="#888"/>`);
    for (const t of x.ticks()) {
      const p = px(x.map(t));
      out.push(`<line x1="${p}" y1="${bottom}" x2="${p}" y2="${bottom + 4}"` +
               ` stroke="#888"/>`);
      out.push(`<text x="${p}" y="${bottom + 17}" ${FONT} font-size="10" ` +
               `text-anchor="middle">${esc(fmtTick(t))}</text>`);
    }
    for (const t of y.ticks()) {
      const p = px(y.map(t));
      out.push(`<line x1="${left - 4}" y1="${p}" x2="${left}" y2="${p}"` +
               ` stroke="#888"/>`);
      out.push(`<text x="${left - 7}" y="${Number(p) + 3}" ${FONT} ` +
               `font-size="10" text-anchor="end">${esc(fmtTick(t))}</text>`);
    }
    out.push(`<text x="${(left + right) / 2}" y="${bottom + 34}" ${FONT} ` +
             `font-size="11" text-anchor="middle">` +
             `${esc(this.opts.xLabel)}</text>`);
    out.push(`<text x="14" y="${(top + bottom) / 2}" ${FONT} font-size="11" ` +
             `text-anchor="middle" transform="rotate(-90 14 ` +
             `${(top + bottom) / 2})">${esc(this.opts.yLabel)}</text>`);
    out.push(...this.shapes);
    this.legends.forEach((lg, i) => {
      const ly = top + 14 + 16 * i;
      out.push(`<line x1="${right - 150}" y1="${ly - 4}" x2="${right - 126}"` +
               ` y2="${ly - 4}" stroke="${lg.color}" stroke-width="2"/>`);
      out.push(`<text x="${right - 120}" y="${ly}" ${FONT} font-size="10">` +
               `${esc(lg.label)}</text>`);
    });
    this.notes.forEach((n, i) => {
      out.push(`<text x="${left}" y="${this.height + 12 + 16 * i}" ${FONT} ` +
               `font-size="11">${esc(n)}</text>`);
    });
    out.push("</svg>");
    return out.join("\n") + "\n";
  }
}
