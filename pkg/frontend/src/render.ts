/**
 * Orchestration: pick the figure kinds a run can support, write the SVGs
 * and a single-page HTML index that links every figure together with the
 * exact numbers behind it.  Kinds the run cannot support are skipped with
 * a recorded note -- never fabricated.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { RunArtifacts } from "./artifacts.js";
import { FIGURE_KINDS, Figure, FigureKind, buildFigure,
         unavailable } from "./figures.js";
import { esc } from "./svg.js";

export class UsageError extends Error {}

export interface RenderResult {
  outDir: string;
  written: string[];
  skipped: { kind: string; reason: string }[];
}

export function render(runDir: string, which?: string[],
                       out?: string): RenderResult {
  const wanted: FigureKind[] = [];
  for (const w of which ?? [...FIGURE_KINDS]) {
    if (!(FIGURE_KINDS as readonly string[]).includes(w)) {
      throw new UsageError(
        `unknown figure kind ${JSON.stringify(w)}; ` +
        `choose from ${FIGURE_KINDS.join(", ")}`);
    }
    if (!wanted.includes(w as FigureKind)) wanted.push(w as FigureKind);
  }

  const art = new RunArtifacts(runDir);
  const outDir = out ?? runDir.replace(/[/\\]+$/, "") + "-figures";
  fs.mkdirSync(outDir, { recursive: true });

  const figures: Figure[] = [];
  const skipped: { kind: string; reason: string }[] = [];
  const written: string[] = [];
  for (const kind of wanted) {
    const reason = unavailable(art, kind);
    if (reason !== null) {
      skipped.push({ kind, reason });
      continue;
    }
    const fig = buildFigure(art, kind);
    const file = path.join(outDir, `${kind}.svg`);
    fs.writeFileSync(file, fig.svg);
    written.push(file);
    figures.push(fig);
  }

  const index = path.join(outDir, "index.html");
  fs.writeFileSync(index, indexHtml(art, figures, skipped));
  written.push(index);
  return { outDir, written, skipped };
}

function numberRows(numbers: Record<string, unknown>): string {
  return Object.entries(numbers).map(([k, v]) =>
    `<tr><td>${esc(k)}</td><td class="num">${esc(String(v))}</td></tr>`)
    .join("\n");
}

function reportRows(art: RunArtifacts): string {
  const rows: string[] = [];
  for (const [name, rep] of art.reports()) {
    const badge = rep.pass
      ? '<span class="pass">PASS</span>'
      : '<span class="fail">FAIL</span>';
    const thr = esc(JSON.stringify(rep.thresholds));
    rows.push(`<tr><td>${esc(name)}</td><td>${badge}</td>` +
              `<td class="num">${thr}</td></tr>`);
  }
  return rows.join("\n");
}

function indexHtml(art: RunArtifacts, figures: Figure[],
                   skipped: { kind: string; reason: string }[]): string {
  const m = art.manifest;
  const head = `<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>${esc(m.kind)} run report</title>
<style>
  body { font-family: system-ui, sans-serif; margin: 2rem auto;
         max-width: 64rem; color: #24292f; }
  table { border-collapse: collapse; margin: 0.5rem 0 1.5rem; }
  td, th { border: 1px solid #d0d7de; padding: 0.25rem 0.6rem;
           font-size: 0.9rem; }
  td.num { font-family: SFMono-Regular, Menlo, monospace; }
  .pass { color: #1a7f37; font-weight: bold; }
  .fail { color: #d1242f; font-weight: bold; }
  .skip { color: #57606a; font-style: italic; }
  img { max-width: 100%; border: 1px solid #d0d7de; }
</style>
</head>
<body>`;
  const parts: string[] = [head];
  parts.push(`<h1>${esc(m.kind)} run</h1>`);
  parts.push("<table>");
  parts.push(`<tr><td>config hash</td><td class="num">` +
             `${esc(m.config_hash)}</td></tr>`);
  parts.push(`<tr><td>seed</td><td class="num">${esc(String(m.seed))}` +
             `</td></tr>`);
  parts.push(`<tr><td>created</td><td class="num">${esc(m.created)}` +
             `</td></tr>`);
  parts.push(`<tr><td>wall time [s]</td><td class="num">` +
             `${esc(String(m.wall_time_s))}</td></tr>`);
  parts.push(`<tr><td>snapshots</td><td class="num">` +
             `${esc(String(m.snapshots.length))}</td></tr>`);
  parts.push("</table>");

  if (m.warnings.length > 0) {
    parts.push("<h2>Warnings</h2><ul>");
    for (const w of m.warnings) parts.push(`<li>${esc(w)}</li>`);
    parts.push("</ul>");
  }

  parts.push("<h2>Checks</h2>");
  parts.push("<table><tr><th>check</th><th>status</th>" +
             "<th>thresholds</th></tr>");
  parts.push(reportRows(art));
  parts.push("</table>");

  for (const fig of figures) {
    parts.push(`<h2 id="${esc(fig.kind)}">` +
               `<a href="${esc(fig.kind)}.svg">${esc(fig.title)}</a></h2>`);
    parts.push(`<img src="${esc(fig.kind)}.svg" alt="${esc(fig.title)}">`);
    parts.push("<table><tr><th>quantity</th><th>value</th></tr>");
    parts.push(numberRows(fig.numbers));
    parts.push("</table>");
    parts.push(`<p class="skip">sources: ` +
               `${fig.sources.map(esc).join(", ")}</p>`);
  }

  if (skipped.length > 0) {
    parts.push("<h2>Not rendered</h2><ul>");
    for (const s of skipped) {
      parts.push(`<li class="skip">${esc(s.kind)}: ${esc(s.reason)}</li>`);
    }
    parts.push("</ul>");
  }
  parts.push("</body>\n</html>\n");
  return parts.join("\n");
}
