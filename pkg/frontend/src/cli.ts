#!/usr/bin/env node
/**
 * `vortexlab-reports render <run-dir> [--which kinds] [--out dir]`
 *
 * Exit codes: 0 rendered; 1 unreadable or unsupported run artifacts
 * (message names the offending file); 2 usage errors.
 */

import { parseArgs } from "node:util";

import { ArtifactError } from "./artifacts.js";
import { FIGURE_KINDS } from "./figures.js";
import { NpyError } from "./npy.js";
import { UsageError, render } from "./render.js";

const USAGE = `usage: vortexlab-reports render <run-dir> [options]

options:
  --which <kinds>   comma-separated figure kinds to render
                    (${FIGURE_KINDS.join(", ")}; default: all applicable)
  --out <dir>       output directory (default: <run-dir>-figures)
  --quiet           print nothing on success

The HTML index is always written alongside the figures.  Kinds the run
cannot supply are skipped with a note.  Exit codes: 0 ok, 1 bad or missing
artifacts, 2 usage.`;

type Writer = (line: string) => void;

export function cliMain(argv: string[],
                        log: Writer = (s) => console.log(s),
                        err: Writer = (s) => console.error(s)): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        which: { type: "string" },
        out: { type: "string" },
        quiet: { type: "boolean", default: false },
        help: { type: "boolean", short: "h", default: false },
      },
    });
  } catch (e) {
    err(`vortexlab-reports: ${(e as Error).message}`);
    err(USAGE);
    return 2;
  }
  if (parsed.values.help) {
    log(USAGE);
    return 0;
  }
  const [command, runDir, ...rest] = parsed.positionals;
  if (command !== "render" || runDir === undefined || rest.length > 0) {
    err(USAGE);
    return 2;
  }
  const which = parsed.values.which === undefined
    ? undefined
    : parsed.values.which.split(",").map((s) => s.trim()).filter((s) => s);

  try {
    const res = render(runDir, which, parsed.values.out);
    if (!parsed.values.quiet) {
      for (const f of res.written) log(f);
      for (const s of res.skipped) log(`skipped ${s.kind}: ${s.reason}`);
    }
    return 0;
  } catch (e) {
    if (e instanceof UsageError) {
      err(`vortexlab-reports: ${e.message}`);
      return 2;
    }
    if (e instanceof ArtifactError || e instanceof NpyError) {
      err(`vortexlab-reports: ${e.message}`);
      return 1;
    }
    throw e;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("vortexlab-reports")) {
  process.exit(cliMain(process.argv.slice(2)));
}
