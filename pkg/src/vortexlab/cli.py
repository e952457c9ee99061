"""Command-line entry point.

``vortexlab run CONFIG.toml`` executes any scenario; each scenario kind is
also exposed as a subcommand (``vortexlab flow-check CONFIG.toml``,
``vortexlab kernel-bench --n 1e4,1e5``, ...).  Artifacts land in a run
directory (``--output-dir``, the scenario's ``output_dir``, or
``$VORTEXLAB_OUTPUT_ROOT/<kind>-<confighash>``).

Exit codes:
  0  all enabled checks passed
  1  a check failed (or the output audit found orphans)
  2  configuration or schema error (message names the offending field)
  3  a referenced input path does not exist
  4  the solver aborted (stability violation or blow-up guard)
"""

from __future__ import annotations

import argparse
import sys

from .fields import FieldError
from .particles import StabilityError
from .scenarios import (OUTPUT_ROOT_ENV, SCENARIO_KINDS, ConfigError,
                        MissingInputError, load_config, run_scenario)
from .solver import BlowupError, CflError

_EXIT_DOC = """\
exit codes:
  0  all enabled checks passed
  1  a check failed (or --check-outputs found orphaned/missing artifacts)
  2  configuration or schema error
  3  missing input file or run directory
  4  solver abort (CFL violation, particle stability, or blow-up guard)

the default output root is ./runs, overridable via ${ROOT_ENV}.
""".replace("${ROOT_ENV}", OUTPUT_ROOT_ENV)


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("config", nargs=None if config_required else "?",
                   help="scenario TOML file")
    p.add_argument("--output-dir", help="run directory (overrides the config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers for independent study levels")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-check summary lines")
    p.add_argument("--check-outputs", action="store_true",
                   help="audit the run directory afterwards: every artifact "
                        "must be referenced by exactly one manifest")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vortexlab",
        description="Vorticity-equation laboratory: spectral and particle "
                    "runs plus verification scenarios.",
        epilog=_EXIT_DOC,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run any scenario config",
                         epilog=_EXIT_DOC,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_common(run)

    for kind in SCENARIO_KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} scenario",
                           epilog=_EXIT_DOC,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _add_common(p, config_required=(kind != "kernel-bench"))
        if kind == "kernel-bench":
            p.add_argument("--n", help="comma-separated source counts, "
                                       "e.g. 1e4,1e5")
        if kind == "convergence-study":
            p.add_argument("--levels", type=int,
                           help="number of refinement levels (>= 3)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        else:
            cfg = {}
        if args.command != "run":
            declared = cfg.get("kind")
            if declared is None:
                cfg["kind"] = args.command
            elif declared != args.command:
                raise ConfigError(
                    "kind", f"config declares {declared!r} but the "
                            f"{args.command} subcommand was invoked")
        if getattr(args, "n", None):
            cfg.setdefault("bench", {})["n"] = args.n
        if getattr(args, "levels", None):
            cfg.setdefault("study", {})["levels"] = args.levels

        status, run_dir, _ = run_scenario(
            cfg, output_dir=args.output_dir, seed=args.seed,
            quiet=args.quiet, jobs=args.jobs)

        if args.check_outputs:
            from .runio import check_outputs
            audit = check_outputs(run_dir)
            if audit["orphans"] or audit["missing"]:
                for f in audit["orphans"]:
                    print(f"orphaned artifact: {f}", file=sys.stderr)
                for f in audit["missing"]:
                    print(f"missing artifact: {f}", file=sys.stderr)
                status = max(status, 1)
            elif not args.quiet:
                print(f"output audit clean ({audit['n_present']} files)")
        return status
    except ConfigError as e:
        print(f"vortexlab: {e}", file=sys.stderr)
        return 2
    except FieldError as e:
        # scenario data that the library itself rejects (sparse snapshot
        # lattices, bad densities, ...) is a configuration problem too
        print(f"vortexlab: {e}", file=sys.stderr)
        return 2
    except MissingInputError as e:
        print(f"vortexlab: {e}", file=sys.stderr)
        return 3
    except (CflError, BlowupError, StabilityError) as e:
        print(f"vortexlab: solver abort: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
