"""
Command line entry point: python -m qpeuler.cli <verb> ...

Verbs: run, export-grid, invert-diffeo, check-omega.
Exit codes: 0 ok, 2 config error, 3 solver abort, 4 tolerance breach.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from .artifacts import export_grid, load_coefficients, read_header
from .errors import ConfigError, GridBudgetError, QPEulerError
from .freq_lattice import FrequencyMatrix, build_mode_set, check_nonresonance
from .initial_data import build_initial_data
from .run_service import (
    EXIT_ABORT,
    EXIT_CONFIG,
    EXIT_OK,
    RunService,
    build_modes,
    load_config,
    norm_params,
)

load_dotenv()


def _configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(
        level=(level or os.getenv("QPEULER_LOG_LEVEL", "INFO")).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "solver.t_end": getattr(args, "t_end", None),
        "solver.dt": getattr(args, "dt", None),
        "solver.mode": getattr(args, "mode", None),
        "solver.grid": getattr(args, "grid", None),
        "initial_data.seed": getattr(args, "seed", None),
        "allow_resonant": True if getattr(args, "allow_resonant", False) else None,
    }


# -------------------------------------------------------------------------
# Verbs
# -------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    service = RunService(args.output_dir)
    jobs = args.jobs if args.jobs is not None else int(os.getenv("QPEULER_JOBS", "1"))
    results = service.run_sweep(args.config, jobs=jobs, overrides=_overrides(args))

    worst = EXIT_OK
    for path, result in zip(args.config, results):
        if result.exit_code == EXIT_OK:
            print(f"✅ {path}: {result.message} -> {result.directory}")
        elif result.exit_code == EXIT_CONFIG:
            print(f"❌ {path}: config error: {result.message}")
        else:
            print(f"❌ {path}: {result.message} (partial artifacts in {result.directory})")
        worst = max(worst, result.exit_code)
    return worst


def cmd_export_grid(args: argparse.Namespace) -> int:
    source = Path(args.source)
    if source.suffix == ".json":
        config, _ = load_config(source)
        ms = build_modes(config)
        field, _ = build_initial_data(config.initial_data, ms, norm_params(config, ms))
    else:
        header = read_header(source)
        ms = build_mode_set(FrequencyMatrix(header["omega"]), int(header["K"]))
        field, _ = load_coefficients(source, ms)

    n = ms.n
    if len(args.window) != 2 * n:
        raise ConfigError(f"--window needs {2 * n} numbers (low high per axis)", field="window")
    window = [(args.window[2 * j], args.window[2 * j + 1]) for j in range(n)]
    resolution = args.resolution[0] if len(args.resolution) == 1 else args.resolution
    grid = export_grid(field, window, resolution, args.output)
    print(f"✅ {grid.points.shape[0]} points written to {args.output}")
    return EXIT_OK


def cmd_invert_diffeo(args: argparse.Namespace) -> int:
    config, _ = load_config(args.config, _overrides(args))
    directory = Path(args.output_dir or os.getenv("QPEULER_OUTPUT_DIR", "runs")) / "invert"
    displacement = None
    if args.displacement:
        ms = build_modes(config)
        displacement, _ = load_coefficients(args.displacement, ms)
    service = RunService(args.output_dir)
    summary = service.invert_diffeo(config, directory, scale=args.scale, displacement=displacement)
    print(json.dumps(summary, indent=2))
    status = "✅" if summary["round_trip_residual"] <= 1e-8 else "⚠️"
    print(f"{status} round-trip residual {summary['round_trip_residual']:.3e}, "
          f"margin {summary['margin']:.4f} -> inverse in {directory}")
    return EXIT_OK


def cmd_check_omega(args: argparse.Namespace) -> int:
    config, _ = load_config(args.config)
    ms = build_modes(config)
    report = check_nonresonance(ms, args.tol if args.tol is not None else config.tolerances.nonresonance_tol)
    print(report.model_dump_json(indent=2))
    if report.ok:
        print(f"✅ no coinciding exponents among {report.modes_checked} modes "
              f"(min separation {report.min_separation:.3e})")
        return EXIT_OK
    print(f"⚠️ resonant: Λ{report.worst_pair[0]} ≈ Λ{report.worst_pair[1]} "
          f"(separation {report.min_separation:.3e})")
    return EXIT_CONFIG


# -------------------------------------------------------------------------
# Parser
# -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpeuler", description="Quasi-periodic Euler flows")
    parser.add_argument("--log-level", default=None, help="Logging level (default QPEULER_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="Integrate one or more configs")
    run.add_argument("config", nargs="+", help="JSON run config(s)")
    run.add_argument("--t-end", type=float, dest="t_end")
    run.add_argument("--dt", type=float)
    run.add_argument("--mode", choices=["eulerian", "lagrangian"])
    run.add_argument("--grid", type=int, help="Torus grid points per dimension")
    run.add_argument("--output-dir", dest="output_dir")
    run.add_argument("--allow-resonant", action="store_true", dest="allow_resonant")
    run.add_argument("--seed", type=int)
    run.add_argument("--jobs", type=int, help="Parallel runs for several configs (default QPEULER_JOBS)")
    run.set_defaults(func=cmd_run)

    export = sub.add_parser("export-grid", help="Evaluate a snapshot (or a config's initial data) on a grid")
    export.add_argument("source", help="Coefficient dump, or a .json config for its initial data")
    export.add_argument("--window", type=float, nargs="+", required=True, help="low high per axis")
    export.add_argument("--resolution", type=int, nargs="+", default=[101])
    export.add_argument("--output", required=True)
    export.set_defaults(func=cmd_export_grid)

    inv = sub.add_parser("invert-diffeo", help="Invert φ = id + scale·f on the torus grid")
    inv.add_argument("config")
    inv.add_argument("--displacement", help="Coefficient dump of f (default: the config's initial data)")
    inv.add_argument("--scale", type=float, default=1.0)
    inv.add_argument("--grid", type=int)
    inv.add_argument("--output-dir", dest="output_dir")
    inv.set_defaults(func=cmd_invert_diffeo)

    check = sub.add_parser("check-omega", help="Truncated non-resonance report for a config's Ω and K")
    check.add_argument("config")
    check.add_argument("--tol", type=float)
    check.set_defaults(func=cmd_check_omega)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ConfigError, GridBudgetError) as e:
        print(f"❌ {e}")
        return EXIT_CONFIG
    except QPEulerError as e:
        print(f"❌ {e}")
        return EXIT_ABORT
    except ValueError as e:
        print(f"❌ invalid input: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
