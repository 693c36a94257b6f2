"""Command line entry point ``sac-fv``.

Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import harness
from .harness import EXIT_IO, EXIT_OK, EXIT_VALIDATION, ConfigError
from .mesh import build_uniform_grid, check_admissibility, read_mesh, write_mesh


def _floats(text):
    return [float(x) for x in text.split(",")]


def _ints(text):
    return [int(x) for x in text.split(",")]


def cmd_mesh(args) -> int:
    if args.check:
        mesh = read_mesh(args.check)
    else:
        if args.dim is None or args.extents is None or args.res is None:
            print("mesh: give --check FILE or all of --dim, --extents, --res", file=sys.stderr)
            return EXIT_VALIDATION
        try:
            mesh = build_uniform_grid(args.dim, args.extents, args.res)
        except ValueError as exc:
            print(f"mesh: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
    report = check_admissibility(mesh)
    print(f"cells {mesh.n_cells}  interior faces {mesh.n_interior}  "
          f"boundary faces {mesh.n_exterior}")
    print(report.summary())
    if args.out:
        write_mesh(mesh, args.out)
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _config(args) -> dict:
    if args.config is None:
        raise ConfigError("--config is required")
    return harness.load_config(args.config)


def _out(args, cfg) -> Path:
    return Path(args.out or cfg["output"]["dir"])


def cmd_check(args) -> int:
    cfg = _config(args)
    _, report = harness.check_config(cfg)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_run(args) -> int:
    cfg = _config(args)
    return harness.run_single(cfg, _out(args, cfg), sample=args.sample)


def cmd_ensemble(args) -> int:
    cfg = _config(args)
    return harness.run_ensemble(cfg, _out(args, cfg), threads=args.threads)


def cmd_converge(args) -> int:
    cfg = _config(args)
    return harness.run_converge(cfg, _out(args, cfg), threads=args.threads)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sac-fv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="generate or check a mesh file")
    m.add_argument("--dim", type=int, choices=(2, 3))
    m.add_argument("--extents", type=_floats)
    m.add_argument("--res", type=_ints)
    m.add_argument("--check", metavar="FILE")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mesh)

    for name, func, helptext in (
        ("check", cmd_check, "validate a configuration"),
        ("run", cmd_run, "single path"),
        ("ensemble", cmd_ensemble, "Monte Carlo ensemble with energy bound report"),
        ("converge", cmd_converge, "coupled refinement study"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="YAML config or a manifest.json to re-execute")
        s.add_argument("--threads", type=int, default=harness.default_threads())
        s.add_argument("--out")
        if name == "run":
            s.add_argument("--sample", type=int, default=0)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"sac-fv: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, yaml.YAMLError) as exc:
        print(f"sac-fv: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
