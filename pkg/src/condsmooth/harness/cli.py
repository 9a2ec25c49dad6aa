"""Command line entry point: ``condsmooth simulate|filter|smooth|report``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, NumericalError
from .config import MODELS, ExperimentConfig
from .experiment import METHODS, cmd_filter, cmd_report, cmd_simulate, cmd_smooth

log = logging.getLogger("condsmooth")


def _parser():
    p = argparse.ArgumentParser(prog="condsmooth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_args(sp):
        sp.add_argument("--config", type=Path, help="experiment config (JSON)")
        sp.add_argument("--model", choices=MODELS, help="model when no config is given")
        sp.add_argument("--seed", type=int, help="root seed; derives truth, filter and smoother seeds")
        sp.add_argument("--out", type=Path, help="run directory")
        sp.add_argument("--grid", type=int, choices=(32, 64), help="vorticity grid size (ns only)")
        sp.add_argument("--particles", type=int, metavar="N")
        sp.add_argument("--bridges", type=int, metavar="M")

    run_args(sub.add_parser("simulate", help="simulate truth and observations"))
    run_args(sub.add_parser("filter", help="run the particle filter on stored observations"))
    sm = sub.add_parser("smooth", help="fixed-lag smoothing on top of the filter")
    run_args(sm)
    sm.add_argument("--method", choices=METHODS, default="conditional")
    rp = sub.add_parser("report", help="merge run reports")
    rp.add_argument("runs", nargs="+", type=Path)
    rp.add_argument("--out", type=Path, default=Path("."))
    return p


def resolve_config(args) -> ExperimentConfig:
    """``--config`` wins, then the run directory's echo, then model defaults."""
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be non-negative")
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
    elif args.out is not None and (args.out / "config.json").exists():
        cfg = ExperimentConfig.load(args.out / "config.json")
    else:
        cfg = ExperimentConfig(model=args.model or "sine")
    if args.model is not None and args.model != cfg.model:
        raise ConfigError(f"--model {args.model} conflicts with configured model {cfg.model}")
    return cfg.with_overrides(seed=args.seed, out=args.out, particles=args.particles,
                              bridges=args.bridges, grid=args.grid)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            summary = cmd_report(args.runs, args.out)
            for p in summary["problems"]:
                print(f"skipped {p['run']}: {p['error']}", file=sys.stderr)
            return 0
        cfg = resolve_config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "filter":
            cmd_filter(cfg)
        else:
            cmd_smooth(cfg, args.method)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
