"""Command-line entry point: ``hypclip <subcommand> [--config PATH] [--seed U64] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .. import geometry as geo
from .config import ConfigError, build_config, load_config_file
from .experiments import RUNNERS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SUBCOMMANDS = {
    "train-classifier": "classify",
    "diagnose-gradients": "diagnose",
    "sweep-r": "sweep-r",
    "sweep-dim": "sweep-dim",
    "attack": "attack",
    "ood": "ood",
    "embed": "embed",
}

GEO_OPS = ("conformal-factor", "mobius-add", "scalar-mul", "exp0", "log0", "exp-at", "log-at",
           "distance", "euclidean-distance", "origin-distance", "gyroline", "angle", "defect")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypclip", description="Clipped hyperbolic networks: geometry and experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("geo", help="evaluate a Poincare-ball operation (12 significant digits)")
    g.add_argument("op", choices=GEO_OPS)
    g.add_argument("--x", type=_vector, help="first point / vector")
    g.add_argument("--y", type=_vector, help="second point / vector")
    g.add_argument("--z", type=_vector, help="third point (angle, defect)")
    g.add_argument("--r", type=float, help="scalar for scalar-mul")
    g.add_argument("--t", type=float, help="gyroline parameter")
    g.add_argument("--c", type=float, default=1.0, help="curvature magnitude (default 1)")

    for name, mode in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {mode} experiment")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=_u64, help="unsigned 64-bit seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
    return parser


def _fmt(value) -> str:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return " ".join(f"{v:.12g}" for v in arr.ravel())


def run_geo(args) -> str:
    def need(*names):
        missing = [n for n in names if getattr(args, n) is None]
        if missing:
            raise ConfigError(f"{args.op} needs --{' --'.join(missing)}")
        return [getattr(args, n) for n in names]

    c = args.c
    if not c > 0:
        raise ConfigError("--c must be positive")
    op = args.op
    if op == "conformal-factor":
        (x,) = need("x")
        return _fmt(geo.conformal_factor(x, c))
    if op == "mobius-add":
        x, y = need("x", "y")
        return _fmt(geo.mobius_add(x, y, c))
    if op == "scalar-mul":
        r, x = need("r", "x")
        return _fmt(geo.mobius_scalar_mul(r, x, c))
    if op == "exp0":
        return _fmt(geo.exp0(need("x")[0], c))
    if op == "log0":
        return _fmt(geo.log0(need("x")[0], c))
    if op == "exp-at":
        x, y = need("x", "y")
        return _fmt(geo.exp_at(x, y, c))
    if op == "log-at":
        x, y = need("x", "y")
        return _fmt(geo.log_at(x, y, c))
    if op == "distance":
        x, y = need("x", "y")
        return _fmt(geo.distance(x, y, c))
    if op == "euclidean-distance":
        x, y = need("x", "y")
        return _fmt(np.linalg.norm(x - y))
    if op == "origin-distance":
        return _fmt(geo.origin_distance(need("x")[0], c))
    if op == "gyroline":
        x, y, t = need("x", "y", "t")
        return _fmt(geo.gyroline(x, y, t, c))
    if op == "angle":
        x, y, z = need("x", "y", "z")
        return _fmt(geo.angle(x, y, z, c))
    x, y, z = need("x", "y", "z")
    d = geo.triangle_defect(x, y, z, c)
    return f"{d.radians:.12g} {d.degrees:.12g} {'degenerate' if d.degenerate else 'ok'}"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "geo":
            print(run_geo(args))
            return EXIT_OK
        mode = SUBCOMMANDS[args.command]
        values = load_config_file(args.config) if args.config else {}
        cfg = build_config(mode, values, seed=args.seed, out=args.out)
        summary = RUNNERS[mode](cfg, cfg.out)
        print(f"{args.command}: wrote results to {cfg.out}")
        del summary
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except geo.BallDomainError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
