"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric or engine error,
4 a reproduction's built-in consistency check failed.
"""

from __future__ import annotations

import argparse
import sys

from . import analytics, taillab
from .config import parse_config
from .errors import ConfigError, NoPositiveRootError, RmbpError, SpecError
from .harness import reproduce, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK_FAILED = 4


def _read_config(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    return parse_config(text)


def _cmd_simulate(args) -> int:
    cfg = _read_config(args.config)
    result = run_experiment(cfg, workers=args.threads)
    print(result.summary.to_text(), end="")
    for path in result.files:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_alpha(args) -> int:
    cfg = _read_config(args.config)
    if cfg.offspring is not None:
        psi = analytics.psi_for(cfg.modulator, means=cfg.offspring.means)
    else:
        psi = analytics.psi_for(cfg.modulator)
    level = 0.0
    if cfg.kind in ("stopped_product", "stopped_branching") and cfg.stop is not None:
        level = getattr(cfg.stop, "log_tail_rate", 0.0)
    try:
        root = analytics.solve_alpha_star(psi, level=level)
    except NoPositiveRootError as exc:
        print("no_positive_root=true")
        print(f"note={exc}")
        return EXIT_OK
    print(f"alpha_star={root.value!r}")
    print(f"psi_slope_at_root={root.psi_slope_at_root!r}")
    print(f"bracket={root.bracket[0]!r},{root.bracket[1]!r}")
    print(f"tolerance={root.tolerance!r}")
    return EXIT_OK


def _cmd_constant(args) -> int:
    cfg = _read_config(args.config)
    if not cfg.constants:
        raise ConfigError("config requests no constants; set analysis.constants",
                          key="analysis.constants")
    result = run_experiment(cfg, workers=args.threads)
    for name in sorted(result.summary.estimates):
        if name.startswith(("constant_", "alpha_star")):
            est = result.summary.estimates[name]
            tail = "exact" if est.exact else f"stderr {est.stderr!r}"
            print(f"{name}={est.value!r} ({tail})")
    return EXIT_OK


def _cmd_tailfit(args) -> int:
    curve = taillab.curve_from_csv(args.csv)
    lo = args.x_lo if args.x_lo is not None else float(curve.grid[0])
    hi = args.x_hi if args.x_hi is not None else float(curve.grid[-1])
    fit = taillab.loglog_slope(curve, lo, hi)
    print(f"slope={fit.slope!r}")
    print(f"stderr={fit.stderr!r}")
    print(f"intercept={fit.intercept!r}")
    print(f"r_squared={fit.r_squared!r}")
    try:
        knee = taillab.double_pareto_fit(curve)
        print(f"knee={knee.knee!r}")
        print(f"slope_left={knee.slope_left!r}")
        print(f"slope_right={knee.slope_right!r}")
        print(f"two_segment={'degenerate' if knee.degenerate else 'distinct'}")
    except taillab.AnalysisError:
        pass
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    report = reproduce(args.preset, full=args.full, seed=args.seed,
                       out_prefix=args.out, workers=args.threads)
    for check in report.checks:
        status = "pass" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
    for path in report.files:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmbp",
        description="simulate reflected/stopped growth processes and analyze "
                    "their power-law tails")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the experiment in a config file")
    sim.add_argument("config")
    sim.add_argument("--threads", type=int, default=None)
    sim.set_defaults(fn=_cmd_simulate)

    alpha = sub.add_parser("alpha", help="analytic tail exponent for a config")
    alpha.add_argument("config")
    alpha.set_defaults(fn=_cmd_alpha)

    const = sub.add_parser("constant", help="asymptotic constants for a config")
    const.add_argument("config")
    const.add_argument("--threads", type=int, default=None)
    const.set_defaults(fn=_cmd_constant)

    tailfit = sub.add_parser("tailfit", help="fit slopes to a ccdf csv")
    tailfit.add_argument("csv")
    tailfit.add_argument("--x-lo", type=float, default=None)
    tailfit.add_argument("--x-hi", type=float, default=None)
    tailfit.set_defaults(fn=_cmd_tailfit)

    rep = sub.add_parser("reproduce", help="run a canonical preset and its checks")
    rep.add_argument("preset")
    rep.add_argument("--full", action="store_true",
                     help="restore the large canonical sample counts")
    rep.add_argument("--seed", type=int, default=1234)
    rep.add_argument("--out", default=None, help="output path prefix")
    rep.add_argument("--threads", type=int, default=None)
    rep.set_defaults(fn=_cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RmbpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
