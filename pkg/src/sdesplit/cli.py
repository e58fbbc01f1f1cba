"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration error, 3 too many failed paths,
4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import kernels
from .errors import ConfigurationError, RejectedInputError, SdeSplitError
from .harness import ExperimentConfig, emit_plot_data, emit_report, format_report, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

_BOOL_FLAGS = {"zero_noise", "no_timing"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def build_parser():
    p = argparse.ArgumentParser(
        prog="sdesplit",
        description="Common-noise convergence experiments for direct and iterative SDE splitting schemes.",
    )
    p.add_argument("--config", help="flat key=value file; command-line flags override its values")
    p.add_argument("--problem", default="scalar10", help="scalar10 | vec2x2:weak01|weak001|strong | vecMxM:<m> | coulomb")
    p.add_argument("--schemes", default="em,milstein",
                   help="comma list: em, milstein, milstein_full, ab_split, summative:<N>, iter:<k>, "
                        "coulomb_relax[:<sweeps>,<rule>], coulomb_taylor[:<sweeps>,<rule>]")
    p.add_argument("--dt-list", default="0.1,0.05,0.025", help="comma list of step sizes")
    p.add_argument("--paths", type=int, default=1000, help="Monte-Carlo sample count")
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--reference", default=None,
                   help="exact_linear[:dt_fine] or fine_milstein[:dt_fine] (defaults depend on the problem)")
    p.add_argument("--output", default=None, help="report file (stdout when omitted)")
    p.add_argument("--format", choices=("csv", "json"), default=None, help="defaults to the output suffix, else csv")
    p.add_argument("--dump-noise", default=None, metavar="FILE", help="write sample 0's fine Wiener path as CSV")
    p.add_argument("--zero-noise", action="store_true", help="replace every path by the null driver")
    p.add_argument("--mu0", type=float, default=None)
    p.add_argument("--v0", type=float, default=None)
    p.add_argument("--phi0", type=float, default=None)
    p.add_argument("--sweeps", type=int, default=2, help="fixpoint sweeps for coulomb_* schemes")
    p.add_argument("--quad-rule", choices=("trapezoid", "simpson"), default="trapezoid")
    p.add_argument("--iter-substeps", type=int, default=10, help="sub-steps of the iterative quadratures")
    p.add_argument("--c3-variant", choices=("riemann", "unweighted", "increment_weighted"), default="riemann")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--max-failures", type=float, default=0.1,
                   help="fraction of failed paths per (scheme, dt) above which the exit code is 3")
    p.add_argument("--no-timing", action="store_true", help="skip timing repeats and report runtime 0")
    p.add_argument("--plot-dir", default=None, help="directory for plot-ready CSV files and a plotting script")
    return p


def read_config_file(path):
    """Parse ``key = value`` lines (``#`` comments); keys may use dashes or underscores."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config_file(parser, path):
    known = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in read_config_file(path).items():
        if key not in known or key in ("config", "help"):
            raise ConfigurationError(f"unknown configuration key {key!r} in {path}")
        if key in _BOOL_FLAGS:
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise ConfigurationError(f"{key} expects a boolean, got {value!r}")
            defaults[key] = low in _TRUE
        else:
            # argparse converts string defaults with the option's type
            defaults[key] = value
    parser.set_defaults(**defaults)


def config_from_args(args):
    fmt = args.format
    if fmt is None:
        fmt = "json" if args.output and args.output.lower().endswith(".json") else "csv"
    return ExperimentConfig(
        problem=args.problem,
        schemes=args.schemes,
        dt_list=args.dt_list,
        n_paths=args.paths,
        t_end=args.t_end,
        master_seed=args.seed,
        reference=args.reference,
        output=args.output,
        format=fmt,
        zero_noise=args.zero_noise,
        v0=args.v0,
        mu0=args.mu0,
        phi0=args.phi0,
        sweeps=args.sweeps,
        quad_rule=args.quad_rule,
        iter_substeps=args.iter_substeps,
        c3_variant=args.c3_variant,
        workers=args.workers,
        max_failures=args.max_failures,
        record_timing=not args.no_timing,
        dump_noise=args.dump_noise,
        plot_dir=args.plot_dir,
    )


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    pre, _ = parser.parse_known_args(argv)
    try:
        if pre.config:
            _apply_config_file(parser, pre.config)
        args = parser.parse_args(argv)
        cfg = config_from_args(args)
        result = run_experiment(cfg)
    except (ConfigurationError, RejectedInputError, ValueError) as exc:
        print(f"sdesplit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SdeSplitError as exc:
        print(f"sdesplit: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"sdesplit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if cfg.output:
            emit_report(result, cfg.format, cfg.output)
        else:
            sys.stdout.write(format_report(result, cfg.format))
        if cfg.plot_dir:
            emit_plot_data(result, cfg.plot_dir)
    except OSError as exc:
        print(f"sdesplit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for msg in result.warnings:
        print(f"sdesplit: warning: {msg}", file=sys.stderr)
    print(f"sdesplit: {len(result.reports)} rows, kernels={kernels.BACKEND}", file=sys.stderr)
    if result.failure_exceeded:
        worst = max(result.reports, key=lambda r: r.excluded_paths)
        print(
            f"sdesplit: {worst.excluded_paths}/{cfg.n_paths} paths failed for {worst.scheme} at dt={worst.dt} "
            f"(limit {cfg.max_failures:.0%})",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
