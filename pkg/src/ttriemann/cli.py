"""Command-line interface.

Subcommands: ``complete`` (run a configured experiment), ``check`` (oracle
verification suite), ``condest`` (Hessian conditioning of a stored point
against stored data), ``plotdata`` (tidy per-metric series from a run
directory).  Exit codes: 0 success, 1 validation error, 2 failed checks.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import io as ttio
from .checks import check_suite
from .completion import CompletionProblem, condition_estimate
from .harness import ExperimentConfig, emit_plot_data, run_experiment
from .tangent import prepare_base


def _cmd_complete(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    out = run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    print(f"run written to {out}")
    return 0


def _cmd_check(args) -> int:
    results = check_suite(args.level)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 2 if failed else 0


def _cmd_condest(args) -> int:
    X = ttio.load_tt(args.tensor)
    data = ttio.load_sparse(args.data)
    if data.n != X.n:
        raise ValueError("tensor and data shapes differ")
    Xp, fac = prepare_base(X)
    est = condition_estimate(Xp, CompletionProblem(data), factors=fac,
                             max_iter=args.max_iter)
    print(json.dumps({
        "lam_max": est.lam_max, "lam_min_pos": est.lam_min_pos,
        "kappa": est.kappa, "iterations": est.iterations, "dim": est.dim,
        "converged": est.converged, "residual": est.residual,
    }, indent=2))
    return 0


def _cmd_plotdata(args) -> int:
    for path in emit_plot_data(args.run_dir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttriemann",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("complete", help="run a completion experiment")
    c.add_argument("--config", required=True, help="experiment JSON file")
    c.add_argument("--jobs", type=int, default=1,
                   help="trials to run in parallel")
    c.add_argument("--out", default=None, help="output directory")
    c.set_defaults(fn=_cmd_complete)

    c = sub.add_parser("check", help="run the oracle verification suite")
    c.add_argument("--level", choices=("fast", "full"), default="fast")
    c.set_defaults(fn=_cmd_check)

    c = sub.add_parser("condest", help="Hessian conditioning at a point")
    c.add_argument("--tensor", required=True, help="TTZ1 file")
    c.add_argument("--data", required=True, help="SPT1 file")
    c.add_argument("--max-iter", type=int, default=200)
    c.set_defaults(fn=_cmd_condest)

    c = sub.add_parser("plotdata", help="emit tidy per-metric plot data")
    c.add_argument("run_dir")
    c.set_defaults(fn=_cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
