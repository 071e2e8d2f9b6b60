"""Command-line entry point: ``adaptapg {run,reference,verify,presets}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data
from . import experiment as ex

log = logging.getLogger("adaptapg")

CONFIG_HELP = """\
config file: flat "key = value" lines, '#' starts a comment, lists are comma separated.
keys:
  preset              problem preset (see `adaptapg presets`)
  solvers             subset of: {solvers}
  gammas              restart decay factors, one apg_restart run each
  mu                  strong convexity for apg_known_mu (default: exact value if known)
  max_iters           iteration cap per solver
  gap_tol             stop once f(y_k) - f* <= gap_tol
  out_dir             output directory (trace CSVs, summary.csv, refs/)
  seed                generator seed
  ref_tol             reduced-gradient tolerance certifying the reference f*
  data_dir            directory holding LIBSVM dataset files
  synthetic_fallback  use a generated stand-in when a dataset file is missing
  record_every        write every n-th row to the trace CSVs
  timing              fill the wall_ns column (makes output non-reproducible)
""".format(solvers=", ".join(ex.SOLVER_NAMES))


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="adaptapg",
        description="Accelerated proximal gradient with online strong-convexity estimates.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=CONFIG_HELP,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file",
                         formatter_class=argparse.RawDescriptionHelpFormatter,
                         epilog=CONFIG_HELP)
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--gap-tol", type=float)
    run.add_argument("--out-dir")
    run.add_argument("--gamma", type=float, action="append",
                     help="restart decay factor (repeatable)")
    run.add_argument("--solver", action="append", choices=ex.SOLVER_NAMES,
                     help="solver to run (repeatable)")
    run.add_argument("--synthetic-fallback", action="store_true", default=None)
    run.add_argument("--data-dir")
    run.add_argument("--timing", action="store_true", default=None,
                     help="record wall-clock time per row")

    ref = sub.add_parser("reference", help="compute (or read cached) reference f*")
    ref.add_argument("preset")
    ref.add_argument("--tol", type=float, default=1e-8)
    ref.add_argument("--seed", type=int, default=0)
    ref.add_argument("--max-iters", type=int, default=10**6)
    ref.add_argument("--out-dir", default="out")
    ref.add_argument("--synthetic-fallback", action="store_true")
    ref.add_argument("--data-dir")

    ver = sub.add_parser("verify", help="run a bound-checker battery")
    ver.add_argument("--battery", choices=sorted(ex.BATTERIES), default="spectral")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--preset", default="synthetic-lasso",
                     help="problem for the composite battery")
    ver.add_argument("--out-dir", help="write report.csv here")
    ver.add_argument("--synthetic-fallback", action="store_true")
    ver.add_argument("--data-dir")

    sub.add_parser("presets", help="list problem presets")
    return p


def _cmd_run(args) -> int:
    cfg = ex.load_config(
        args.config,
        seed=args.seed,
        max_iters=args.max_iters,
        gap_tol=args.gap_tol,
        out_dir=args.out_dir,
        gammas=tuple(args.gamma) if args.gamma else None,
        solvers=tuple(args.solver) if args.solver else None,
        synthetic_fallback=args.synthetic_fallback,
        data_dir=args.data_dir,
        timing=args.timing,
    )
    res = ex.run_experiment(cfg)
    if res.reference is not None:
        log.info("reference f* = %r (%s)", res.reference.f_star, res.reference.solver)
    w = max(len(r[0]) for r in res.summary)
    print(f"{'solver':<{w}}  {'status':<10} iters  to1e-4  to1e-8  to1e-12")
    for row in res.summary:
        label, status, iters, t4, t8, t12, _, err = row
        print(f"{label:<{w}}  {status:<10} {iters:>5}  {t4 or '-':>6}  {t8 or '-':>6}  "
              f"{t12 or '-':>7}" + (f"  [{err}]" if err else ""))
    print(f"wrote {len(res.files)} files to {cfg.out_dir}")
    return 0 if all(not r[-1] for r in res.summary) else 1


def _cmd_reference(args) -> int:
    problem = data.preset(args.preset, data_dir=args.data_dir,
                          synthetic_fallback=args.synthetic_fallback, seed=args.seed)
    rec = ex.compute_reference(problem, args.tol, cache_dir=Path(args.out_dir) / "refs",
                               max_iters=args.max_iters)
    print(",".join(ex.ReferenceRecord.FIELDS))
    print(rec.to_line())
    return 0


def _cmd_verify(args) -> int:
    kwargs = {"seed": args.seed}
    if args.battery == "composite":
        kwargs.update(preset=args.preset, data_dir=args.data_dir,
                      synthetic_fallback=args.synthetic_fallback)
        if args.out_dir:
            kwargs["cache_dir"] = Path(args.out_dir) / "refs"
    report = ex.verify(args.battery, **kwargs)
    print(report.summary())
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        report.to_csv(Path(args.out_dir) / "report.csv")
    return 0 if report.ok else 1


def _cmd_presets(args) -> int:
    for name, spec in data.PRESETS.items():
        params = ", ".join(f"{k}={v}" for k, v in spec.items())
        print(f"{name:<20} {params}")
    return 0


COMMANDS = {"run": _cmd_run, "reference": _cmd_reference, "verify": _cmd_verify,
            "presets": _cmd_presets}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (ValueError, KeyError, FileNotFoundError, ex.ReferenceError) as exc:
        print(f"adaptapg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
