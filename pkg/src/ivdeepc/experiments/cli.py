"""Command-line entry point ``ivdeepc``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from ..controller import VARIANTS
from ..lti_sim import benchmark_system, predictor_form
from .config import FIGURES, figure_config, load_config
from .io import emit, load_manifest
from .runner import run_scenario, summarize
from .verify import run_checks


def _variants(text):
    out = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in out if v not in VARIANTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown variants {bad}; choose from {VARIANTS}")
    return out


def _execute(cfg, out, variants=None, workers=None) -> int:
    records = run_scenario(cfg, variants=variants, workers=workers)
    stats = summarize(records)
    files = emit(records, stats, out, cfg, variants)
    for row in stats:
        where = "" if row.sweep_value is None else f" {cfg.sweep_axis}={row.sweep_value}"
        print(f"{row.scenario}{where} {row.variant:>10}: median {row.median:.6g}  "
              f"[{row.p10:.6g}, {row.p90:.6g}]  n={row.n}  failed={row.n_failed}")
    print(f"wrote {files['records']}, {files['summary']}, {files['manifest']}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.realizations:
        cfg = dataclasses.replace(cfg, n_realizations=args.realizations)
    if args.variants:
        cfg = dataclasses.replace(cfg, variants=args.variants)
    return _execute(cfg, args.out, workers=args.workers)


def cmd_sweep(args) -> int:
    cfg = figure_config(args.figure, n_realizations=args.realizations)
    return _execute(cfg, args.out or f"results/fig{args.figure}", workers=args.workers)


def cmd_rerun(args) -> int:
    cfg, variants = load_manifest(args.manifest)
    return _execute(cfg, args.out, variants=variants, workers=args.workers)


def cmd_verify(args) -> int:
    failed = 0
    for check in run_checks(n_qp=args.qp_problems):
        status = "PASS" if check.passed else "FAIL"
        failed += not check.passed
        print(f"{status}  {check.name}: {check.value:.3e} (threshold {check.threshold:.0e})")
    print(f"{failed} check(s) failed" if failed else "all checks passed")
    return 1 if failed else 0


def cmd_print_system(args) -> int:
    sys_ = benchmark_system()
    pred = predictor_form(sys_)
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        for name in "ABCDK":
            print(f"{name} =\n{getattr(sys_, name)}")
        print(f"A - KC =\n{pred.A_tilde}")
        print(f"eig(A) = {np.linalg.eigvals(sys_.A)}")
        print(f"eig(A - KC) = {np.linalg.eigvals(pred.A_tilde)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ivdeepc", description="IV-based data-enabled predictive control experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", default="results", type=Path)
    run.add_argument("--realizations", type=int)
    run.add_argument("--variants", type=_variants)
    run.add_argument("--workers", type=int)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a preloaded figure reproduction")
    sweep.add_argument("--figure", required=True, choices=FIGURES)
    sweep.add_argument("--out", type=Path)
    sweep.add_argument("--realizations", type=int, default=20)
    sweep.add_argument("--workers", type=int)
    sweep.set_defaults(func=cmd_sweep)

    rerun = sub.add_parser("rerun", help="repeat the runs listed in a manifest")
    rerun.add_argument("--manifest", required=True, type=Path)
    rerun.add_argument("--out", default="results/rerun", type=Path)
    rerun.add_argument("--workers", type=int)
    rerun.set_defaults(func=cmd_rerun)

    verify = sub.add_parser("verify", help="run the numerical self-checks")
    verify.add_argument("--qp-problems", type=int, default=500)
    verify.set_defaults(func=cmd_verify)

    ps = sub.add_parser("print-system", help="print the benchmark system matrices")
    ps.set_defaults(func=cmd_print_system)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
