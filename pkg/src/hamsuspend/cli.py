"""Command-line driver: ``python -m hamsuspend <command> [options]``.

Commands
--------
suspend   build the suspension, check the section map, write CSV/JSON artifacts
sweep     norm and residual table over the sweep lists of the config
verify    deterministic invariant suite; writes verify_report.json
norms     print the norm report as ``name value`` lines
demo      small linear-shear run printing a few section-map evaluations

The exit status is 0 exactly when the run passes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, StageError
from .pipeline import FAIL, run_norms, run_suspension, run_sweep, run_verify


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file (defaults apply to missing keys)")
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out_dir)")
    common.add_argument("--seed", type=int, help="random seed override")
    common.add_argument("--tol", type=float, help="integrator tolerance override")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    parser = argparse.ArgumentParser(prog="hamsuspend", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("suspend", "build and check the suspension, write artifacts"),
        ("sweep", "run the sweep lists and write sweep.csv"),
        ("verify", "run the invariant suite"),
        ("norms", "print the norm report"),
        ("demo", "small linear-shear demonstration"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(
        seed=args.seed, tol=args.tol, out_dir=None if args.out is None else str(args.out)
    ).validate()


def _say(args, text: str, force: bool = False):
    if force or not args.quiet:
        print(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"[config/load] {exc}", file=sys.stderr)
        return 2

    if args.command == "suspend":
        report = run_suspension(cfg)
    elif args.command == "verify":
        report = run_verify(cfg)
    elif args.command == "sweep":
        try:
            rows = run_sweep(cfg)
        except ConfigError as exc:
            print(f"[cli_pipeline/run_sweep] {exc}", file=sys.stderr)
            return 2
        failed = [r for r in rows if r["status"] == FAIL]
        for r in rows:
            _say(args, f"eps={r['eps']:g} rho={r['rho']:g} nu={r['nu']:g} {r['status']} "
                       f"constant={r['constant']} {r['error']}".rstrip())
        _say(args, f"wrote {Path(cfg.out_dir) / 'sweep.csv'}")
        return 1 if failed else 0
    elif args.command == "norms":
        try:
            norms = run_norms(cfg)
        except StageError as exc:
            print(str(exc), file=sys.stderr)
            return 1
        _say(args, norms.to_text().rstrip())
        return 0
    else:
        return _demo(cfg, args)

    if report.passed:
        _say(args, report.summary())
        return 0
    print(report.summary(), file=sys.stderr)
    return 1


def _demo(cfg: ExperimentConfig, args) -> int:
    from .flow import time_one_section_map
    from .pipeline import build_system

    demo_cfg = cfg.with_overrides(family="linear-shear", eps=0.1)
    S = build_system(demo_cfg)
    pts = np.array([[1.0, 1.0], [0.5, -0.25], [0.0, 0.3]])
    pts = np.hstack([pts, np.zeros((len(pts), 2 * demo_cfg.half_dim - 2))])
    worst = 0.0
    for rec in time_one_section_map(S, pts, demo_cfg.tol):
        worst = max(worst, rec.residual)
        _say(args, f"{np.array2string(rec.input, precision=4)} -> {np.array2string(rec.output, precision=10)} "
                   f"residual={rec.residual:.2e} excursion={rec.excursion:.3e}")
    ok = worst <= 1e-6
    _say(args, "demo: PASS" if ok else "demo: FAIL", force=not ok)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
