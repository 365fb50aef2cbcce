"""Fit the norm-bound constant over a range of perturbation sizes.

Prints one row per ``eps`` with ``|H - H_0|_C2``, ``|g - id|_C1``, the
bracket and the fitted constant, then the max/min spread of the constant.

    python scripts/epsilon_sweep.py --family cubic --eps 1e-1 1e-2 1e-3 1e-4
"""

import argparse

from hamsuspend import ExperimentConfig
from hamsuspend.pipeline import build_system, norms_for


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="cubic", choices=["linear-shear", "cubic", "random-poly"])
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3, 1e-4])
    ap.add_argument("--rho", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"{'eps':>8} {'H-H0 C2':>11} {'g-id C1':>11} {'g-id C3':>11} {'bracket':>11} {'c':>11}")
    constants = []
    for eps in args.eps:
        cfg = ExperimentConfig(family=args.family, eps=eps, rho=args.rho, seed=args.seed)
        rep = norms_for(cfg, build_system(cfg))
        c = rep.constant
        print(f"{eps:8.1e} {rep.h_minus_h0_c2:11.4e} {rep.g_minus_id_c1:11.4e} {rep.g_minus_id_c3:11.4e} "
              f"{rep.bracket:11.4e} {c if c is None else format(c, '11.4e')}")
        if c is not None:
            constants.append(c)
    if constants:
        print(f"max/min c = {max(constants) / min(constants):.4g}")


if __name__ == "__main__":
    main()
