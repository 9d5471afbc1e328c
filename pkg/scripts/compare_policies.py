"""Optimal cost of the lifted (GADF) versus the plain affine (ADF) policy.

For random learned sets and forecasts at several horizons, solves both
robust programs and reports the relative cost reduction and program sizes.

    python3 scripts/compare_policies.py --instances 20
"""

import argparse
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from ddrmpc.dynamics import ConstraintSet, WaterBalanceParams, build_stacked
from ddrmpc.reform import assemble_adf_program, assemble_gadf_program

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
import instances  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--horizons", type=int, nargs="+", default=[2, 4, 6, 8])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    rng = np.random.default_rng(args.seed)
    cons = ConstraintSet()
    print(f"{'H':>3} {'mean gain %':>12} {'max gain %':>11} {'vars':>7} {'rows':>7} "
          f"{'solve s':>8}")
    for H in args.horizons:
        dyn = build_stacked(WaterBalanceParams(horizon_steps=H))
        gains, sizes, times = [], [], []
        for _ in range(args.instances):
            sets = instances.learned_sets(rng, H=H, n=20 * H)
            phat = np.where(rng.random(H) < 0.4, rng.uniform(0, 15, H), 0.0)
            # states near the bound so that both policies must irrigate
            v = phat - rng.uniform(1.0, 3.0, H)
            x0 = float(rng.uniform(29, 33))
            xs = sets.conditional(phat)
            a = assemble_adf_program(dyn, cons, sets.eta, xs, x0, v, moments=sets.moments)
            g = assemble_gadf_program(dyn, cons, sets.eta, xs, x0, v, moments=sets.moments)
            sa = a.solve()
            t0 = time.perf_counter()
            sg = g.solve()
            times.append(time.perf_counter() - t0)
            if not (sa.ok and sg.ok) or sa.objective < 1e-6:
                continue
            gains.append(100 * (sa.objective - sg.objective) / max(abs(sa.objective), 1e-12))
            sizes.append((g.n_variables, g.n_constraints))
        if not gains:
            print(f"{H:>3} no instance needed irrigation")
            continue
        nv, nc = np.mean(sizes, axis=0)
        print(f"{H:>3} {np.mean(gains):>12.2f} {np.max(gains):>11.2f} {nv:>7.0f} {nc:>7.0f} "
              f"{np.mean(times):>8.3f}")


if __name__ == "__main__":
    main()
