"""Grid sweeps of the cheap baselines on the test season.

Shows how the rule-based threshold/dose and the norm-ball radius trade
irrigation against violations.  DDRMPC is excluded because one run of it
takes about as long as the whole sweep.

    python3 scripts/sweep_baselines.py --out runs/sweeps
"""

import argparse
from pathlib import Path

from ddrmpc.config import RunConfig
from ddrmpc.sim import SimulationPlan, grid_sweep, write_sweep_csv

GRIDS = {
    "rule_based": {"threshold": [30.0, 31.0, 32.0, 33.0, 34.0, 35.0], "dose": [2.0, 3.0, 5.0]},
    "norm_rmpc": {"omega": [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]},
    "open_loop": {"a": [0.05, 0.07, 0.09], "b": [5.0, 6.4, 8.0]},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/case_study.json")
    ap.add_argument("--out", default="runs/sweeps")
    args = ap.parse_args()
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = SimulationPlan(cfg.test.load(cfg.hargreaves), cfg.controllers, cfg.dynamics,
                          cfg.constraints, cfg.hargreaves, None, cfg.x0, cfg.solver_tol)
    for kind, grid in GRIDS.items():
        rows = grid_sweep(kind, grid, plan)
        write_sweep_csv(rows, out / f"sweep_{kind}.csv")
        print(f"\n{kind}")
        for r in rows:
            params = ", ".join(f"{k}={r[k]:g}" for k in grid)
            print(f"  {params:<28} irrigation {r['total_irrigation']:8.1f} mm  "
                  f"violations {r['violation_pct']:5.2f}%  {r['error']}")


if __name__ == "__main__":
    main()
