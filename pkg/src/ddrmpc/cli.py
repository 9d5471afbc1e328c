"""Command-line entry point: ``ddrmpc {generate,train,simulate,sweep,verify,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from datetime import timedelta
from pathlib import Path

from .config import RunConfig
from .sim import (
    MetricsReport,
    SimulationPlan,
    grid_sweep,
    metrics_report,
    run_closed_loop,
    write_sweep_csv,
    write_traces_csv,
)
from .uncertainty import LearnedSets, fit_uncertainty_sets
from .weather import build_error_windows, write_csv

log = logging.getLogger("ddrmpc")


def _config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def train_sets(cfg: RunConfig) -> LearnedSets:
    records = cfg.train.load(cfg.hargreaves)
    ds = build_error_windows(records, cfg.dynamics, cfg.hargreaves)
    log.info("training on %d windows (%d skipped)", len(ds), ds.skipped)
    return fit_uncertainty_sets(ds, cfg.p_max, cfg.budget, cfg.svc, cfg.split, cfg.seed,
                                period=timedelta(hours=cfg.dynamics.period_hours))


def cmd_generate(args) -> int:
    cfg = _config(args)
    src = cfg.test if args.which == "test" else cfg.train
    records = src.load(cfg.hargreaves)
    write_csv(records, args.csv)
    print(f"wrote {len(records)} records to {args.csv}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    sets = train_sets(cfg)
    path = _outdir(args, cfg) / "sets.json"
    sets.save(path)
    print(json.dumps(sets.report, indent=2, default=str))
    print(f"saved sets to {path}")
    return 0


def build_plan(cfg: RunConfig, sets: LearnedSets | None) -> SimulationPlan:
    needs_sets = any(c.kind == "ddrmpc" for c in cfg.controllers.values())
    if needs_sets and sets is None:
        sets = train_sets(cfg)
    return SimulationPlan(cfg.test.load(cfg.hargreaves), cfg.controllers, cfg.dynamics,
                          cfg.constraints, cfg.hargreaves, sets, cfg.x0, cfg.solver_tol)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    sets = LearnedSets.load(args.sets) if args.sets else None
    plan = build_plan(cfg, sets)
    if plan.sets is not None and not args.sets:
        plan.sets.save(out / "sets.json")
    traces = run_closed_loop(plan)
    report = metrics_report(traces, cfg.constraints.x_min)
    write_traces_csv(traces, out / "traces.csv")
    (out / "metrics.json").write_text(report.to_json())
    (out / "tables.md").write_text(report.to_markdown())
    report.write_csv(out / "tables.csv")
    print(report.to_markdown())
    failed = [k for k, m in report.controllers.items() if m.error]
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = json.loads(args.grid)
    sets = LearnedSets.load(args.sets) if args.sets else None
    if args.kind == "ddrmpc" and sets is None:
        sets = train_sets(cfg)
    # the sweep replaces the roster cell by cell; the plan only carries the setting
    plan = SimulationPlan(cfg.test.load(cfg.hargreaves), cfg.controllers, cfg.dynamics,
                          cfg.constraints, cfg.hargreaves, sets, cfg.x0, cfg.solver_tol)
    rows = grid_sweep(args.kind, grid, plan)
    path = _outdir(args, cfg) / f"sweep_{args.kind}.csv"
    write_sweep_csv(rows, path)
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_verify(args) -> int:
    root = Path(__file__).resolve().parents[2]
    target = root / "tests" / ("test_acceptance.py" if args.acceptance else "")
    cmd = [sys.executable, "-m", "pytest", str(target), "-q"] + (["-s"] if args.acceptance else [])
    return subprocess.call(cmd, cwd=root)


def cmd_report(args) -> int:
    report = MetricsReport.from_dict(json.loads(Path(args.metrics).read_text()))
    md = report.to_markdown()
    if args.csv:
        report.write_csv(args.csv)
    if args.markdown:
        Path(args.markdown).write_text(md)
    print(md)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddrmpc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration (defaults built in)")
        sp.add_argument("--out", help="output directory (overrides the config)")

    g = sub.add_parser("generate", help="write the synthetic weather series to CSV")
    common(g)
    g.add_argument("--which", choices=("train", "test"), default="test")
    g.add_argument("--csv", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit and calibrate the uncertainty sets")
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="closed-loop run of every configured controller")
    common(s)
    s.add_argument("--sets", help="pre-trained sets JSON (trained on the fly if omitted)")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="grid sweep of one controller family")
    common(w)
    w.add_argument("--kind", required=True)
    w.add_argument("--grid", required=True, help='JSON, e.g. {"threshold": [31, 33], "dose": [2, 3]}')
    w.add_argument("--sets")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run the test suite")
    v.add_argument("--acceptance", action="store_true", help="only the acceptance criteria")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="render metrics.json as tables")
    r.add_argument("metrics")
    r.add_argument("--csv")
    r.add_argument("--markdown")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
