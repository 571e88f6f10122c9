"""Command line interface.

Subcommands:

  run            single verbose trial (optional trajectory/schedule dumps)
  bench          full multi-controller benchmark -> report.json, timing.json,
                 trials.jsonl, plot CSVs and rendered figures
  sweep-wobs     obstacle-weight sweep
  sweep-theta    risk-sensitivity sweep (belief-space controller only)
  matching-check per-step matching diagnostics as CSV
  config         print the effective configuration (--dump)
  plot-data      re-emit plot CSVs/figures from a bench output directory

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import harness
from .errors import ConfigurationError, NumericalError
from .matching import matching_report
from .schedule import propagate_schedule
from .simulator import CONTROLLER_NAMES, run_trial


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    parser.add_argument("--trials", type=int, metavar="N", help="trial count override")
    parser.add_argument(
        "--controller",
        choices=list(CONTROLLER_NAMES) + ["all"],
        default="all",
        help="controller selection",
    )
    parser.add_argument("--out", metavar="DIR", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1, metavar="N", help="worker processes")


def _load_config(args) -> harness.BenchmarkConfig:
    cfg = (
        harness.BenchmarkConfig.from_json(args.config)
        if getattr(args, "config", None)
        else harness.BenchmarkConfig()
    )
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _controllers(args) -> tuple[str, ...]:
    if args.controller == "all":
        return CONTROLLER_NAMES
    return (args.controller,)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beliefmppi",
        description="Path integral control in Gaussian belief space: "
                    "light-dark navigation benchmark toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one verbose trial")
    _add_common(p_run)
    p_run.add_argument("--trial-index", type=int, default=0, help="trial index for seeding")
    p_run.add_argument("--dump-traj", metavar="PATH", help="write trajectory CSV")
    p_run.add_argument(
        "--dump-schedule", metavar="PATH", help="write initial belief schedule CSV"
    )

    p_bench = sub.add_parser("bench", help="run the full benchmark")
    _add_common(p_bench)
    p_bench.add_argument("--no-render", action="store_true", help="skip figure rendering")

    p_wobs = sub.add_parser("sweep-wobs", help="sweep the obstacle penalty weight")
    _add_common(p_wobs)
    p_wobs.add_argument("--no-render", action="store_true")

    p_theta = sub.add_parser("sweep-theta", help="sweep the risk sensitivity")
    _add_common(p_theta)
    p_theta.add_argument("--no-render", action="store_true")

    p_match = sub.add_parser("matching-check", help="per-step matching diagnostics")
    _add_common(p_match)
    p_match.add_argument("--csv", metavar="PATH", help="write the CSV here instead of stdout")

    p_cfg = sub.add_parser("config", help="inspect configuration")
    p_cfg.add_argument("--config", metavar="PATH", help="JSON config file")
    p_cfg.add_argument("--dump", action="store_true", help="print the effective config JSON")

    p_plot = sub.add_parser("plot-data", help="re-render figures from bench outputs")
    p_plot.add_argument("--out", metavar="DIR", default="out", help="bench output directory")
    p_plot.add_argument("--no-render", action="store_true")

    return parser


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    controller = args.controller if args.controller != "all" else "mppi-belief"
    seed = harness.trial_seed(cfg.seed, controller, args.trial_index)
    if args.dump_schedule:
        sched = propagate_schedule(
            cfg.make_model(), np.asarray(cfg.start), cfg.sigma0 * np.eye(4),
            cfg.dt, cfg.horizon,
        )
        sched.dump_csv(args.dump_schedule)
        print(f"schedule written to {args.dump_schedule}")
    result = run_trial(cfg, controller, seed, record_trajectory=bool(args.dump_traj))
    print(f"controller        : {result.controller}")
    print(f"seed              : {result.seed}")
    print(f"total cost        : {result.total_cost:.4f}")
    print(f"base cost         : {result.base_cost:.4f}")
    print(f"obstacle penalty  : {result.obstacle_penalty:.4f}")
    print(f"collision         : {result.collision}")
    print(f"min clearance [m] : {result.min_clearance:.4f}")
    print(f"mean plan [ms]    : {result.mean_plan_ms:.2f}")
    if result.flags:
        print(f"flags             : {', '.join(result.flags)}")
    if args.dump_traj:
        rows = ["t," + ",".join(
            ["px", "py", "vx", "vy", "mu_px", "mu_py", "mu_vx", "mu_vy",
             "var_px", "var_py", "var_vx", "var_vy", "u_ax", "u_ay"]
        )]
        steps = result.u_traj.shape[0]
        for k in range(steps):
            vals = (
                [k * cfg.dt]
                + list(result.x_traj[k])
                + list(result.mu_traj[k])
                + list(result.sigma_diag_traj[k])
                + list(result.u_traj[k])
            )
            rows.append(",".join(repr(float(v)) for v in vals))
        with open(args.dump_traj, "w") as fh:
            fh.write("\n".join(rows) + "\n")
        print(f"trajectory written to {args.dump_traj}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    results = harness.run_benchmark(cfg, _controllers(args), threads=args.threads)
    paths = harness.write_outputs(results, args.out)
    harness.emit_plot_data(results, args.out, render=not args.no_render)
    agg = results.aggregates()
    print(f"{'controller':<12} {'cost':>8} {'coll%':>6} {'clear':>6} {'ms':>8}")
    for name, a in agg.items():
        print(
            f"{name:<12} {a['mean_cost']:>8.2f} {a['collision_rate_pct']:>6.1f} "
            f"{a['mean_clearance_m']:>6.2f} {a['mean_plan_ms']:>8.1f}"
        )
    print(f"matching eps_star = {results.eps_star:.3f}")
    print(f"report: {paths['report']}")
    return 0


def _cmd_sweep(args, param: str) -> int:
    cfg = _load_config(args)
    if param == "w_obs":
        sweep = harness.sweep_obstacle_weight(
            cfg, controllers=_controllers(args), threads=args.threads
        )
    else:
        sweep = harness.sweep_theta(cfg, threads=args.threads)
    paths = harness.emit_plot_data(sweep, args.out, render=not args.no_render)
    for name, points in sweep.aggregates.items():
        for value, p in zip(sweep.values, points):
            print(
                f"{name:<12} {param}={value:<8g} cost={p['mean_cost']:.2f} "
                f"coll={p['collision_rate_pct']:.1f}% clear={p['mean_clearance_m']:.2f}"
            )
    print("wrote: " + ", ".join(paths))
    return 0


def _cmd_matching(args) -> int:
    cfg = _load_config(args)
    sched = propagate_schedule(
        cfg.make_model(), np.asarray(cfg.start), cfg.sigma0 * np.eye(4), cfg.dt, cfg.horizon
    )
    report = matching_report(sched, cfg.make_metric_spec().r_control)
    rows = report.to_csv_rows()
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("\n".join(rows) + "\n")
        print(f"matching report written to {args.csv}")
    else:
        print("\n".join(rows))
    print(f"eps_star = {report.eps_star:.6f}")
    return 0


def _cmd_config(args) -> int:
    cfg = (
        harness.BenchmarkConfig.from_json(args.config)
        if args.config
        else harness.BenchmarkConfig()
    )
    cfg.validate()
    if args.dump:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    else:
        print("use --dump to print the effective configuration as JSON")
    return 0


def _cmd_plot_data(args) -> int:
    import csv as _csv
    import os

    from . import plots

    traj = os.path.join(args.out, "trajectories.csv")
    if not os.path.exists(traj):
        raise ConfigurationError(f"no trajectories.csv under {args.out}; run bench first")
    if args.no_render:
        print("nothing to do (rendering disabled)")
        return 0
    # rebuild the minimal structures the renderers need from the CSVs
    by_key: dict[tuple[str, int], list[list[float]]] = {}
    with open(traj) as fh:
        for row in _csv.DictReader(fh):
            key = (row["controller"], int(row["trial"]))
            by_key.setdefault(key, []).append(
                [float(row["px"]), float(row["py"]), float(row["vx"]), float(row["vy"])]
            )
    report_path = os.path.join(args.out, "report.json")
    if os.path.exists(report_path):
        with open(report_path) as fh:
            cfg = harness.BenchmarkConfig.from_dict(json.load(fh)["config"])
    else:
        cfg = harness.BenchmarkConfig()

    from .simulator import TrialResult

    trials: dict[str, list[TrialResult]] = {}
    for (name, idx), rows in sorted(by_key.items()):
        x_traj = np.asarray(rows)
        pos = x_traj[:, :2]
        clear = min(
            float(np.min(np.linalg.norm(pos - np.asarray(o.center), axis=1) - o.radius))
            for o in cfg.obstacle_objects()
        )
        trials.setdefault(name, []).append(
            TrialResult(
                controller=name, seed=0, total_cost=0.0, base_cost=0.0,
                obstacle_penalty=0.0, collision=clear < 0.0, min_clearance=clear,
                mean_plan_ms=0.0, x_traj=x_traj,
            )
        )
    results = harness.BenchmarkResults(config=cfg, trials=trials, eps_star=0.0)
    out_png = os.path.join(args.out, "trajectories.png")
    plots.render_trajectories(results, out_png)
    print(f"rendered {out_png}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "sweep-wobs":
            return _cmd_sweep(args, "w_obs")
        if args.command == "sweep-theta":
            return _cmd_sweep(args, "theta")
        if args.command == "matching-check":
            return _cmd_matching(args)
        if args.command == "config":
            return _cmd_config(args)
        if args.command == "plot-data":
            return _cmd_plot_data(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
