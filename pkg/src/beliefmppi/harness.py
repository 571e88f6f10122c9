"""Benchmark orchestration: config, Monte Carlo aggregation, sweeps, reports.

Seeds are derived deterministically per (master seed, controller id, trial
index), so a benchmark is reproducible bit for bit regardless of how many
worker processes execute the trials. Wall-clock planning times are the one
non-reproducible quantity; they are therefore written to ``timing.json``
and the trial log, never to ``report.json``, which is byte-stable for a
fixed config and seed.

Cost semantics: the "cost" column of the aggregated report is the realized
base cost on the true state (quadratic state + control), excluding obstacle
penalties, which are reported separately; total = base + penalty per trial.
Whether a published-style cost column includes penalties is ambiguous, so
both are always present.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .costs import CostSpec
from .errors import ConfigurationError
from .matching import matching_report
from .models import LightDarkParams, Obstacle, light_dark_sigma, make_light_dark
from .schedule import propagate_schedule
from .simulator import CONTROLLER_NAMES, TrialResult, run_trial

CONTROLLER_IDS = {name: i for i, name in enumerate(CONTROLLER_NAMES)}

# Reference targets for the light-dark study; reported alongside measured
# values for orientation, never gated (they depend on unstated cost shapes
# and hardware).
REFERENCE_RESULTS = {
    "eps_star": 0.79,
    "table": {
        "ekf-ilqg": {"cost": 46.1, "cost_std": 6.2, "collision_pct": 24.5, "time_ms": 148.0},
        "ce-mppi": {"cost": 50.5, "cost_std": 6.2, "collision_pct": 23.0, "time_ms": 13.0},
        "pipf": {"cost": 47.6, "cost_std": 5.5, "collision_pct": 18.0, "time_ms": 296.0},
        "mppi-belief": {"cost": 56.5, "cost_std": 5.2, "collision_pct": 0.0, "time_ms": 18.0},
    },
}


@dataclass(frozen=True)
class BenchmarkConfig:
    """Full description of a benchmark run; serializes to a single JSON file.

    Start, goal, trial duration, initial covariance, and the cost weights
    are toolkit defaults (configurable), chosen so the obstacle corridor
    lies between start and goal and the low-noise region is reachable by a
    detour.
    """

    # light-dark domain
    x_light: float = 5.0
    noise_floor: float = 0.1
    sigma_w: float = 0.30
    obstacles: tuple = ((3.0, 1.0, 0.65), (3.0, -1.0, 0.65))
    # discretization and sampling
    dt: float = 0.1
    horizon: int = 30
    n_samples: int = 500
    lam: float = 1.0
    pipf_particles: int = 50
    pipf_samples_per_particle: int = 200
    theta: float = 1.0
    ilqg_max_iter: int = 50
    # task layout
    start: tuple = (-2.0, 0.0, 0.0, 0.0)
    goal: tuple = (8.0, 0.0, 0.0, 0.0)
    t_trial: float = 12.0
    sigma0: float = 0.5
    # cost weights
    q_pos: float = 1.0
    q_vel: float = 0.1
    r_ctrl: float = 0.5
    q_pos_term: float = 10.0
    q_vel_term: float = 1.0
    w_obs: float = 2500.0
    rho: float = 1.0
    # benchmark protocol
    trials: int = 200
    seed: int = 42
    eps_warn: float = 1.0
    wobs_grid: tuple = (100.0, 500.0, 2500.0, 10000.0)
    theta_grid: tuple = (0.0, 0.5, 1.0, 2.0, 5.0)

    def validate(self) -> None:
        positive = {
            "dt": self.dt, "t_trial": self.t_trial, "lam": self.lam, "rho": self.rho,
            "noise_floor": self.noise_floor, "r_ctrl": self.r_ctrl,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        non_negative = {
            "sigma_w": self.sigma_w, "theta": self.theta, "w_obs": self.w_obs,
            "sigma0": self.sigma0, "q_pos": self.q_pos, "q_vel": self.q_vel,
            "q_pos_term": self.q_pos_term, "q_vel_term": self.q_vel_term,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {value}")
        at_least_one = {
            "horizon": self.horizon, "n_samples": self.n_samples, "trials": self.trials,
            "pipf_particles": self.pipf_particles,
            "pipf_samples_per_particle": self.pipf_samples_per_particle,
            "ilqg_max_iter": self.ilqg_max_iter,
        }
        for name, value in at_least_one.items():
            if value < 1:
                raise ConfigurationError(f"{name} must be at least 1, got {value}")
        for name, grid in (("wobs_grid", self.wobs_grid), ("theta_grid", self.theta_grid)):
            if len(grid) == 0:
                raise ConfigurationError(f"{name} must be non-empty")
            if list(grid) != sorted(grid):
                raise ConfigurationError(f"{name} must be sorted ascending")
        if len(self.start) != 4 or len(self.goal) != 4:
            raise ConfigurationError("start and goal must be 4-vectors")
        for obs in self.obstacles:
            if len(obs) != 3 or obs[2] <= 0:
                raise ConfigurationError("each obstacle must be (cx, cy, radius>0)")

    # --- factories ---------------------------------------------------------

    def domain_params(self) -> LightDarkParams:
        return LightDarkParams(
            x_light=self.x_light,
            noise_floor=self.noise_floor,
            sigma_w=self.sigma_w,
            obstacles=self.obstacle_objects(),
        )

    def obstacle_objects(self) -> tuple[Obstacle, ...]:
        return tuple(Obstacle(center=(o[0], o[1]), radius=o[2]) for o in self.obstacles)

    def make_model(self):
        return make_light_dark(self.domain_params())

    def _spec(self, theta: float) -> CostSpec:
        return CostSpec(
            q_state=np.diag([self.q_pos, self.q_pos, self.q_vel, self.q_vel]),
            x_ref=np.asarray(self.goal, dtype=float),
            r_control=self.r_ctrl * np.eye(2),
            q_terminal=np.diag(
                [self.q_pos_term, self.q_pos_term, self.q_vel_term, self.q_vel_term]
            ),
            x_ref_terminal=np.asarray(self.goal, dtype=float),
            obstacles=self.obstacle_objects(),
            w_obs=self.w_obs,
            rho=self.rho,
            theta=theta,
            lam=self.lam,
        )

    def make_cost_spec(self, controller: str) -> CostSpec:
        """Planning cost for a controller; only the belief-space planner is
        risk-sensitive, the baselines are certainty equivalent (theta 0)."""
        return self._spec(self.theta if controller == "mppi-belief" else 0.0)

    def make_metric_spec(self) -> CostSpec:
        return self._spec(0.0)

    # --- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obstacles"] = [list(o) for o in self.obstacles]
        for name in ("start", "goal", "wobs_grid", "theta_grid"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for name in ("start", "goal", "wobs_grid", "theta_grid"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        if "obstacles" in kwargs:
            kwargs["obstacles"] = tuple(tuple(o) for o in kwargs["obstacles"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str) -> "BenchmarkConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


def trial_seed(master: int, controller: str, index: int) -> int:
    """Deterministic per-trial seed from (master, controller id, trial index)."""
    ss = np.random.SeedSequence([int(master), CONTROLLER_IDS[controller], int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def _trial_task(args) -> TrialResult:
    cfg_dict, controller, seed, record = args
    cfg = BenchmarkConfig.from_dict(cfg_dict)
    return run_trial(cfg, controller, seed, record_trajectory=record)


@dataclass
class BenchmarkResults:
    config: BenchmarkConfig
    trials: dict[str, list[TrialResult]]
    eps_star: float
    elapsed_s: float = 0.0

    def aggregates(self) -> dict[str, dict]:
        return {name: aggregate_trials(res) for name, res in self.trials.items()}


def aggregate_trials(results: list[TrialResult]) -> dict:
    """Order-stable summary statistics over one controller's trials."""
    base = np.array([r.base_cost for r in results])
    total = np.array([r.total_cost for r in results])
    clear = np.array([r.min_clearance for r in results])
    coll = np.array([r.collision for r in results], dtype=bool)
    plan = np.array([r.mean_plan_ms for r in results])
    flags: dict[str, int] = {}
    for r in results:
        for f in r.flags:
            key = f.split("@")[0]
            flags[key] = flags.get(key, 0) + 1
    return {
        "trials": len(results),
        "mean_cost": float(np.mean(base)),
        "std_cost": float(np.std(base)),
        "mean_total_cost": float(np.mean(total)),
        "std_total_cost": float(np.std(total)),
        "mean_obstacle_penalty": float(np.mean(total - base)),
        "collision_rate_pct": float(100.0 * np.mean(coll)),
        "mean_clearance_m": float(np.mean(clear)),
        "mean_plan_ms": float(np.mean(plan)),
        "flag_counts": flags,
    }


def compute_eps_star(cfg: BenchmarkConfig) -> float:
    """Matching residual of the schedule from the initial belief."""
    model = cfg.make_model()
    sched = propagate_schedule(
        model, np.asarray(cfg.start, dtype=float), cfg.sigma0 * np.eye(4), cfg.dt, cfg.horizon
    )
    return matching_report(sched, cfg.make_metric_spec().r_control).eps_star


def run_benchmark(
    cfg: BenchmarkConfig,
    controllers: tuple[str, ...] = CONTROLLER_NAMES,
    threads: int = 1,
    keep_trajectories: int = 50,
    trials: int | None = None,
) -> BenchmarkResults:
    """Run seeded trials for each controller and collect the results.

    A trial is recorded with its trajectory for the first
    ``keep_trajectories`` indices (plot data); aggregation is independent of
    execution order because results are stored by trial index.
    """
    cfg.validate()
    for name in controllers:
        if name not in CONTROLLER_NAMES:
            raise ConfigurationError(f"unknown controller {name!r}")
    n_trials = cfg.trials if trials is None else trials
    t0 = time.perf_counter()
    tasks = []
    for name in controllers:
        for i in range(n_trials):
            tasks.append(
                (cfg.to_dict(), name, trial_seed(cfg.seed, name, i), i < keep_trajectories)
            )
    if threads <= 1:
        outputs = [_trial_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_trial_task, tasks, chunksize=4))
    by_controller: dict[str, list[TrialResult]] = {name: [] for name in controllers}
    for (cfg_d, name, seed, rec), result in zip(tasks, outputs):
        by_controller[name].append(result)
    return BenchmarkResults(
        config=cfg,
        trials=by_controller,
        eps_star=compute_eps_star(cfg),
        elapsed_s=time.perf_counter() - t0,
    )


@dataclass
class SweepResults:
    """Aggregates per controller at each value of a swept parameter."""

    param: str
    values: list[float]
    aggregates: dict[str, list[dict]]
    config: BenchmarkConfig


def sweep_obstacle_weight(
    cfg: BenchmarkConfig,
    grid: tuple[float, ...] | None = None,
    controllers: tuple[str, ...] = CONTROLLER_NAMES,
    threads: int = 1,
    trials: int | None = None,
) -> SweepResults:
    """Benchmark every controller at each planning obstacle weight."""
    values = list(grid if grid is not None else cfg.wobs_grid)
    agg: dict[str, list[dict]] = {name: [] for name in controllers}
    for w in values:
        point = replace(cfg, w_obs=float(w))
        res = run_benchmark(point, controllers, threads, keep_trajectories=0, trials=trials)
        for name in controllers:
            agg[name].append(aggregate_trials(res.trials[name]))
    return SweepResults(param="w_obs", values=values, aggregates=agg, config=cfg)


def sweep_theta(
    cfg: BenchmarkConfig,
    grid: tuple[float, ...] | None = None,
    threads: int = 1,
    trials: int | None = None,
) -> SweepResults:
    """Benchmark the belief-space controller across risk-sensitivity values."""
    values = list(grid if grid is not None else cfg.theta_grid)
    agg: dict[str, list[dict]] = {"mppi-belief": []}
    for theta in values:
        point = replace(cfg, theta=float(theta))
        res = run_benchmark(
            point, ("mppi-belief",), threads, keep_trajectories=0, trials=trials
        )
        agg["mppi-belief"].append(aggregate_trials(res.trials["mppi-belief"]))
    return SweepResults(param="theta", values=values, aggregates=agg, config=cfg)


# --- persistence ----------------------------------------------------------------


def _dump_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_payload(results: BenchmarkResults) -> dict:
    """Deterministic report content (no wall-clock quantities)."""
    controllers = {}
    for name, agg in results.aggregates().items():
        entry = dict(agg)
        entry.pop("mean_plan_ms")  # wall clock lives in timing.json
        controllers[name] = entry
    return {
        "config": results.config.to_dict(),
        "seed": results.config.seed,
        "controllers": controllers,
        "matching": {"eps_star": results.eps_star},
        "reference": REFERENCE_RESULTS,
        "notes": {
            "cost": "realized true-state cost; mean_cost excludes obstacle penalties "
                    "(mean_total_cost includes them)",
            "reference": "reference values are reported for orientation only and are "
                         "not reproduction targets",
            "timing": "wall-clock planning times are in timing.json",
        },
    }


def timing_payload(results: BenchmarkResults) -> dict:
    return {
        "elapsed_s": results.elapsed_s,
        "controllers": {
            name: {
                "mean_plan_ms": agg["mean_plan_ms"],
                "std_plan_ms": float(np.std([r.mean_plan_ms for r in results.trials[name]])),
            }
            for name, agg in results.aggregates().items()
        },
    }


def trial_records(results: BenchmarkResults) -> list[dict]:
    records = []
    for name in results.trials:
        for i, r in enumerate(results.trials[name]):
            records.append(
                {
                    "controller": name,
                    "trial": i,
                    "seed": r.seed,
                    "total_cost": r.total_cost,
                    "base_cost": r.base_cost,
                    "obstacle_penalty": r.obstacle_penalty,
                    "collision": r.collision,
                    "min_clearance": r.min_clearance,
                    "mean_plan_ms": r.mean_plan_ms,
                    "flags": list(r.flags),
                }
            )
    return records


def write_outputs(results: BenchmarkResults, out_dir: str) -> dict[str, str]:
    """Write report.json, timing.json and trials.jsonl; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.json"),
        "timing": os.path.join(out_dir, "timing.json"),
        "trials": os.path.join(out_dir, "trials.jsonl"),
    }
    _dump_json(report_payload(results), paths["report"])
    _dump_json(timing_payload(results), paths["timing"])
    with open(paths["trials"], "w") as fh:
        for rec in trial_records(results):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return paths


def aggregates_from_jsonl(path: str) -> dict[str, dict]:
    """Recompute the aggregate statistics from a persisted trial log."""
    rows: dict[str, list[dict]] = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            rows.setdefault(rec["controller"], []).append(rec)
    out = {}
    for name, recs in rows.items():
        recs.sort(key=lambda r: r["trial"])
        fake = [
            TrialResult(
                controller=name,
                seed=r["seed"],
                total_cost=r["total_cost"],
                base_cost=r["base_cost"],
                obstacle_penalty=r["obstacle_penalty"],
                collision=r["collision"],
                min_clearance=r["min_clearance"],
                mean_plan_ms=r["mean_plan_ms"],
                flags=tuple(r["flags"]),
            )
            for r in recs
        ]
        out[name] = aggregate_trials(fake)
    return out


# --- plot data -------------------------------------------------------------------


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def emit_plot_data(
    results: BenchmarkResults | SweepResults | None,
    out_dir: str,
    render: bool = True,
    max_trajectories: int = 50,
) -> list[str]:
    """Write the figure data tables (and, by default, rendered figures).

    Benchmark results produce ``trajectories.csv`` (one row per step of up
    to ``max_trajectories`` recorded trials per controller) and
    ``noise_field.csv``; sweep results produce one
    ``sweep_<param>_<controller>.csv`` curve per controller. Columns are
    fixed; empty inputs still produce the headers.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []

    if isinstance(results, SweepResults):
        header = [
            results.param, "trials", "mean_cost", "std_cost", "mean_total_cost",
            "collision_rate_pct", "mean_clearance_m",
        ]
        for name, points in results.aggregates.items():
            rows = [
                [
                    results.values[i], p["trials"], repr(p["mean_cost"]),
                    repr(p["std_cost"]), repr(p["mean_total_cost"]),
                    repr(p["collision_rate_pct"]), repr(p["mean_clearance_m"]),
                ]
                for i, p in enumerate(points)
            ]
            path = os.path.join(out_dir, f"sweep_{results.param}_{name}.csv")
            _write_csv(path, header, rows)
            written.append(path)
        if render:
            from . import plots

            path = os.path.join(out_dir, f"sweep_{results.param}.png")
            plots.render_sweep(results, path)
            written.append(path)
        return written

    traj_header = [
        "controller", "trial", "step", "t", "px", "py", "vx", "vy",
        "mu_px", "mu_py", "u_ax", "u_ay",
    ]
    traj_rows: list[list] = []
    cfg = results.config if results is not None else None
    if results is not None:
        for name, trials in results.trials.items():
            kept = 0
            for i, r in enumerate(trials):
                if r.x_traj is None or kept >= max_trajectories:
                    continue
                kept += 1
                steps = r.u_traj.shape[0]
                for k in range(steps):
                    traj_rows.append(
                        [
                            name, i, k, repr(round(k * cfg.dt, 10)),
                            repr(r.x_traj[k, 0]), repr(r.x_traj[k, 1]),
                            repr(r.x_traj[k, 2]), repr(r.x_traj[k, 3]),
                            repr(r.mu_traj[k, 0]), repr(r.mu_traj[k, 1]),
                            repr(r.u_traj[k, 0]), repr(r.u_traj[k, 1]),
                        ]
                    )
    traj_path = os.path.join(out_dir, "trajectories.csv")
    _write_csv(traj_path, traj_header, traj_rows)
    written.append(traj_path)

    noise_path = os.path.join(out_dir, "noise_field.csv")
    noise_rows: list[list] = []
    if cfg is not None:
        params = cfg.domain_params()
        grid = np.linspace(cfg.start[0] - 2.0, cfg.goal[0] + 2.0, 141)
        noise_rows = [
            [repr(float(px)), repr(float(light_dark_sigma(px, params)))] for px in grid
        ]
    _write_csv(noise_path, ["px", "sigma_o"], noise_rows)
    written.append(noise_path)

    if render and results is not None and traj_rows:
        from . import plots

        path = os.path.join(out_dir, "trajectories.png")
        plots.render_trajectories(results, path, max_trajectories=max_trajectories)
        written.append(path)
    return written
