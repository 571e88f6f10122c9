"""Closed-loop trial execution.

Each trial integrates the true state with Euler-Maruyama, draws discrete
observations, runs the filter (EKF, or bootstrap particle filter for the
particle-based controller), replans every step, and collects metrics.

The per-step cycle follows observe -> filter correct -> plan -> apply ->
step -> filter predict, so ``ekf_step`` (predict then correct) is exactly
the composition of the two filter halves across consecutive loop
iterations. Observations use the increment convention: a measurement over a
step of length dt has effective covariance R_o / dt, which is what makes
the discrete filter consistent with the continuous-time noise law.

Collision metrics use the hard obstacle discs on the true trajectory even
though planning uses smooth bumps; realized costs are accumulated on the
true state, with the obstacle penalty tracked separately from the base
(quadratic state + control) cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .controllers import ControllerOutput, ce_mppi, ekf_ilqg, mppi_belief, pipf
from .costs import CostSpec
from .errors import ConfigurationError, NumericalError
from .matching import matching_report
from .models import Obstacle, SystemModel
from .schedule import propagate_schedule

Array = NDArray[np.float64]

CONTROLLER_NAMES = ("mppi-belief", "ce-mppi", "pipf", "ekf-ilqg")


def euler_maruyama_step(
    x: Array, u: Array, model: SystemModel, dt: float, rng: np.random.Generator
) -> Array:
    """x + (f(x) + G(x) u) dt + H xi with xi ~ N(0, I dt)."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(model.control_matrix(x), dtype=float).reshape(model.state_dim, -1)
    xi = rng.standard_normal(model.noise_dim) * np.sqrt(dt)
    return x + (np.asarray(model.drift(x)) + g @ np.asarray(u)) * dt + model.noise_channel @ xi


def observe(x: Array, model: SystemModel, dt: float, rng: np.random.Generator) -> Array:
    """y = c(x) + sigma_o(x) eta / sqrt(dt), the per-step increment average."""
    x = np.asarray(x, dtype=float)
    eta = rng.standard_normal(model.obs_dim)
    return np.asarray(model.obs_map(x)) + model.obs_noise(x) @ eta / np.sqrt(dt)


def ekf_predict(
    mu: Array, sigma: Array, u: Array, model: SystemModel, dt: float
) -> tuple[Array, Array]:
    """Euler prediction of mean and covariance over one step."""
    mu = np.asarray(mu, dtype=float)
    a = np.atleast_2d(np.asarray(model.drift_jacobian(mu), dtype=float))
    g = np.asarray(model.control_matrix(mu), dtype=float).reshape(model.state_dim, -1)
    mu_new = mu + (np.asarray(model.drift(mu)) + g @ np.asarray(u)) * dt
    sigma_new = sigma + (a @ sigma + sigma @ a.T + model.process_cov) * dt
    return mu_new, 0.5 * (sigma_new + sigma_new.T)


def ekf_correct(
    mu: Array, sigma: Array, y: Array, model: SystemModel, dt: float
) -> tuple[Array, Array]:
    """Measurement update with Joseph-form covariance."""
    mu = np.asarray(mu, dtype=float)
    c = np.atleast_2d(np.asarray(model.obs_jacobian(mu), dtype=float))
    r_d = model.obs_cov(mu) / dt
    s_inn = c @ sigma @ c.T + r_d
    try:
        gain = np.linalg.solve(s_inn.T, (sigma @ c.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular") from exc
    mu_new = mu + gain @ (np.asarray(y) - np.asarray(model.obs_map(mu)))
    ikc = np.eye(model.state_dim) - gain @ c
    sigma_new = ikc @ sigma @ ikc.T + gain @ r_d @ gain.T
    return mu_new, 0.5 * (sigma_new + sigma_new.T)


def ekf_step(
    belief: tuple[Array, Array],
    u: Array,
    y: Array,
    model: SystemModel,
    dt: float,
) -> tuple[Array, Array]:
    """Continuous-discrete EKF step: predict over dt, then correct with y."""
    mu, sigma = ekf_predict(belief[0], belief[1], u, model, dt)
    return ekf_correct(mu, sigma, y, model, dt)


# --- bootstrap particle filter -------------------------------------------------


def pf_predict(
    particles: Array, u: Array, model: SystemModel, dt: float, rng: np.random.Generator
) -> Array:
    """Propagate every particle with process noise."""
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    k = particles.shape[0]
    xi = rng.standard_normal((k, model.noise_dim)) * np.sqrt(dt)
    out = particles + np.asarray(model.drift(particles)) * dt + xi @ model.noise_channel.T
    for j in range(k):
        g = np.asarray(model.control_matrix(particles[j]), dtype=float)
        out[j] += g.reshape(model.state_dim, -1) @ np.asarray(u) * dt
    return out

def pf_log_likelihood(particles: Array, y: Array, model: SystemModel, dt: float) -> Array:
    """Per-particle observation log density under the increment convention."""
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    k = particles.shape[0]
    out = np.empty(k)
    y = np.asarray(y, dtype=float)
    for j in range(k):
        r_d = model.obs_cov(particles[j]) / dt
        resid = y - np.asarray(model.obs_map(particles[j]))
        sign, logdet = np.linalg.slogdet(r_d)
        if sign <= 0:
            raise NumericalError("observation covariance is not positive definite")
        out[j] = -0.5 * (
            resid @ np.linalg.solve(r_d, resid) + logdet + y.size * np.log(2.0 * np.pi)
        )
    return out


def systematic_resample(weights: Array, rng: np.random.Generator) -> Array:
    """Systematic resampling indices for normalized weights."""
    n = weights.shape[0]
    positions = (np.arange(n) + rng.uniform()) / n
    return np.searchsorted(np.cumsum(weights), positions).clip(0, n - 1)


# --- trial loop -----------------------------------------------------------------


@dataclass
class TrialResult:
    controller: str
    seed: int
    total_cost: float
    base_cost: float
    obstacle_penalty: float
    collision: bool
    min_clearance: float
    mean_plan_ms: float
    flags: tuple[str, ...] = ()
    x_traj: Array | None = None
    u_traj: Array | None = None
    mu_traj: Array | None = None
    sigma_diag_traj: Array | None = None


def _hard_bump_penalty(x: Array, spec: CostSpec) -> float:
    """Planning bump evaluated on the true state (penalty accounting only)."""
    if not spec.obstacles or spec.w_obs <= 0.0:
        return 0.0
    idx = np.asarray(spec.pos_idx)
    pos = np.asarray(x)[idx]
    total = 0.0
    for obs in spec.obstacles:
        s_inv = 1.0 / (obs.radius * spec.rho) ** 2
        d = pos - np.asarray(obs.center)
        total += spec.w_obs * float(np.exp(-0.5 * s_inv * float(d @ d)))
    return total


def _min_clearance(x: Array, obstacles: tuple[Obstacle, ...], pos_idx) -> float:
    if not obstacles:
        return float("inf")
    pos = np.asarray(x)[np.asarray(pos_idx)]
    return min(float(obs.clearance(pos)) for obs in obstacles)


class _EkfControllers:
    """Receding-horizon adapters for the EKF-filtered controllers."""

    def __init__(self, kind, model, spec, dt, horizon, n_samples, ilqg_max_iter, eps_warn):
        self.kind = kind
        self.model = model
        self.spec = spec
        self.dt = dt
        self.horizon = horizon
        self.n_samples = n_samples
        self.ilqg_max_iter = ilqg_max_iter
        self.eps_warn = eps_warn
        self.eps_star: float | None = None
        self._warm: Array | None = None

    def plan(self, mu: Array, sigma: Array, rng: np.random.Generator) -> ControllerOutput:
        if self.kind == "mppi-belief":
            sched = propagate_schedule(self.model, mu, sigma, self.dt, self.horizon)
            if self.eps_star is None:
                report = matching_report(sched, self.spec.r_control)
                self.eps_star = report.eps_star
                out = mppi_belief(
                    (mu, sigma), sched, self.spec, self.n_samples, rng,
                    eps_star=self.eps_star, eps_warn=self.eps_warn,
                )
            else:
                out = mppi_belief((mu, sigma), sched, self.spec, self.n_samples, rng)
            return out
        if self.kind == "ce-mppi":
            return ce_mppi((mu, sigma), self.model, self.spec, self.n_samples, rng,
                           self.dt, self.horizon)
        if self.kind == "ekf-ilqg":
            out = ekf_ilqg(
                (mu, sigma), self.model, self.spec, self.horizon, self.dt,
                max_iter=self.ilqg_max_iter, rng=rng, u_init=self._warm,
            )
            if out.u_sequence is not None:
                warm = np.roll(out.u_sequence, -1, axis=0)
                warm[-1] = 0.0
                self._warm = warm
            return out
        raise ConfigurationError(f"unknown controller kind {self.kind!r}")


def run_trial(
    config,
    controller_kind: str,
    seed: int,
    record_trajectory: bool = False,
) -> TrialResult:
    """Run one closed-loop trial and collect its metrics.

    The true initial state is sampled from the initial belief. Collision is
    declared when the true position enters any obstacle disc at any step;
    clearance is the minimum signed distance over the trajectory. Controller
    failure flags are propagated into the result, never swallowed.
    """
    from .harness import BenchmarkConfig  # local import to avoid a cycle

    if controller_kind not in CONTROLLER_NAMES:
        raise ConfigurationError(f"unknown controller {controller_kind!r}")
    cfg: BenchmarkConfig = config
    model = cfg.make_model()
    plan_spec = cfg.make_cost_spec(controller_kind)
    metric_spec = cfg.make_metric_spec()
    seed_int = int(seed)
    rng = np.random.default_rng(seed_int)

    dt = cfg.dt
    steps = int(round(cfg.t_trial / dt))
    n = model.state_dim
    mu = np.asarray(cfg.start, dtype=float).copy()
    sigma = cfg.sigma0 * np.eye(n)
    chol0 = np.linalg.cholesky(sigma) if cfg.sigma0 > 0 else np.zeros((n, n))
    x = mu + chol0 @ rng.standard_normal(n)

    use_pf = controller_kind == "pipf"
    particles = None
    pf_weights = None
    controller = None
    if use_pf:
        particles = mu + rng.standard_normal((cfg.pipf_particles, n)) @ chol0.T
        pf_weights = np.full(cfg.pipf_particles, 1.0 / cfg.pipf_particles)
    else:
        controller = _EkfControllers(
            controller_kind, model, plan_spec, dt, cfg.horizon, cfg.n_samples,
            cfg.ilqg_max_iter, cfg.eps_warn,
        )

    flags: list[str] = []
    base_cost = 0.0
    obstacle_penalty = 0.0
    min_clear = _min_clearance(x, metric_spec.obstacles, metric_spec.pos_idx)
    plan_ms: list[float] = []
    xs = [x.copy()] if record_trajectory else None
    us = [] if record_trajectory else None
    mus = [mu.copy()] if record_trajectory else None
    sds = [np.diag(sigma).copy()] if record_trajectory else None
    r_ctrl = np.atleast_2d(metric_spec.r_control)

    for k in range(steps):
        y = observe(x, model, dt, rng)
        if use_pf:
            loglik = pf_log_likelihood(particles, y, model, dt)
            loglik -= loglik.max()
            pf_weights = pf_weights * np.exp(loglik)
            total_w = pf_weights.sum()
            if not np.isfinite(total_w) or total_w <= 1e-300:
                # filter degenerated: reseed the cloud from the EKF belief
                flags.append(f"pf-reinitialized@{k}")
                chol = np.linalg.cholesky(
                    sigma + 1e-12 * np.eye(n)
                )
                particles = mu + rng.standard_normal((cfg.pipf_particles, n)) @ chol.T
                pf_weights = np.full(cfg.pipf_particles, 1.0 / cfg.pipf_particles)
            else:
                pf_weights = pf_weights / total_w
                ess = 1.0 / float(np.sum(pf_weights**2))
                if ess < cfg.pipf_particles / 2.0:
                    idx = systematic_resample(pf_weights, rng)
                    particles = particles[idx]
                    pf_weights = np.full(cfg.pipf_particles, 1.0 / cfg.pipf_particles)
        mu, sigma = ekf_correct(mu, sigma, y, model, dt)

        t0 = time.perf_counter()
        if use_pf:
            out = pipf(
                particles, pf_weights, model, plan_spec,
                cfg.pipf_particles * cfg.pipf_samples_per_particle, rng, dt, cfg.horizon,
            )
        else:
            out = controller.plan(mu, sigma, rng)
        plan_ms.append((time.perf_counter() - t0) * 1e3)
        for flag in out.flags:
            flags.append(f"{flag}@{k}")
        u = np.asarray(out.u, dtype=float)

        ref = metric_spec.reference_at(k)
        d = x - ref
        base_cost += (
            0.5 * float(d @ metric_spec.q_state @ d) + 0.5 * float(u @ r_ctrl @ u)
        ) * dt
        obstacle_penalty += _hard_bump_penalty(x, metric_spec) * dt

        x = euler_maruyama_step(x, u, model, dt, rng)
        min_clear = min(min_clear, _min_clearance(x, metric_spec.obstacles, metric_spec.pos_idx))
        mu, sigma = ekf_predict(mu, sigma, u, model, dt)
        if use_pf:
            particles = pf_predict(particles, u, model, dt, rng)
        if record_trajectory:
            xs.append(x.copy())
            us.append(u.copy())
            mus.append(mu.copy())
            sds.append(np.diag(sigma).copy())

    d = x - metric_spec.x_ref_terminal
    base_cost += 0.5 * float(d @ metric_spec.q_terminal @ d)
    total_cost = base_cost + obstacle_penalty

    return TrialResult(
        controller=controller_kind,
        seed=seed_int,
        total_cost=float(total_cost),
        base_cost=float(base_cost),
        obstacle_penalty=float(obstacle_penalty),
        collision=bool(min_clear < 0.0),
        min_clearance=float(min_clear),
        mean_plan_ms=float(np.mean(plan_ms)) if plan_ms else 0.0,
        flags=tuple(flags),
        x_traj=np.asarray(xs) if record_trajectory else None,
        u_traj=np.asarray(us) if record_trajectory else None,
        mu_traj=np.asarray(mus) if record_trajectory else None,
        sigma_diag_traj=np.asarray(sds) if record_trajectory else None,
    )
