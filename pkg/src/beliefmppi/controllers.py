"""Sampling-based and trajectory-optimization controllers.

``mppi_belief`` samples uncontrolled belief-mean rollouts driven by the
scheduled innovation diffusion, weights them by exponentiated path cost,
and maps the weighted first noise increment through the control channel:

    u0 = M0 @ sum_i w_i eps0_i / dt,
    M0 = R^-1 G0^T (G0 R^-1 G0^T)^+ L0.

The pseudoinverse restricts the noise score to range(D0), which keeps the
extraction well posed for underactuated systems. ``ce_mppi`` is the
certainty-equivalent baseline (process-noise rollouts of the mean,
covariance-blind cost), ``pipf`` runs the same machinery per particle of a
bootstrap filter, and ``ekf_ilqg`` is an iterative LQG trajectory optimizer
on the filter mean.

Rollout sampling is vectorized over samples; a fixed generator therefore
yields identical results independent of any outer parallelism.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from . import _kernels
from .costs import CostSpec, reduced_running_cost, reduced_terminal_cost
from .errors import ConfigurationError
from .models import SystemModel
from .schedule import BeliefSchedule, psd_factor

Array = NDArray[np.float64]

logger = logging.getLogger(__name__)


@dataclass
class Rollout:
    """One sampled belief-mean trajectory with its noise draws and path cost."""

    noise: list[Array]
    mean_traj: Array
    path_cost: float
    weight: float


@dataclass
class ControllerOutput:
    u: Array
    ess: float | None
    diagnostics: dict
    degenerate: bool = False
    flags: tuple[str, ...] = ()
    u_sequence: Array | None = None
    rollouts: list[Rollout] | None = None


def normalized_weights(path_costs: Array, lam: float) -> tuple[Array, dict]:
    """Exponentiated-cost importance weights, stabilized by a min-cost shift.

    w_i = exp(-(S_i - min_j S_j) / lam) leaves the normalized weights
    unchanged while guaranteeing the best sample has weight one, so the
    normalization never underflows.
    """
    s = np.asarray(path_costs, dtype=float)
    shifted = s - s.min()
    w = np.exp(-shifted / lam)
    wt = w / w.sum()
    ess = 1.0 / float(np.sum(wt**2))
    entropy = -float(np.sum(np.where(wt > 0, wt * np.log(np.maximum(wt, 1e-300)), 0.0)))
    info = {
        "min_cost": float(s.min()),
        "max_cost": float(s.max()),
        "ess": ess,
        "weight_entropy": entropy,
    }
    return wt, info


def control_projection(g0: Array, r: Array, l0: Array) -> Array:
    """M0 = R^-1 G0^T (G0 R^-1 G0^T)^+ L0, the noise-to-control map."""
    g0 = np.atleast_2d(np.asarray(g0, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    rinv_gt = np.linalg.solve(r, g0.T)
    grg = g0 @ rinv_gt
    grg = 0.5 * (grg + grg.T)
    pinv = np.linalg.pinv(grg, rcond=1e-12, hermitian=True)
    return rinv_gt @ pinv @ np.asarray(l0, dtype=float)


def _sample_rollouts(
    model: SystemModel,
    starts: Array,
    factor_at: Callable[[int], Array],
    horizon: int,
    dt: float,
    rng: np.random.Generator,
    running_cost: Callable[[int, Array], Array],
    terminal_cost: Callable[[Array], Array],
    record: bool = False,
):
    """Roll uncontrolled means forward and accumulate path costs.

    mu_{k+1} = mu_k + f(mu_k) dt + L_k eps_k with eps_k ~ N(0, I dt);
    S = sum_k q_k(mu_k) dt + phi(mu_H).
    """
    mus = np.array(starts, dtype=float)
    n_samples = mus.shape[0]
    costs = np.zeros(n_samples)
    sqdt = np.sqrt(dt)
    eps0 = np.zeros((n_samples, 0))
    trajs = [mus.copy()] if record else None
    noises: list[Array] | None = [] if record else None
    for k in range(horizon):
        costs += np.asarray(running_cost(k, mus), dtype=float) * dt
        l_k = factor_at(k)
        eps = rng.standard_normal((n_samples, l_k.shape[1])) * sqdt
        if k == 0:
            eps0 = eps
        mus = mus + np.asarray(model.drift(mus)) * dt + eps @ l_k.T
        if record:
            trajs.append(mus.copy())
            noises.append(eps)
    costs += np.asarray(terminal_cost(mus), dtype=float)
    return costs, eps0, trajs, noises


def _belief_path_costs(
    sched: BeliefSchedule,
    spec: CostSpec,
    starts: Array,
    rng: np.random.Generator,
) -> tuple[Array, Array]:
    """Path costs and first noise draws for belief-mean rollouts.

    Uses the compiled kernel when the model and cost allow it; otherwise the
    reference engine. Both consume the generator identically.
    """
    model = sched.model
    horizon, dt = sched.horizon, sched.dt
    if _kernels.belief_kernel_ok(model, spec):
        n_samples = starts.shape[0]
        n = model.state_dim
        sqdt = np.sqrt(dt)
        ranks = np.asarray(sched.ranks[:horizon], dtype=np.int64)
        rmax = max(1, int(ranks.max()))
        eps = np.zeros((horizon, n_samples, rmax))
        for k in range(horizon):
            r_k = int(ranks[k])
            if r_k:
                eps[k, :, :r_k] = rng.standard_normal((n_samples, r_k)) * sqdt
        l_pads = np.zeros((horizon, n, rmax))
        for k in range(horizon):
            r_k = int(ranks[k])
            if r_k:
                l_pads[k, :, :r_k] = sched.factors[k]
        tab = _kernels.belief_tables(spec, sched.sigmas)
        idx = spec.pos_idx
        pos0 = int(idx[0]) if len(idx) > 0 else 0
        pos1 = int(idx[1]) if len(idx) > 1 else 0
        costs = _kernels._belief_rollout(
            np.ascontiguousarray(starts),
            eps,
            ranks,
            np.ascontiguousarray(model.drift_matrix),
            l_pads,
            dt,
            np.ascontiguousarray(np.atleast_2d(spec.q_state)),
            np.ascontiguousarray(spec.x_ref),
            float(spec.theta),
            tab["trace_c"],
            tab["qsq"],
            tab["var_c"],
            tab["bumps1"],
            tab["bumps2"],
            pos0,
            pos1,
            np.ascontiguousarray(np.atleast_2d(spec.q_terminal)),
            np.ascontiguousarray(spec.x_ref_terminal),
            tab["trace_t"],
            tab["qsq_t"],
            tab["var_t"],
        )
        return costs, eps[0, :, : int(ranks[0])].copy()
    costs, eps0, _, _ = _sample_rollouts(
        model,
        starts,
        lambda k: sched.factors[k],
        horizon,
        dt,
        rng,
        lambda k, mus: reduced_running_cost(mus, sched.sigmas[k], spec, k),
        lambda mus: reduced_terminal_cost(mus, sched.sigmas[-1], spec),
    )
    return costs, eps0


def _ce_path_costs(
    model: SystemModel,
    spec: CostSpec,
    starts: Array,
    l_q: Array,
    horizon: int,
    dt: float,
    rng: np.random.Generator,
) -> tuple[Array, Array]:
    """Path costs and first noise draws for covariance-blind rollouts."""
    if _kernels.ce_kernel_ok(model, spec):
        n_samples = starts.shape[0]
        eps = rng.standard_normal((horizon, n_samples, l_q.shape[1])) * np.sqrt(dt)
        costs = _kernels._ce_rollout(
            np.ascontiguousarray(starts),
            eps,
            np.ascontiguousarray(model.drift_matrix),
            np.ascontiguousarray(l_q),
            dt,
            np.ascontiguousarray(np.atleast_2d(spec.q_state)),
            np.ascontiguousarray(spec.x_ref),
            np.ascontiguousarray(np.atleast_2d(spec.q_terminal)),
            np.ascontiguousarray(spec.x_ref_terminal),
            _kernels.ce_obstacle_rows(spec),
            spec.terminal_obstacles,
        )
        return costs, eps[0].copy()
    costs, eps0, _, _ = _sample_rollouts(
        model,
        starts,
        lambda k: l_q,
        horizon,
        dt,
        rng,
        lambda k, mus: reduced_running_cost(mus, None, spec, k),
        lambda mus: reduced_terminal_cost(mus, None, spec),
    )
    return costs, eps0


def mppi_belief(
    belief: tuple[Array, Array],
    sched: BeliefSchedule,
    spec: CostSpec,
    n_samples: int,
    rng: np.random.Generator,
    eps_star: float | None = None,
    eps_warn: float = 1.0,
    record_rollouts: bool = False,
) -> ControllerOutput:
    """Belief-space path integral control step from the current belief.

    Samples ``n_samples`` uncontrolled belief-mean rollouts through the
    scheduled diffusion factors and returns the first-step control. A
    matching residual above ``eps_warn`` logs a warning (the controller
    still runs; it is then an approximation). A rank-zero first diffusion
    returns zero control with a degeneracy flag.
    """
    if n_samples < 1:
        raise ConfigurationError("need at least one sample")
    mu0 = np.asarray(belief[0], dtype=float)
    ell = sched.model.control_dim
    dt = sched.dt
    if eps_star is not None and eps_star > eps_warn:
        logger.warning(
            "matching residual %.3g exceeds %.3g; belief-space path integral "
            "control is approximate for this schedule",
            eps_star,
            eps_warn,
        )
    if sched.ranks[0] == 0:
        return ControllerOutput(
            u=np.zeros(ell),
            ess=None,
            diagnostics={"reason": "rank(D_0) = 0"},
            degenerate=True,
            flags=("no-innovation-channel",),
        )
    m0 = control_projection(sched.control_mats[0], spec.r_control, sched.factors[0])
    starts = np.tile(mu0, (n_samples, 1))
    if record_rollouts:
        costs, eps0, trajs, noises = _sample_rollouts(
            sched.model,
            starts,
            lambda k: sched.factors[k],
            sched.horizon,
            dt,
            rng,
            lambda k, mus: reduced_running_cost(mus, sched.sigmas[k], spec, k),
            lambda mus: reduced_terminal_cost(mus, sched.sigmas[-1], spec),
            record=True,
        )
    else:
        costs, eps0 = _belief_path_costs(sched, spec, starts, rng)
        trajs, noises = None, None
    wt, info = normalized_weights(costs, spec.lam)
    u0 = m0 @ (wt @ eps0) / dt
    rollouts = None
    if record_rollouts:
        stacked = np.stack(trajs, axis=1)  # (N, H+1, n)
        rollouts = [
            Rollout(
                noise=[noises[k][i] for k in range(sched.horizon)],
                mean_traj=stacked[i],
                path_cost=float(costs[i]),
                weight=float(np.exp(-(costs[i] - info["min_cost"]) / spec.lam)),
            )
            for i in range(n_samples)
        ]
    return ControllerOutput(u=u0, ess=info["ess"], diagnostics=info, rollouts=rollouts)


def _particle_mppi(
    particles: Array,
    particle_weights: Array,
    model: SystemModel,
    spec: CostSpec,
    samples_per_particle: int,
    rng: np.random.Generator,
    dt: float,
    horizon: int,
) -> ControllerOutput:
    """Certainty-equivalent path integral step from a weighted particle set.

    Process-noise-driven rollouts (diffusion Q in place of the innovation
    diffusion), covariance-blind cost, same weighting and extraction as the
    belief-space controller; per-particle controls are combined with the
    particle weights.
    """
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    k_particles = particles.shape[0]
    pw = np.asarray(particle_weights, dtype=float)
    pw = pw / pw.sum()
    ell = model.control_dim
    l_q, r_q = psd_factor(model.process_cov)
    if r_q == 0:
        return ControllerOutput(
            u=np.zeros(ell),
            ess=None,
            diagnostics={"reason": "rank(Q) = 0"},
            degenerate=True,
            flags=("no-process-noise-channel",),
        )
    starts = np.repeat(particles, samples_per_particle, axis=0)
    costs, eps0 = _ce_path_costs(model, spec, starts, l_q, horizon, dt, rng)
    costs2 = costs.reshape(k_particles, samples_per_particle)
    shifted = costs2 - costs2.min(axis=1, keepdims=True)
    w = np.exp(-shifted / spec.lam)
    wt = w / w.sum(axis=1, keepdims=True)
    eps0r = eps0.reshape(k_particles, samples_per_particle, r_q)
    tilts = np.einsum("kl,klr->kr", wt, eps0r)
    u = np.zeros(ell)
    for j in range(k_particles):
        m0 = control_projection(model.control_matrix(particles[j]), spec.r_control, l_q)
        u = u + pw[j] * (m0 @ tilts[j] / dt)
    combined = (pw[:, None] * wt).ravel()
    info = {
        "min_cost": float(costs.min()),
        "max_cost": float(costs.max()),
        "ess": 1.0 / float(np.sum(combined**2)),
        "weight_entropy": -float(
            np.sum(np.where(combined > 0, combined * np.log(np.maximum(combined, 1e-300)), 0.0))
        ),
    }
    return ControllerOutput(u=u, ess=info["ess"], diagnostics=info)


def ce_mppi(
    belief: tuple[Array, Array],
    model: SystemModel,
    spec: CostSpec,
    n_samples: int,
    rng: np.random.Generator,
    dt: float,
    horizon: int,
) -> ControllerOutput:
    """Certainty-equivalent path integral control on the belief mean."""
    if n_samples < 1:
        raise ConfigurationError("need at least one sample")
    mu0 = np.asarray(belief[0], dtype=float)
    return _particle_mppi(mu0[None, :], np.ones(1), model, spec, n_samples, rng, dt, horizon)


def pipf(
    particles: Array,
    particle_weights: Array,
    model: SystemModel,
    spec: CostSpec,
    n_total: int,
    rng: np.random.Generator,
    dt: float,
    horizon: int,
) -> ControllerOutput:
    """Particle-filter path integral baseline: per-particle CE rollouts.

    Splits the total rollout budget evenly over the particles and combines
    the per-particle controls with the filter weights. The bootstrap filter
    itself (predict, reweight, resample) lives in the simulator loop.
    """
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    k_particles = particles.shape[0]
    if k_particles < 1:
        raise ConfigurationError("need at least one particle")
    samples_per_particle = n_total // k_particles
    if samples_per_particle < 1:
        raise ConfigurationError("rollout budget smaller than the particle count")
    return _particle_mppi(
        particles, particle_weights, model, spec, samples_per_particle, rng, dt, horizon
    )


# --- iterative LQG baseline ---------------------------------------------------


def _ce_state_value(
    x: Array, q: Array, x_ref: Array, spec: CostSpec, with_obstacles: bool
) -> float:
    """Value-only certainty-equivalent state cost (forward-pass fast path)."""
    d = x - x_ref
    val = 0.5 * float(d @ q @ d)
    if with_obstacles and spec.obstacles and spec.w_obs > 0.0:
        idx = np.asarray(spec.pos_idx)
        pos = x[idx]
        for obs in spec.obstacles:
            s_inv = 1.0 / (obs.radius * spec.rho) ** 2
            dp = pos - np.asarray(obs.center)
            val += spec.w_obs * float(np.exp(-0.5 * s_inv * float(dp @ dp)))
    return val


def _ce_state_cost_derivs(
    x: Array, q: Array, x_ref: Array, spec: CostSpec, with_obstacles: bool
) -> tuple[float, Array, Array]:
    """Value, gradient and Hessian of the certainty-equivalent state cost."""
    n = x.shape[0]
    d = x - x_ref
    val = 0.5 * float(d @ q @ d)
    grad = q @ d
    hess = q.copy()
    if with_obstacles and spec.obstacles and spec.w_obs > 0.0:
        idx = np.asarray(spec.pos_idx)
        for obs in spec.obstacles:
            s_inv = np.eye(idx.size) / (obs.radius * spec.rho) ** 2
            dp = x[idx] - np.asarray(obs.center)
            z = s_inv @ dp
            b = spec.w_obs * float(np.exp(-0.5 * dp @ z))
            val += b
            grad_full = np.zeros(n)
            grad_full[idx] = -b * z
            grad = grad + grad_full
            hess_full = np.zeros((n, n))
            hess_full[np.ix_(idx, idx)] = b * (np.outer(z, z) - s_inv)
            hess = hess + hess_full
    return val, grad, hess


def ekf_ilqg(
    belief: tuple[Array, Array],
    model: SystemModel,
    spec: CostSpec,
    horizon: int,
    dt: float,
    max_iter: int = 50,
    rng: np.random.Generator | None = None,
    u_init: Array | None = None,
    conv_tol: float = 1e-6,
) -> ControllerOutput:
    """Iterative LQG trajectory optimization on the filter mean.

    Forward pass rolls the deterministic mean dynamics; backward pass
    quadratizes the certainty-equivalent cost and linearizes the dynamics,
    with a Levenberg-style regularization ladder on the control Hessian
    (factors of 10 up to 1e6) and a backtracking line search that accepts
    steps reducing the actual cost. Returns the first control of the best
    trajectory found; ladder exhaustion is flagged, never raised.
    """
    del rng  # deterministic optimizer; accepted for interface uniformity
    mu0 = np.asarray(belief[0], dtype=float)
    n, ell = model.state_dim, model.control_dim
    us = np.zeros((horizon, ell)) if u_init is None else np.array(u_init, dtype=float)
    if us.shape != (horizon, ell):
        raise ConfigurationError(f"warm start has shape {us.shape}, expected {(horizon, ell)}")
    r = np.atleast_2d(spec.r_control)
    eye_ell = np.eye(ell)
    eye_n = np.eye(n)

    def stage_value(x: Array, k: int) -> float:
        return _ce_state_value(x, spec.q_state, spec.reference_at(k), spec, True)

    def terminal_value(x: Array) -> float:
        return _ce_state_value(
            x, spec.q_terminal, spec.x_ref_terminal, spec, spec.terminal_obstacles
        )

    def forward(
        xs_ref: Array | None,
        us_ref: Array,
        ks: Array | None = None,
        kmats: Array | None = None,
        alpha: float = 1.0,
    ) -> tuple[Array, Array, float]:
        xs_new = np.empty((horizon + 1, n))
        us_new = np.empty((horizon, ell))
        xs_new[0] = mu0
        total = 0.0
        for k in range(horizon):
            x = xs_new[k]
            if ks is None:
                u = us_ref[k]
            else:
                u = us_ref[k] + alpha * ks[k] + kmats[k] @ (x - xs_ref[k])
            us_new[k] = u
            total += (stage_value(x, k) + 0.5 * float(u @ r @ u)) * dt
            g = np.asarray(model.control_matrix(x), dtype=float).reshape(n, ell)
            xs_new[k + 1] = x + (np.asarray(model.drift(x)) + g @ u) * dt
        return xs_new, us_new, total + terminal_value(xs_new[horizon])

    xs, us, cost = forward(None, us)
    best_us, best_cost = us.copy(), cost
    reg = 0.0
    flags: list[str] = []
    iterations = 0
    exhausted = False

    while iterations < max_iter and not exhausted:
        iterations += 1

        # backward pass; raise reg until every control Hessian factors
        while True:
            _, v_x, v_xx = _ce_state_cost_derivs(
                xs[horizon], spec.q_terminal, spec.x_ref_terminal, spec, spec.terminal_obstacles
            )
            ks = np.empty((horizon, ell))
            kmats = np.empty((horizon, ell, n))
            expected = 0.0
            ok = True
            for k in range(horizon - 1, -1, -1):
                x, u = xs[k], us[k]
                _, c_x, c_xx = _ce_state_cost_derivs(
                    x, spec.q_state, spec.reference_at(k), spec, True
                )
                a = np.atleast_2d(np.asarray(model.drift_jacobian(x), dtype=float))
                g = np.asarray(model.control_matrix(x), dtype=float).reshape(n, ell)
                a_d = eye_n + a * dt
                b_d = g * dt
                q_x = c_x * dt + a_d.T @ v_x
                q_u = (r @ u) * dt + b_d.T @ v_x
                q_xx = c_xx * dt + a_d.T @ v_xx @ a_d
                q_uu = r * dt + b_d.T @ v_xx @ b_d + reg * eye_ell
                q_ux = b_d.T @ v_xx @ a_d
                try:
                    chol = np.linalg.cholesky(0.5 * (q_uu + q_uu.T))
                except np.linalg.LinAlgError:
                    ok = False
                    break
                rhs = np.column_stack([q_u, q_ux])
                sol = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
                ks[k] = -sol[:, 0]
                kmats[k] = -sol[:, 1:]
                expected += -float(ks[k] @ q_u) - 0.5 * float(ks[k] @ q_uu @ ks[k])
                v_x = q_x + kmats[k].T @ q_uu @ ks[k] + kmats[k].T @ q_u + q_ux.T @ ks[k]
                v_xx = q_xx + kmats[k].T @ q_uu @ kmats[k] + kmats[k].T @ q_ux + q_ux.T @ kmats[k]
                v_xx = 0.5 * (v_xx + v_xx.T)
            if ok:
                break
            reg = max(reg, 1e-6) * 10.0
            if reg > 1e6:
                flags.append("regularization-exhausted")
                exhausted = True
                break
        if exhausted:
            break

        if expected <= conv_tol * max(cost, 1.0):
            break  # no meaningful descent left

        accepted = False
        for alpha in 0.5 ** np.arange(11):
            xs_new, us_new, cost_new = forward(xs, us, ks, kmats, float(alpha))
            if cost_new < cost - 1e-12:
                prev_cost = cost
                xs, us, cost = xs_new, us_new, cost_new
                accepted = True
                break
        if not accepted:
            reg = max(reg, 1e-6) * 10.0
            if reg > 1e6:
                flags.append("regularization-exhausted")
                break
            continue

        reg = reg / 10.0 if reg > 1e-6 else 0.0
        if cost < best_cost:
            best_us, best_cost = us.copy(), cost
        if (prev_cost - cost) / max(prev_cost, 1e-12) < conv_tol:
            break

    if cost < best_cost:
        best_us, best_cost = us.copy(), cost
    return ControllerOutput(
        u=best_us[0].copy(),
        ess=None,
        diagnostics={"iterations": iterations, "cost": best_cost, "reg": reg},
        flags=tuple(flags),
        u_sequence=best_us,
    )
