"""Belief-space running and terminal costs.

State costs are evaluated in expectation under a Gaussian belief
N(mu, Sigma), which splits a quadratic cost into a mean term and a
covariance trace term. Obstacles enter as Gaussian bumps whose mean and
variance under the belief have closed forms, so the risk-sensitive cost

    q_rs = E[cost] + (theta / 2) * Var[cost]

stays analytic. theta = 0 recovers the plain expected cost. The
cross-covariance between the quadratic and obstacle terms is dropped from
the variance (each term's variance is exact; their sum is a documented
approximation).

All cost functions accept batched means with arbitrary leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError, NumericalError
from .models import Obstacle

Array = NDArray[np.float64]


def _quad(d: Array, m: Array) -> Array:
    """Batched quadratic form d^T M d over the trailing axis."""
    return ((d @ m) * d).sum(axis=-1)


def expected_quadratic_cost(mu: Array, sigma: Array, q: Array, x_ref: Array) -> Array:
    """E[0.5 ||x - x_ref||_Q^2] for x ~ N(mu, Sigma).

    Equals 0.5 ||mu - x_ref||_Q^2 + 0.5 tr(Q Sigma). Dropping the trace term
    recovers certainty-equivalent planning, which underestimates the true
    expected cost whenever tr(Q Sigma) > 0.
    """
    mu = np.asarray(mu, dtype=float)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    d = mu - np.asarray(x_ref, dtype=float)
    trace_term = 0.5 * float(np.trace(q @ np.atleast_2d(sigma))) if sigma is not None else 0.0
    return 0.5 * _quad(d, q) + trace_term


def quadratic_cost_variance(mu: Array, sigma: Array, q: Array, x_ref: Array) -> Array:
    """Var[0.5 ||x - x_ref||_Q^2] for x ~ N(mu, Sigma).

    Standard Gaussian quadratic-form algebra:
    0.5 tr((Q Sigma)^2) + (mu - x_ref)^T Q Sigma Q (mu - x_ref).
    """
    mu = np.asarray(mu, dtype=float)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = mu - np.asarray(x_ref, dtype=float)
    qs = q @ sigma
    return 0.5 * float(np.trace(qs @ qs)) + _quad(d, qs @ q)


def obstacle_cost_moments(
    mu_pos: Array,
    p_pos: Array,
    obstacle: Obstacle,
    w_obs: float,
    rho: float,
) -> tuple[Array, Array]:
    """Mean and variance of a Gaussian obstacle bump under a Gaussian belief.

    The bump is w_obs * exp(-0.5 (x - o)^T S^-1 (x - o)) with
    S = (radius * rho)^2 * I. Both moments are closed-form Gaussian
    convolutions; the second moment is the same formula with squared weight
    and half-width S/2.
    """
    if rho <= 0:
        raise ConfigurationError("bump width rho must be positive")
    mu_pos = np.asarray(mu_pos, dtype=float)
    center = np.asarray(obstacle.center, dtype=float)
    dim = center.shape[0]
    s = (obstacle.radius * rho) ** 2 * np.eye(dim)
    p = np.atleast_2d(np.asarray(p_pos, dtype=float))
    d = mu_pos - center

    mean = _bump_expectation(d, s, p, w_obs)
    second = _bump_expectation(d, 0.5 * s, p, w_obs**2)
    var = np.maximum(second - mean**2, 0.0)
    return mean, var


def _bump_expectation(d: Array, s: Array, p: Array, weight: float) -> Array:
    """E[weight * exp(-0.5 (x-o)^T S^-1 (x-o))] with x - o ~ N(d, P)."""
    sp = s + p
    det_s = float(np.linalg.det(s))
    det_sp = float(np.linalg.det(sp))
    if det_sp <= 0.0 or not np.isfinite(det_sp):
        raise NumericalError("bump covariance S + P is singular")
    amp = weight * np.sqrt(det_s / det_sp)
    return amp * np.exp(-0.5 * _quad(d, np.linalg.inv(sp)))


@dataclass(frozen=True)
class CostSpec:
    """Quadratic state cost plus Gaussian obstacle bumps with risk weighting.

    ``x_ref`` may be a single state or a (steps, n) array for a time-varying
    reference. ``pos_idx`` selects the position components the obstacles
    live in. ``lam`` is the path integral temperature used to convert path
    costs to weights; ``theta`` scales the variance penalty.
    """

    q_state: Array
    x_ref: Array
    r_control: Array
    q_terminal: Array
    x_ref_terminal: Array
    obstacles: tuple[Obstacle, ...] = ()
    w_obs: float = 0.0
    rho: float = 1.0
    theta: float = 0.0
    lam: float = 1.0
    pos_idx: tuple[int, ...] = (0, 1)
    terminal_obstacles: bool = False

    def __post_init__(self) -> None:
        for name in ("q_state", "x_ref", "r_control", "q_terminal", "x_ref_terminal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.theta < 0:
            raise ConfigurationError("theta must be non-negative")
        if self.lam <= 0:
            raise ConfigurationError("temperature lam must be positive")
        if self.w_obs < 0:
            raise ConfigurationError("w_obs must be non-negative")
        if self.rho <= 0:
            raise ConfigurationError("rho must be positive")
        for m, kind in ((self.q_state, "psd"), (self.q_terminal, "psd"), (self.r_control, "spd")):
            w = np.linalg.eigvalsh(np.atleast_2d(m))
            if kind == "psd" and w[0] < -1e-10:
                raise ConfigurationError("state cost weight must be PSD")
            if kind == "spd" and w[0] <= 0:
                raise ConfigurationError("control cost weight must be SPD")

    def reference_at(self, step: int | None) -> Array:
        if self.x_ref.ndim == 1 or step is None:
            return self.x_ref if self.x_ref.ndim == 1 else self.x_ref[0]
        return self.x_ref[min(step, self.x_ref.shape[0] - 1)]

    def position_cov(self, sigma: Array) -> Array:
        idx = np.asarray(self.pos_idx)
        return np.atleast_2d(np.asarray(sigma, dtype=float))[np.ix_(idx, idx)]


def _belief_cost(
    mu: Array,
    sigma: Array | None,
    q: Array,
    x_ref: Array,
    spec: CostSpec,
    with_obstacles: bool,
) -> Array:
    mu = np.asarray(mu, dtype=float)
    mean = expected_quadratic_cost(mu, sigma, q, x_ref)
    if spec.theta > 0.0 and sigma is not None:
        var = quadratic_cost_variance(mu, sigma, q, x_ref)
    else:
        var = 0.0
    if with_obstacles and spec.obstacles and spec.w_obs > 0.0:
        idx = np.asarray(spec.pos_idx)
        mu_pos = mu[..., idx]
        p_pos = spec.position_cov(sigma) if sigma is not None else np.zeros((idx.size, idx.size))
        for obs in spec.obstacles:
            if spec.theta > 0.0:
                m, v = obstacle_cost_moments(mu_pos, p_pos, obs, spec.w_obs, spec.rho)
                mean = mean + m
                var = var + v
            else:
                s = (obs.radius * spec.rho) ** 2 * np.eye(idx.size)
                d = mu_pos - np.asarray(obs.center, dtype=float)
                mean = mean + _bump_expectation(d, s, p_pos, spec.w_obs)
    if spec.theta > 0.0:
        return mean + 0.5 * spec.theta * var
    return mean


def reduced_running_cost(
    mu: Array,
    sigma: Array | None,
    spec: CostSpec,
    step: int | None = None,
) -> Array:
    """Risk-sensitive running cost of the belief mean at a scheduled covariance.

    With the covariance a known function of time, the belief cost becomes a
    function of the mean alone; ``sigma`` is the scheduled covariance for
    this step (None means a deterministic state).
    """
    return _belief_cost(mu, sigma, spec.q_state, spec.reference_at(step), spec, True)


def reduced_terminal_cost(mu: Array, sigma: Array | None, spec: CostSpec) -> Array:
    """Terminal analogue of the running cost; no obstacle term unless enabled."""
    return _belief_cost(
        mu, sigma, spec.q_terminal, spec.x_ref_terminal, spec, spec.terminal_obstacles
    )
