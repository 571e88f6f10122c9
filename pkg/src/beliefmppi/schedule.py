"""Deterministic covariance and gain schedules.

Given a nominal trajectory, the filter covariance evolves by a Riccati ODE
that is independent of the realized observations and controls. The schedule
precomputes, per step k:

  Sigma_k   filter covariance
  K_k       filter gain  Sigma_k C_k^T R_o^-1
  D_k       innovation diffusion  K_k R_o K_k^T, the covariance rate of the
            observation-driven fluctuations of the belief mean
  L_k, r_k  low-rank factor and rank of D_k (D_k = L_k L_k^T)
  G_k       control matrix along the nominal

The schedule is immutable once built and safe to share across concurrent
rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError, NumericalError
from .models import SystemModel

Array = NDArray[np.float64]

RANK_TOL = 1e-9
PSD_SLACK = 1e-8


def _sym(m: Array) -> Array:
    return 0.5 * (m + m.T)


def riccati_rhs(sigma: Array, a: Array, c: Array, q: Array, r_o: Array) -> Array:
    """Time derivative of the filter covariance.

    Returns A S + S A^T + Q - S C^T R_o^-1 C S, symmetrized exactly.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r_o = np.atleast_2d(np.asarray(r_o, dtype=float))
    cs = c @ sigma
    try:
        rinv_cs = np.linalg.solve(r_o, cs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("observation noise covariance is singular") from exc
    return _sym(a @ sigma + sigma @ a.T + q - cs.T @ rinv_cs)


def psd_factor(d: Array, tol: float = RANK_TOL) -> tuple[Array, int]:
    """Factor a PSD matrix as D = L @ L.T with L of full column rank.

    Columns of L are eigenvectors scaled by the square root of their
    eigenvalue, ordered by decreasing eigenvalue; eigenvalues at or below
    tol * max(lambda_max, 1) are treated as zero. Eigendecomposition rather
    than Cholesky so rank-deficient input factors exactly.
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    n = d.shape[0]
    scale = max(1.0, float(np.max(np.abs(d))) if d.size else 1.0)
    if np.max(np.abs(d - d.T)) > tol * scale:
        raise NumericalError("matrix is not symmetric")
    w, v = np.linalg.eigh(_sym(d))
    if w.size and w[0] < -tol:
        raise NumericalError(f"matrix is indefinite (min eigenvalue {w[0]:.3g})")
    thresh = tol * max(float(w[-1]) if w.size else 0.0, 1.0)
    keep = np.nonzero(w > thresh)[0][::-1]  # descending eigenvalue order
    cols = v[:, keep] * np.sqrt(w[keep])
    # deterministic sign: largest-magnitude entry of each column positive
    for j in range(cols.shape[1]):
        i = int(np.argmax(np.abs(cols[:, j])))
        if cols[i, j] < 0:
            cols[:, j] = -cols[:, j]
    return cols.reshape(n, -1), int(cols.shape[1])


@dataclass(frozen=True)
class BeliefSchedule:
    """Per-step covariance/gain/diffusion schedule along a nominal trajectory."""

    model: SystemModel
    dt: float
    mu_nom: Array          # (H+1, n)
    sigmas: Array          # (H+1, n, n)
    gains: Array           # (H+1, n, p)
    diffusions: Array      # (H+1, n, n)
    factors: tuple[Array, ...]  # L_k, each (n, r_k)
    ranks: tuple[int, ...]
    control_mats: Array    # (H+1, n, ell)

    @property
    def horizon(self) -> int:
        return self.mu_nom.shape[0] - 1

    def dump_csv(self, path: str) -> None:
        """Write k, vec(Sigma_k), r_k rows for debugging."""
        n = self.model.state_dim
        header = "k," + ",".join(f"sigma_{i}{j}" for i in range(n) for j in range(n)) + ",rank"
        rows = []
        for k in range(self.horizon + 1):
            flat = ",".join(repr(float(v)) for v in self.sigmas[k].ravel())
            rows.append(f"{k},{flat},{self.ranks[k]}")
        with open(path, "w") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")


def propagate_schedule(
    model: SystemModel,
    mu0: Array,
    sigma0: Array,
    dt: float,
    horizon: int,
    controls: Array | None = None,
) -> BeliefSchedule:
    """Propagate the covariance schedule along a nominal trajectory.

    The nominal mean advances by the deterministic drift
    mu_{k+1} = mu_k + (f(mu_k) + G(mu_k) u_k) dt (zero controls by default);
    the covariance advances by one classical Runge-Kutta (RK4) step of the
    Riccati right-hand side per interval, with the Jacobians and observation
    noise frozen at mu_k within each step.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be at least 1")
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    n, ell, p = model.state_dim, model.control_dim, model.obs_dim
    mu = np.asarray(mu0, dtype=float).reshape(n)
    sigma = _sym(np.atleast_2d(np.asarray(sigma0, dtype=float)))
    if sigma.shape != (n, n):
        raise ConfigurationError(f"sigma0 has shape {sigma.shape}, expected ({n}, {n})")
    w0 = np.linalg.eigvalsh(sigma)
    if w0[0] < -PSD_SLACK:
        raise ConfigurationError(f"sigma0 is not PSD (min eigenvalue {w0[0]:.3g})")
    if controls is None:
        controls = np.zeros((horizon, ell))
    else:
        controls = np.asarray(controls, dtype=float).reshape(horizon, ell)

    q = model.process_cov
    mu_nom = np.empty((horizon + 1, n))
    sigmas = np.empty((horizon + 1, n, n))
    gains = np.empty((horizon + 1, n, p))
    diffs = np.empty((horizon + 1, n, n))
    gmats = np.empty((horizon + 1, n, ell))
    factors: list[Array] = []
    ranks: list[int] = []

    for k in range(horizon + 1):
        a = np.atleast_2d(np.asarray(model.drift_jacobian(mu), dtype=float))
        c = np.atleast_2d(np.asarray(model.obs_jacobian(mu), dtype=float))
        r_o = model.obs_cov(mu)
        g = np.asarray(model.control_matrix(mu), dtype=float).reshape(n, ell)

        mu_nom[k] = mu
        sigmas[k] = sigma
        gains[k] = sigma @ np.linalg.solve(r_o, c).T
        cs = c @ sigma
        diffs[k] = _sym(cs.T @ np.linalg.solve(r_o, cs))
        gmats[k] = g
        lk, rk = psd_factor(diffs[k], RANK_TOL)
        factors.append(lk)
        ranks.append(rk)

        if k == horizon:
            break

        def rhs(s: Array) -> Array:
            return riccati_rhs(s, a, c, q, r_o)

        k1 = rhs(sigma)
        k2 = rhs(sigma + 0.5 * dt * k1)
        k3 = rhs(sigma + 0.5 * dt * k2)
        k4 = rhs(sigma + dt * k3)
        sigma = _sym(sigma + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        w = np.linalg.eigvalsh(sigma)
        if w[0] < -PSD_SLACK:
            raise NumericalError(
                f"covariance lost positive semidefiniteness at step {k + 1} "
                f"(min eigenvalue {w[0]:.3g})"
            )
        mu = mu + (np.asarray(model.drift(mu)) + g @ controls[k]) * dt

    return BeliefSchedule(
        model=model,
        dt=float(dt),
        mu_nom=mu_nom,
        sigmas=sigmas,
        gains=gains,
        diffusions=diffs,
        factors=tuple(factors),
        ranks=tuple(ranks),
        control_mats=gmats,
    )
