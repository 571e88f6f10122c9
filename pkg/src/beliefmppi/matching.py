"""Diffusion/control-channel matching diagnostics and synthesis.

Sampling-based control with exponentiated path costs is exact only when the
belief-mean diffusion D aligns with the control authority, D = lambda * G
R^-1 G^T. Feasibility is a pair of range conditions:

  * some PSD weight W with D = lambda G W G^T exists  iff  range(D) is
    contained in range(G);
  * a positive definite R exists  iff  range(D) equals range(G).

When equality holds, ``construct_r_inverse`` builds such an R^-1
constructively. When it does not, ``matching_residual`` quantifies the
mismatch as a temperature-optimized relative Frobenius distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError, MatchingInfeasibleError
from .schedule import RANK_TOL, BeliefSchedule, psd_factor

Array = NDArray[np.float64]

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _rank(m: Array, tol: float) -> int:
    if m.size == 0 or min(m.shape) == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def check_range_inclusion(d: Array, g: Array, tol: float = RANK_TOL) -> bool:
    """True iff range(D) is contained in range(G).

    Tested as rank([G | D^(1/2)]) == rank(G), with the square-root factor
    truncated at the same rank tolerance so both sides agree on what counts
    as zero.
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    l, _ = psd_factor(d, tol)
    aug = np.hstack([g, l])
    return _rank(aug, tol) == _rank(g, tol)


def check_range_equality(d: Array, g: Array, tol: float = RANK_TOL) -> bool:
    """True iff range(D) == range(G) (rank(D) = rank(G) = rank([G | D^(1/2)]))."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    l, r_d = psd_factor(d, tol)
    r_g = _rank(g, tol)
    if r_d != r_g:
        return False
    return _rank(np.hstack([g, l]), tol) == r_g


def construct_r_inverse(
    d: Array,
    g: Array,
    lam: float,
    kernel_weight: float = 1.0,
    tol: float = RANK_TOL,
) -> Array:
    """Construct R^-1 > 0 with D = lambda * G @ R^-1 @ G.T.

    Solves on range(G) through the thin SVD of G and extends to a full-rank
    matrix by a positive multiple of the projector onto ker(G). Requires
    range equality; raises MatchingInfeasibleError otherwise.
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if lam <= 0:
        raise ConfigurationError("lambda must be positive")
    if kernel_weight <= 0:
        raise ConfigurationError("kernel weight must be positive")
    if not check_range_equality(d, g, tol):
        raise MatchingInfeasibleError(
            "range(D) != range(G): no positive definite control weight can "
            "reproduce the diffusion through the control channel"
        )
    u, s, vt = np.linalg.svd(g, full_matrices=False)
    r = _rank(g, tol)
    u1, s1, v1 = u[:, :r], s[:r], vt[:r].T
    d_hat = (u1.T @ d @ u1) / lam
    x = d_hat / np.outer(s1, s1)
    ell = g.shape[1]
    r_inv = v1 @ x @ v1.T + kernel_weight * (np.eye(ell) - v1 @ v1.T)
    return 0.5 * (r_inv + r_inv.T)


def residual_at(d: Array, m: Array, lam: float, eps_floor: float = 1e-12) -> float:
    """Relative Frobenius mismatch ||D - lam*M||_F / max(||D||_F, eps_floor)."""
    denom = max(float(np.linalg.norm(d)), eps_floor)
    return float(np.linalg.norm(d - lam * m)) / denom


def matching_residual(
    d: Array,
    g: Array,
    r: Array,
    lam_range: tuple[float, float] = (1e-3, 1e3),
    eps_floor: float = 1e-12,
    rel_tol: float = 1e-6,
) -> tuple[float, float, bool]:
    """Best-fit mismatch between D and lam * G R^-1 G^T over a temperature range.

    Returns (residual, lam_star, degenerate). The residual is minimized over
    lam by golden-section search to the given relative interval tolerance;
    a zero diffusion matrix short-circuits to residual 0 at the midpoint of
    the range and is flagged degenerate.
    """
    lo, hi = float(lam_range[0]), float(lam_range[1])
    if lo <= 0 or hi <= lo:
        raise ConfigurationError("lam_range must be positive and increasing")
    d = np.atleast_2d(np.asarray(d, dtype=float))
    g = np.atleast_2d(np.asarray(g, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if float(np.linalg.norm(d)) == 0.0:
        return 0.0, 0.5 * (lo + hi), True
    m = g @ np.linalg.solve(r, g.T)
    m = 0.5 * (m + m.T)

    def f(lam: float) -> float:
        return residual_at(d, m, lam, eps_floor)

    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > rel_tol * max(abs(a), abs(b), 1.0):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    lam_star = 0.5 * (a + b)
    return f(lam_star), lam_star, False


@dataclass(frozen=True)
class MatchingReport:
    """Per-step matching diagnostics over a schedule horizon."""

    inclusion: tuple[bool, ...]
    equality: tuple[bool, ...]
    residuals: tuple[float, ...]
    lam_stars: tuple[float, ...]
    degenerate: tuple[bool, ...]

    @property
    def eps_star(self) -> float:
        """Worst per-step residual over the horizon."""
        return max(self.residuals)

    def to_csv_rows(self) -> list[str]:
        rows = ["k,inclusion,equality,residual,lambda_star,degenerate"]
        for k in range(len(self.residuals)):
            rows.append(
                f"{k},{int(self.inclusion[k])},{int(self.equality[k])},"
                f"{self.residuals[k]:.10g},{self.lam_stars[k]:.10g},"
                f"{int(self.degenerate[k])}"
            )
        return rows


def matching_report(
    sched: BeliefSchedule,
    r: Array,
    lam_range: tuple[float, float] = (1e-3, 1e3),
    tol: float = RANK_TOL,
) -> MatchingReport:
    """Evaluate the matching diagnostics at every step of a schedule."""
    inclusion, equality, residuals, lam_stars, degenerate = [], [], [], [], []
    for k in range(sched.horizon + 1):
        d = sched.diffusions[k]
        g = sched.control_mats[k]
        inclusion.append(check_range_inclusion(d, g, tol))
        equality.append(check_range_equality(d, g, tol))
        eps, lam_star, degen = matching_residual(d, g, r, lam_range)
        residuals.append(eps)
        lam_stars.append(lam_star)
        degenerate.append(degen)
    return MatchingReport(
        inclusion=tuple(inclusion),
        equality=tuple(equality),
        residuals=tuple(residuals),
        lam_stars=tuple(lam_stars),
        degenerate=tuple(degenerate),
    )
