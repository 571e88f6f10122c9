"""Partially observed system models.

A model is a control-affine diffusion observed through a noisy output map:

    dx = (f(x) + G(x) u) dt + H dw
    dy = c(x) dt + sigma_o(x) dnu

``drift`` and ``obs_map`` must accept batched states (arbitrary leading
sample axes) so rollouts can be vectorized; the Jacobians, the control
matrix, and the observation noise matrix are evaluated one state at a time.
All maps must be pure, which makes model evaluation safe to call from
concurrently executing rollouts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError

Array = NDArray[np.float64]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Obstacle:
    """A hard disc in the position plane (meters)."""

    center: tuple[float, float]
    radius: float

    def clearance(self, pos: Array) -> Array:
        """Signed distance from ``pos`` (..., 2) to the disc boundary."""
        d = np.linalg.norm(np.asarray(pos) - np.asarray(self.center), axis=-1)
        return d - self.radius


@dataclass(frozen=True)
class SystemModel:
    state_dim: int
    control_dim: int
    obs_dim: int
    noise_dim: int
    drift: Callable[[Array], Array]
    control_matrix: Callable[[Array], Array]
    obs_map: Callable[[Array], Array]
    drift_jacobian: Callable[[Array], Array]
    obs_jacobian: Callable[[Array], Array]
    obs_noise: Callable[[Array], Array]
    noise_channel: Array
    # set when drift(x) == x @ drift_matrix.T exactly; lets rollouts use a
    # compiled fast path (behaviour is identical either way)
    drift_matrix: Array | None = None

    @property
    def process_cov(self) -> Array:
        """Process noise covariance Q = H @ H.T."""
        h = self.noise_channel
        return h @ h.T

    def obs_cov(self, x: Array) -> Array:
        """Observation noise covariance sigma_o(x) @ sigma_o(x).T."""
        s = self.obs_noise(x)
        return s @ s.T


class ModelEval(NamedTuple):
    f: Array
    G: Array
    c: Array
    A: Array
    C: Array
    sigma_o: Array


def eval_model(model: SystemModel, x: Array) -> ModelEval:
    """Evaluate all model maps at a single state with shape checks."""
    x = np.asarray(x, dtype=float)
    n, ell, p = model.state_dim, model.control_dim, model.obs_dim
    if x.shape != (n,):
        raise ConfigurationError(f"state has shape {x.shape}, expected ({n},)")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("state contains non-finite entries")
    out = ModelEval(
        f=np.asarray(model.drift(x), dtype=float),
        G=np.asarray(model.control_matrix(x), dtype=float),
        c=np.asarray(model.obs_map(x), dtype=float),
        A=np.asarray(model.drift_jacobian(x), dtype=float),
        C=np.asarray(model.obs_jacobian(x), dtype=float),
        sigma_o=np.asarray(model.obs_noise(x), dtype=float),
    )
    expected = {
        "f": (out.f, (n,)),
        "G": (out.G, (n, ell)),
        "c": (out.c, (p,)),
        "A": (out.A, (n, n)),
        "C": (out.C, (p, n)),
        "sigma_o": (out.sigma_o, (p, p)),
    }
    for name, (value, shape) in expected.items():
        if value.shape != shape:
            raise ConfigurationError(
                f"model map {name} returned shape {value.shape}, expected {shape}"
            )
        if not np.all(np.isfinite(value)):
            raise ConfigurationError(f"model map {name} returned non-finite values")
    return out


def check_affine_observation(
    model: SystemModel,
    probes: Sequence[tuple[Array, Array]],
    tol: float = 1e-8,
) -> bool:
    """Check whether the observation map behaves affinely on the probe pairs.

    Belief-space path integral control is exact only for affine observation
    maps; for any other map it is an approximation. The check compares
    c(x2) - c(x1) against C(x0) @ (x2 - x1) for a Jacobian frozen at the
    first probe point. A failure logs a warning and returns False; it never
    raises.
    """
    if len(probes) < 2:
        raise ConfigurationError("need at least two probe pairs")
    x0 = np.asarray(probes[0][0], dtype=float)
    c_jac = np.atleast_2d(np.asarray(model.obs_jacobian(x0), dtype=float))
    for x1, x2 in probes:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        lhs = np.atleast_1d(model.obs_map(x2) - model.obs_map(x1))
        rhs = c_jac @ np.atleast_1d(x2 - x1)
        if np.max(np.abs(lhs - rhs)) > tol:
            logger.warning(
                "observation map is not affine (deviation %.3g > tol %.3g); "
                "belief-space path integral control is approximate",
                float(np.max(np.abs(lhs - rhs))),
                tol,
            )
            return False
    return True


# --- gradient light-dark benchmark domain -----------------------------------

LIGHT_DARK_OBSTACLES = (
    Obstacle(center=(3.0, 1.0), radius=0.65),
    Obstacle(center=(3.0, -1.0), radius=0.65),
)

_LD_DRIFT = np.array(
    [
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ]
)
_LD_G = np.array(
    [
        [0.0, 0.0],
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 1.0],
    ]
)
_LD_C = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
    ]
)


@dataclass(frozen=True)
class LightDarkParams:
    """Planar double integrator with position-dependent observation noise.

    The state is [p_x, p_y, v_x, v_y]; control is planar acceleration;
    only the position is observed. The observation noise shrinks linearly
    toward ``x_light``, creating a "light" region where position fixes are
    accurate, and never drops below ``noise_floor``.
    """

    x_light: float = 5.0
    noise_floor: float = 0.1
    sigma_w: float = 0.30
    obstacles: tuple[Obstacle, ...] = LIGHT_DARK_OBSTACLES


def light_dark_sigma(px: Array, params: LightDarkParams) -> Array:
    """Per-axis observation noise level at horizontal position(s) ``px``."""
    return np.abs(np.asarray(px) - params.x_light) / np.sqrt(2.0) + params.noise_floor


def make_light_dark(params: LightDarkParams | None = None) -> SystemModel:
    p = params or LightDarkParams()
    h = np.zeros((4, 2))
    h[2, 0] = p.sigma_w
    h[3, 1] = p.sigma_w

    def drift(x: Array) -> Array:
        return np.asarray(x) @ _LD_DRIFT.T

    def obs_noise(x: Array) -> Array:
        s = float(light_dark_sigma(np.asarray(x)[0], p))
        return s * np.eye(2)

    return SystemModel(
        state_dim=4,
        control_dim=2,
        obs_dim=2,
        noise_dim=2,
        drift=drift,
        control_matrix=lambda x: _LD_G,
        obs_map=lambda x: np.asarray(x)[..., :2],
        drift_jacobian=lambda x: _LD_DRIFT,
        obs_jacobian=lambda x: _LD_C,
        obs_noise=obs_noise,
        noise_channel=h,
        drift_matrix=_LD_DRIFT,
    )


def make_linear_model(
    a: Array,
    b: Array,
    c: Array,
    h: Array,
    sigma_o: Array,
) -> SystemModel:
    """Linear time-invariant model dx = (A x + B u) dt + H dw, dy = C x dt + sigma_o dnu."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    sigma_o = np.atleast_2d(np.asarray(sigma_o, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n or c.shape[1] != n or h.shape[0] != n:
        raise ConfigurationError("inconsistent linear model dimensions")
    if sigma_o.shape != (c.shape[0], c.shape[0]):
        raise ConfigurationError("sigma_o must be square with the observation dimension")
    return SystemModel(
        state_dim=n,
        control_dim=b.shape[1],
        obs_dim=c.shape[0],
        noise_dim=h.shape[1],
        drift=lambda x: np.asarray(x) @ a.T,
        control_matrix=lambda x: b,
        obs_map=lambda x: np.asarray(x) @ c.T,
        drift_jacobian=lambda x: a,
        obs_jacobian=lambda x: c,
        obs_noise=lambda x: sigma_o,
        noise_channel=h,
        drift_matrix=a,
    )
