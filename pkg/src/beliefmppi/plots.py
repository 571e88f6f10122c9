"""Figure rendering for benchmark outputs.

Figures are written next to the CSV tables they visualize: sampled
trajectories per controller over the observation-noise field, and the
sweep curves (collision rate and base cost). Rendering is headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .models import light_dark_sigma

_STYLE = {
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "axes.titlesize": 10,
}

_COLORS = {
    "mppi-belief": "tab:blue",
    "ce-mppi": "tab:orange",
    "pipf": "tab:green",
    "ekf-ilqg": "tab:red",
}


def render_trajectories(results, path: str, max_trajectories: int = 50) -> None:
    """One panel per controller: sampled true trajectories over the noise field."""
    cfg = results.config
    params = cfg.domain_params()
    names = [n for n in results.trials if any(r.x_traj is not None for r in results.trials[n])]
    if not names:
        return
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(
            1, len(names), figsize=(3.2 * len(names), 3.4), sharex=True, sharey=True
        )
        axes = np.atleast_1d(axes)
        xgrid = np.linspace(cfg.start[0] - 2.0, cfg.goal[0] + 2.0, 200)
        ygrid = np.linspace(-4.0, 4.0, 50)
        shade = np.tile(light_dark_sigma(xgrid, params), (ygrid.size, 1))
        for ax, name in zip(axes, names):
            ax.pcolormesh(xgrid, ygrid, shade, cmap="Greys", shading="auto", alpha=0.7)
            kept = 0
            for r in results.trials[name]:
                if r.x_traj is None or kept >= max_trajectories:
                    continue
                kept += 1
                color = "tab:red" if r.collision else _COLORS.get(name, "tab:blue")
                ax.plot(r.x_traj[:, 0], r.x_traj[:, 1], color=color, lw=0.5, alpha=0.5)
            for obs in cfg.obstacle_objects():
                ax.add_patch(
                    plt.Circle(obs.center, obs.radius, color="k", fill=False, lw=1.2)
                )
            ax.plot(*cfg.start[:2], "g^", ms=6)
            ax.plot(*cfg.goal[:2], "r*", ms=9)
            ax.set_title(name)
            ax.set_xlabel("x [m]")
            ax.set_aspect("equal")
        axes[0].set_ylabel("y [m]")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def render_sweep(sweep, path: str) -> None:
    """Collision rate and base cost versus the swept parameter."""
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.2, 3.0))
        for name, points in sweep.aggregates.items():
            color = _COLORS.get(name)
            coll = [p["collision_rate_pct"] for p in points]
            cost = [p["mean_cost"] for p in points]
            ax1.plot(sweep.values, coll, "o-", label=name, color=color)
            ax2.plot(sweep.values, cost, "o-", label=name, color=color)
        if sweep.param == "w_obs":
            ax1.set_xscale("log")
            ax2.set_xscale("log")
        ax1.set_xlabel(sweep.param)
        ax1.set_ylabel("collision rate [%]")
        ax2.set_xlabel(sweep.param)
        ax2.set_ylabel("base cost (no obstacle penalty)")
        ax1.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
