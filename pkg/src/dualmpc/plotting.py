"""Static figures (SVG) for regions, phase-plane trajectories and time series."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from dualmpc import polytope as pt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.2,
    "figure.figsize": (4.8, 3.6),
    "svg.hashsalt": "dualmpc",
}

# one fixed color per approach so figures stay comparable
COLORS = {
    "governed": "tab:red",
    "projection": "goldenrod",
    "projection_dual": "tab:blue",
    "mpc": "tab:green",
    "mpc_N10": "tab:green",
    "lqr": "tab:gray",
}


def _color(name, i):
    return COLORS.get(name, f"C{i % 10}")


def plot_regions(path, regions, ax=None, title=None):
    """Outline every 2D polytope in `regions` (name -> HPolytope)."""
    with plt.rc_context(STYLE):
        own = ax is None
        if own:
            fig, ax = plt.subplots()
        for i, (name, P) in enumerate(regions.items()):
            V = pt.vertices_2d(P)
            V = np.vstack([V, V[:1]])
            ax.fill(V[:, 0], V[:, 1], alpha=0.12, color=f"C{i % 10}")
            ax.plot(V[:, 0], V[:, 1], color=f"C{i % 10}", label=name)
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        ax.legend(loc="best")
        if title:
            ax.set_title(title)
        if own:
            fig.tight_layout()
            fig.savefig(path)
            plt.close(fig)


def plot_trajectories(path, trajectories, regions=None):
    """Phase-plane plot: `trajectories` maps a policy name to a list of runs."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if regions:
            for i, (name, P) in enumerate(regions.items()):
                V = pt.vertices_2d(P)
                V = np.vstack([V, V[:1]])
                ax.plot(V[:, 0], V[:, 1], "--", color="0.5" if i else "0.2", lw=0.8, label=name)
        for i, (name, runs) in enumerate(trajectories.items()):
            for j, tr in enumerate(runs):
                S = tr.states
                ax.plot(S[:, 0], S[:, 1], color=_color(name, i), lw=1.0,
                        label=name if j == 0 else None)
                ax.plot(S[0, 0], S[0, 1], "o", ms=2.5, color=_color(name, i))
        ax.plot(0, 0, "k+", ms=6)
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_time_series(path, trajectories, u_bounds=None):
    """State components and input over time, one line per policy."""
    first = next(iter(trajectories.values()))
    m = first.states.shape[1]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(m + 1, 1, sharex=True, figsize=(4.8, 1.2 * (m + 1) + 0.6))
        for i, (name, tr) in enumerate(trajectories.items()):
            t = np.arange(len(tr.states))
            for k in range(m):
                axes[k].plot(t, tr.states[:, k], color=_color(name, i), label=name)
            if tr.inputs.size:
                axes[m].step(np.arange(tr.T), tr.inputs[:, 0], where="post", color=_color(name, i))
        for k in range(m):
            axes[k].set_ylabel(f"$x_{k + 1}$")
        axes[m].set_ylabel("$u$")
        if u_bounds is not None:
            for b in u_bounds:
                axes[m].axhline(b, color="k", lw=0.6, ls=":")
        axes[m].set_xlabel("step")
        axes[0].legend(loc="best")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
