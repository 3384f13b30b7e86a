"""Figure rendering for optimization reports.

Every CLI report path can emit PNG figures next to its delimited output:
trajectory geometry and kinematic profiles, residual convergence from a
trace, and timing curves from benchmark runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trajectory import Trajectory

__all__ = ["plot_trajectory", "plot_trace", "plot_bench"]


def plot_trajectory(traj: Trajectory, out_path, path=None, v_max=None, dt=None):
    """Geometry (first two dims) plus per-axis position/speed profiles."""
    dt = dt or traj.total_duration / 600
    times = traj.sample_grid(dt)
    pos = traj.eval(times)
    vel = traj.eval(times, order=1)
    speed = np.linalg.norm(vel, axis=1)

    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    ax = axes[0]
    if traj.dims >= 2:
        ax.plot(pos[:, 0], pos[:, 1], "-", lw=1.5)
        if path is not None:
            path = np.asarray(path)
            ax.plot(path[:, 0], path[:, 1], "o", ms=4, color="tab:orange")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title("geometry (xy)")
        ax.set_aspect("equal", adjustable="datalim")
    else:
        ax.plot(times, pos[:, 0], "-")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("x [m]")
        ax.set_title("position")

    ax = axes[1]
    for d in range(traj.dims):
        ax.plot(times, pos[:, d], lw=1.2, label=f"dim {d}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("position [m]")
    ax.legend(fontsize=8)
    ax.set_title("positions")

    ax = axes[2]
    ax.plot(times, speed, lw=1.2)
    if v_max is not None and np.isfinite(v_max):
        ax.axhline(v_max, color="tab:red", ls="--", lw=1, label="v_max")
        ax.legend(fontsize=8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("speed [m/s]")
    ax.set_title("speed")

    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def plot_trace(trace, out_path):
    """Residual norms, penalty parameter, and objective vs iteration."""
    iters = [row.iteration for row in trace]
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))

    ax = axes[0]
    ax.semilogy(iters, [max(row.rp_norm, 1e-300) for row in trace], label="|r_p|")
    ax.semilogy(iters, [max(row.rd_norm, 1e-300) for row in trace], label="|r_d|")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual norm")
    ax.legend(fontsize=8)
    ax.set_title("residuals")

    ax = axes[1]
    ax.semilogy(iters, [row.rho for row in trace])
    ax.set_xlabel("iteration")
    ax.set_ylabel("rho")
    ax.set_title("penalty parameter")

    ax = axes[2]
    ax.plot(iters, [row.objective for row in trace])
    ax.set_xlabel("iteration")
    ax.set_ylabel("control effort")
    ax.set_title("objective")

    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def plot_bench(rows, out_path):
    """Total and per-iteration-per-segment time against segment count."""
    by_threads = {}
    for row in rows:
        by_threads.setdefault(row["threads"], []).append(row)

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for threads, group in sorted(by_threads.items()):
        ns = sorted({r["n_segments"] for r in group})
        total = [np.mean([r["total_ms"] for r in group if r["n_segments"] == n])
                 for n in ns]
        per_seg = [np.mean([r["per_iter_per_segment_us"] for r in group
                            if r["n_segments"] == n]) for n in ns]
        axes[0].loglog(ns, total, "o-", label=f"{threads} worker(s)")
        axes[1].semilogx(ns, per_seg, "o-", label=f"{threads} worker(s)")
    axes[0].set_xlabel("segments")
    axes[0].set_ylabel("total time [ms]")
    axes[0].set_title("wall time")
    axes[0].legend(fontsize=8)
    axes[1].set_xlabel("segments")
    axes[1].set_ylabel("per-iteration per-segment [us]")
    axes[1].set_title("per-segment cost")
    axes[1].legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
