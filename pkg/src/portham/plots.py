"""Figure rendering for trajectories and energy audits.

Everything draws through the Agg backend so the CLI can save files
from a headless process.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
from scipy.integrate import cumulative_trapezoid  # noqa: E402


def save_trajectory_figure(traj, path):
    """States, port signals, and stored energy on a shared time axis."""
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8.0, 8.0))
    for i, name in enumerate(traj.state_names):
        axes[0].plot(traj.t, traj.x[:, i], label=name)
    axes[0].set_ylabel("state")
    axes[0].legend(loc="upper right", fontsize="small")
    m = traj.u.shape[1]
    for i in range(m):
        axes[1].plot(traj.t, traj.u[:, i], label=f"u{i + 1}")
        axes[1].plot(traj.t, traj.y[:, i], "--", label=f"y{i + 1}")
    axes[1].set_ylabel("ports")
    if m:
        axes[1].legend(loc="upper right", fontsize="small")
    axes[2].plot(traj.t, traj.H, color="tab:red")
    axes[2].set_ylabel("H")
    axes[2].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def save_audit_figure(traj, path):
    """Stored energy against the integrated supplied power; the gap
    between the two curves is what the dissipation absorbed."""
    supplied = cumulative_trapezoid((traj.u * traj.y).sum(axis=1), traj.t,
                                    initial=0.0)
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8.0, 6.0))
    axes[0].plot(traj.t, traj.H, label="stored H")
    axes[0].plot(traj.t, traj.H[0] + supplied, "--",
                 label="H(0) + supplied work")
    axes[0].set_ylabel("energy")
    axes[0].legend(loc="upper right", fontsize="small")
    axes[1].plot(traj.t, traj.H - traj.H[0] - supplied, color="tab:green")
    axes[1].set_ylabel("stored - supplied")
    axes[1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
