"""Report figures written next to the CSV/JSON output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (6.4, 3.6)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def trajectory(time, q, labels, path, max_lines=12):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for j in range(min(q.shape[1], max_lines)):
        ax.plot(time, q[:, j], lw=1.0, label=labels[j])
    ax.set_xlabel("time [s]")
    ax.set_ylabel("generalized position")
    if q.shape[1] <= max_lines:
        ax.legend(fontsize=7, ncol=3)
    return _save(fig, path)


def energy(time, e, path):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(time, e - e[0], lw=1.0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("E - E(0) [J]")
    return _save(fig, path)


def solver_stats(steps, iterations, n_contacts, path):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.step(steps, iterations, where="mid", label="Newton iterations")
    ax.set_xlabel("step")
    ax.set_ylabel("iterations")
    ax2 = ax.twinx()
    ax2.plot(steps, n_contacts, color="tab:gray", lw=0.8, label="contacts")
    ax2.set_ylabel("contacts")
    return _save(fig, path)


def contact_metrics(time, penetration, slip, path):
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6.4, 5.0), sharex=True)
    a1.plot(time, penetration, lw=1.0)
    a1.set_ylabel("max penetration [m]")
    a2.plot(time, slip, lw=1.0, color="tab:red")
    a2.set_ylabel("max slip speed [m/s]")
    a2.set_xlabel("time [s]")
    return _save(fig, path)


def order_study(results, path):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name, r in results.items():
        ax.loglog(r["dt"], r["errors"], "o-", label=f"{name} (slope {r['slope']:.2f})")
    ax.set_xlabel("time step [s]")
    ax.set_ylabel("error at final time")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def write_report(out_dir, data, order=None):
    """Render every figure that the recorded data supports; returns paths."""
    out = Path(out_dir)
    paths = []
    t = np.asarray(data["time"])
    if t.size:
        paths.append(trajectory(t, np.asarray(data["q"]), data["q_labels"], out / "trajectory.png"))
        paths.append(energy(t, np.asarray(data["energy"]), out / "energy.png"))
        paths.append(solver_stats(np.asarray(data["step"]), np.asarray(data["iterations"]),
                                  np.asarray(data["n_contacts"]), out / "solver.png"))
        paths.append(contact_metrics(t, np.asarray(data["penetration"]), np.asarray(data["slip"]),
                                     out / "contacts.png"))
    if order:
        paths.append(order_study(order, out / "order_study.png"))
    return paths
