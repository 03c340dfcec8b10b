"""Result emission: delimited outputs plus rendered figures.

Every scenario writes ``metrics.json`` and CSV tables into the output
directory; when figures are enabled, matplotlib renders the matching PNG
next to each table. CSV floats are written with ``repr`` so two runs with
the same config and seed produce byte-identical files.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, rows, fieldnames=None) -> None:
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(name)) for name in fieldnames])


def write_metrics(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _save(fig, path):
    fig.savefig(path, dpi=140)
    plt.close(fig)


def render_loop_figure(out_dir, episode_rows, scenario) -> None:
    """Cumulative failures and the identification share over the run."""
    iterations = sorted({row["iteration"] for row in episode_rows})
    fails = np.zeros(len(iterations))
    ident = np.zeros(len(iterations))
    for row in episode_rows:
        fails[row["iteration"]] += row["failed"]
        if row["kind"] == "identification":
            ident[row["iteration"]] = 1
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.step(iterations, np.cumsum(fails), where="post")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("cumulative failures")
    ax1.set_title(scenario)
    window = max(1, len(iterations) // 20)
    running = np.convolve(ident, np.ones(window) / window, mode="same")
    ax2.plot(iterations, running)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel(f"identification share ({window}-it window)")
    ax2.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    _save(fig, Path(out_dir) / "loop.png")


def render_sensitivity_figure(out_dir, counts, heights) -> None:
    """Grouped bars: correct/incorrect confident decisions per context and p_safe."""
    p_safes = sorted(counts)
    m = len(heights)
    width = 0.8 / len(p_safes)
    fig, ax = plt.subplots(figsize=(8, 3.4))
    for i, p_safe in enumerate(p_safes):
        xs = np.arange(m) + (i - (len(p_safes) - 1) / 2) * width
        good = [counts[p_safe][c]["correct"] for c in range(m)]
        bad = [counts[p_safe][c]["incorrect"] for c in range(m)]
        ax.bar(xs, good, width=width * 0.9, color="tab:blue",
               label="correct" if i == 0 else None)
        ax.bar(xs, bad, width=width * 0.9, bottom=good, color="tab:red",
               label="incorrect" if i == 0 else None)
    ax.set_xticks(np.arange(m))
    ax.set_xticklabels([str(h) for h in heights])
    ax.set_xlabel("context height")
    ax.set_ylabel("confident decisions")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(out_dir) / "sensitivity.png")


def render_bounds_figure(out_dir, rows) -> None:
    """Estimate, bound envelope, and the true probability curve."""
    ys = np.array([r["y"] for r in rows])
    est = np.array([r["p_hat_0"] for r in rows])
    lo = np.array([r["lower_0"] for r in rows])
    hi = np.array([r["upper_0"] for r in rows])
    truth = np.array([r["truth_p0"] for r in rows])
    fig, ax = plt.subplots(figsize=(7, 3.4))
    ax.fill_between(ys, lo, hi, alpha=0.3, label="bound envelope")
    ax.plot(ys, est, label="estimate")
    ax.plot(ys, truth, "--", label="truth")
    ax.set_xlabel("y")
    ax.set_ylabel("probability of context 0")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(out_dir) / "bounds.png")


def render_mmd_figure(out_dir, rows) -> None:
    """Squared MMD versus sub-sampling shift, one panel per context."""
    contexts = sorted({r["context"] for r in rows})
    fig, axes = plt.subplots(1, len(contexts), figsize=(3.2 * len(contexts), 3.0),
                             sharex=True)
    axes = np.atleast_1d(axes)
    for ax, c in zip(axes, contexts):
        sub = [r for r in rows if r["context"] == c]
        shifts = [r["shift"] for r in sub]
        ax.plot(shifts, [r["mmd_sq"] for r in sub], label="mmd$^2$")
        ax.plot(shifts, [r["accept_threshold"] for r in sub], "--", label="threshold")
        ax.set_title(f"context {c}")
        ax.set_xlabel("shift")
    axes[0].set_ylabel("squared MMD")
    axes[-1].legend()
    fig.tight_layout()
    _save(fig, Path(out_dir) / "mmd.png")
