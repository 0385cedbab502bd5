"""Figure rendering for the CSV reports the searches emit.

Each renderer reads one delimited file and writes a PNG next to it; the CSV
stays the machine-readable contract, the figure is the human view.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def _read_rows(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def render_curves(csv_path, png_path) -> Path:
    """Best/mean fitness per generation from a run's curves.csv."""
    rows = _read_rows(csv_path)
    generations = [int(r["generation"]) for r in rows]
    best = [float(r["best_fitness"]) for r in rows]
    mean = [float(r["mean_fitness"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(generations, best, marker="o", label="best fitness")
    ax.plot(generations, mean, marker="s", linestyle="--", label="mean fitness")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render_comparison(csv_path, png_path) -> Path:
    """Best-so-far fitness against cumulative training episodes per method."""
    rows = _read_rows(csv_path)
    series: dict[str, tuple[list, list]] = {}
    for row in rows:
        xs, ys = series.setdefault(row["method"], ([], []))
        xs.append(float(row["cumulative_episodes"]))
        ys.append(float(row["best_fitness_so_far"]))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for method, (xs, ys) in series.items():
        ax.step(xs, ys, where="post", marker=".", label=method)
    ax.set_xlabel("cumulative training episodes")
    ax.set_ylabel("best fitness so far")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render_bench(csv_path, png_path) -> Path:
    """Total wall-clock per worker count from bench.csv."""
    rows = _read_rows(csv_path)
    totals = {int(r["workers"]): float(r["seconds"])
              for r in rows if r["generation"] == "total"}
    workers = sorted(totals)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar([str(w) for w in workers], [totals[w] for w in workers])
    ax.set_xlabel("workers")
    ax.set_ylabel("total seconds")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)
