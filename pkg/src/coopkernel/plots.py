"""Static SVG figures drawn from ``results.csv`` alone."""

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {
    "coop": "CoopKernel",
    "indalloc": "CoopKernel-IndAlloc",
    "independent": "Independent single-agent",
    "uniform": "Uniform sampling",
}


def read_results(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def median_ci(values, level=0.95, n_boot=2000, seed=0):
    """Median with a percentile-bootstrap interval."""
    x = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    meds = np.median(x[rng.integers(0, x.size, (n_boot, x.size))], axis=1)
    lo, hi = np.quantile(meds, [(1 - level) / 2, (1 + level) / 2])
    return float(np.median(x)), float(lo), float(hi)


def wilson(k, n, z=1.96):
    if n == 0:
        return float("nan"), float("nan"), float("nan")
    p = k / n
    denom = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return p, max(mid - half, 0.0), min(mid + half, 1.0)


def summarize(rows):
    """{regime: {algorithm: [(x, y, lo, hi), ...]}} for the sweep in ``rows``."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r["regime"], r["algorithm_key"], float(r["value"]))].append(r)
    param = rows[0]["param"] if rows else "delta_min"
    out = defaultdict(lambda: defaultdict(list))
    for (regime, algo, x), rs in sorted(groups.items()):
        if param == "delta_min":
            y, lo, hi = median_ci([float(r["mean_samples_per_agent"]) for r in rs])
        else:
            wrong = sum(1 for r in rs if r["all_correct"] != "1")
            y, lo, hi = wilson(wrong, len(rs))
        out[regime][algo].append((x, y, lo, hi))
    return param, out


def plot_results(results_csv, plots_dir, name="experiment"):
    """Write one multi-panel SVG per sweep; returns the written paths."""
    rows = read_results(results_csv)
    if not rows:
        return []
    param, table = summarize(rows)
    plt.rcParams["svg.hashsalt"] = "coopkernel"
    regimes = list(table)
    fig, axes = plt.subplots(1, len(regimes), figsize=(4.2 * len(regimes), 3.6), squeeze=False)
    for ax, regime in zip(axes[0], regimes):
        for algo, pts in table[regime].items():
            x, y, lo, hi = map(np.array, zip(*pts))
            ax.plot(x, y, marker="o", label=LABELS.get(algo, algo))
            ax.fill_between(x, lo, hi, alpha=0.2)
        ax.set_xscale("log")
        ax.set_title(f"task kernel: {regime}")
        if param == "delta_min":
            if all(y > 0 for pts in table[regime].values() for _, y, _, _ in pts):
                ax.set_yscale("log")
            ax.set_xlabel("minimum gap")
            ax.set_ylabel("median samples per agent")
        else:
            ax.set_xlabel("budget T per agent")
            ax.set_ylabel("error rate")
        ax.legend(fontsize=7)
    fig.tight_layout()
    plots = Path(plots_dir)
    plots.mkdir(parents=True, exist_ok=True)
    kind = "samples" if param == "delta_min" else "error"
    path = plots / f"{name}_{kind}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [path]
