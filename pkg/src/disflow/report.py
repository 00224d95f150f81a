"""Evaluation reports: delimited statistics plus rendered figures.

Given flow-error data this writes a small bundle into a directory:
``epe_stats.csv`` and ``threshold_curve.csv`` with the numbers, and
``threshold_curve.png`` / ``error_histogram.png`` rendered with matplotlib.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EpeStats

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


def write_epe_report(
    out_dir,
    stats: EpeStats,
    errors: np.ndarray,
    thresholds,
    fractions,
) -> list[Path]:
    """Write the report bundle and return the created file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    errors = np.asarray(errors, dtype=np.float64)
    errors = errors[np.isfinite(errors)]
    written = []

    stats_path = out / "epe_stats.csv"
    with open(stats_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bucket", "mean_epe", "count"])
        w.writerow(["all", f"{stats.epe_all:.6f}", stats.valid_pixel_count])
        w.writerow(["s0-10", f"{stats.epe_s0_10:.6f}", stats.count_s0_10])
        w.writerow(["s10-40", f"{stats.epe_s10_40:.6f}", stats.count_s10_40])
        w.writerow(["s40+", f"{stats.epe_s40:.6f}", stats.count_s40])
    written.append(stats_path)

    curve_path = out / "threshold_curve.csv"
    with open(curve_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold_px", "fraction_above"])
        for t, frac in zip(thresholds, fractions):
            w.writerow([f"{t:g}", f"{frac:.6f}"])
    written.append(curve_path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(thresholds, np.asarray(fractions) * 100.0, "o-")
    ax.set_xlabel("error threshold (px)")
    ax.set_ylabel("correspondences above threshold (%)")
    ax.set_ylim(0, 100)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    curve_png = out / "threshold_curve.png"
    fig.savefig(curve_png, dpi=120)
    plt.close(fig)
    written.append(curve_png)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    if errors.size:
        ax.hist(errors, bins=min(80, max(10, int(np.sqrt(errors.size)))), log=True)
    ax.set_xlabel("end-point error (px)")
    ax.set_ylabel("pixels")
    fig.tight_layout()
    hist_png = out / "error_histogram.png"
    fig.savefig(hist_png, dpi=120)
    plt.close(fig)
    written.append(hist_png)

    return written
