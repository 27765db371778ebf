"""Figure rendering for the calibration reports.

Pure file output (Agg backend); every figure sits alongside the CSV data it
was drawn from, so reports remain scriptable.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_odds_figure", "save_sweep_figure", "save_histogram_figure"]

_MARKERS = ("o", "s", "D", "^", "v", "P", "X")


def _fit_curve(fit, t_grid):
    return fit.predict(t_grid)


def save_odds_figure(path, scan_fits, title="Detection odds vs attenuator transmission"):
    """Scatter of measured odds with the fitted curve, one series per scan.

    ``scan_fits`` is a list of (label, t, odds, odds_sigma, fit) tuples;
    ``fit`` may be None to plot data only.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    t_grid = np.linspace(0.0, 1.0, 200)
    for i, (label, t, odds, odds_sigma, fit) in enumerate(scan_fits):
        marker = _MARKERS[i % len(_MARKERS)]
        ax.errorbar(t, odds, yerr=odds_sigma, fmt=marker, ms=4, lw=0, elinewidth=1,
                    capsize=2, label=label)
        if fit is not None:
            ax.plot(t_grid, _fit_curve(fit, t_grid), "-", lw=1.2,
                    color=ax.lines[-1].get_color() if ax.lines else None)
    ax.set_xlabel("transmission t")
    ax.set_ylabel("odds of a detection event")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_sweep_figure(path, entries_data, title="Odds vs transmission for varied source power"):
    """Overlaid odds/fit series for a power sweep, matching the report CSV."""
    return save_odds_figure(path, entries_data, title=title)


def save_histogram_figure(path, counts, predicted=None, title="Click histogram"):
    """Simulated click histogram, optionally with the analytic prediction."""
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    s = np.arange(counts.size)
    total = counts.sum()
    ax.bar(s, counts / total, width=0.8, label="simulated", alpha=0.7)
    if predicted is not None:
        ax.plot(s, predicted, "k.", ms=8, label="analytic")
    ax.set_xlabel("click count s")
    ax.set_ylabel("frequency")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
