"""Shared matplotlib setup for report figures.

Import this module instead of pyplot anywhere a figure is drawn: it pins the
Agg backend before pyplot loads, so headless runs never try to open a display.
"""

import matplotlib as mpl

mpl.use("Agg")  # file output only; must happen before pyplot is imported

mpl.rcParams.update({
    "figure.dpi": 110,
    "savefig.dpi": 160,
    "savefig.bbox": "tight",
    "font.size": 9,
    "font.family": "sans-serif",
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "legend.framealpha": 0.8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.5,
    "lines.linewidth": 1.3,
    "lines.markersize": 4,
})

import matplotlib.pyplot as plt  # noqa: E402


golden_mean = (5.0 ** 0.5 - 1.0) / 2.0  # aesthetic height/width ratio


def size(width=4.8):
    """Figure size tuple with golden-ratio height."""
    return (width, width * golden_mean)


def new(width=4.8):
    """Fresh single-axes figure."""
    fig = plt.figure(figsize=size(width))
    ax = fig.add_subplot(111)
    return fig, ax


def save(fig, path):
    """Write the figure as PNG and release it."""
    fig.savefig(path)
    plt.close(fig)
    return path
