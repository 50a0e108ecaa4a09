"""File-based figure rendering for sweep tables, histograms and certificates.

Every function reads the delimited artifact its sibling writer produced (or
takes the arrays directly), renders a matplotlib figure with the Agg backend
and writes it next to the data.  Figures are derived artifacts: the CSV/JSON
outputs remain the canonical results, and nothing here is needed to consume
them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_sweep",
    "plot_histogram",
    "plot_certificate",
    "plot_dual_polynomial",
]


def _finish(fig, out_path) -> str:
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)


def plot_sweep(sweep_csv, out_path, xlabel: str = "sweep point") -> str:
    """RMSE/MAE curves (log scale) from a ``*_sweep.csv`` table."""
    table = np.genfromtxt(sweep_csv, delimiter=",", names=True)
    table = np.atleast_1d(table)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(table["point"], np.maximum(table["rmse"], 1e-16), "o-", label="RMSE")
    ax.semilogy(table["point"], np.maximum(table["mae"], 1e-16), "s--", label="MAE")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("error (deg)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _finish(fig, out_path)


def plot_histogram(histogram_csv, out_path, true_doas_deg=None) -> str:
    """Bar plot of a ``*_histogram.csv`` file with optional truth markers."""
    table = np.atleast_1d(np.genfromtxt(histogram_csv, delimiter=",", names=True))
    lefts = table["bin_left_deg"]
    counts = table["count"]
    width = float(lefts[1] - lefts[0]) if lefts.size > 1 else 1.0
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(lefts, counts, width=width, align="edge", edgecolor="none")
    if true_doas_deg is not None:
        for theta in true_doas_deg:
            ax.axvline(theta, color="crimson", linestyle="--", linewidth=1.0)
    ax.set_xlabel("estimated DOA (deg)")
    ax.set_ylabel("count")
    ax.set_xlim(0.0, 180.0)
    ax.grid(True, axis="y", alpha=0.3)
    return _finish(fig, out_path)


def plot_certificate(curve_csv, out_path, doas_w=None) -> str:
    """Certificate curve ``||psi(w)||`` (plus per-frequency magnitudes).

    Reads the ``w,psi_norm,abs_psi_f1..`` file written by the certificate
    module; dashed vertical lines mark the construction nodes when given.
    """
    table = np.atleast_1d(np.genfromtxt(curve_csv, delimiter=",", names=True))
    names = table.dtype.names
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(table["w"], table["psi_norm"], "k-", linewidth=1.5, label="||psi||")
    for name in names[2:]:
        ax.plot(table["w"], table[name], linewidth=0.8, alpha=0.6, label=name)
    if doas_w is not None:
        for w in doas_w:
            ax.axvline(w, color="crimson", linestyle="--", linewidth=1.0)
    ax.axhline(1.0, color="gray", linestyle=":", linewidth=1.0)
    ax.set_xlabel("w")
    ax.set_ylabel("magnitude")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, out_path)


def plot_dual_polynomial(w_grid, psi_norm, out_path, doas_w=None) -> str:
    """Dual-polynomial norm over the scaled-DOA axis with root markers."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(np.asarray(w_grid, dtype=float), np.asarray(psi_norm, dtype=float), "k-")
    if doas_w is not None:
        for w in doas_w:
            ax.axvline(float(w), color="crimson", linestyle="--", linewidth=1.0)
    ax.axhline(1.0, color="gray", linestyle=":", linewidth=1.0)
    ax.set_xlabel("w")
    ax.set_ylabel("||psi(w)||")
    ax.grid(True, alpha=0.3)
    return _finish(fig, out_path)
