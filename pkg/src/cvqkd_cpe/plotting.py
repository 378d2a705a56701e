"""Figures for sweep results: excess noise and residual-phase MSE versus pilot SNR."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

XI_THRESHOLD_SNU = 0.01

_STYLE = {
    "argument": dict(color="tab:blue", marker="o", label="argument"),
    "ukf": dict(color="tab:red", marker="s", label="UKF"),
}


def _series(table, method):
    rows = sorted((r for r in table.rows if r.method == method), key=lambda r: r.pilot_snr_db)
    snr = np.array([r.pilot_snr_db for r in rows])
    return rows, snr


def plot_excess_noise(table, ax=None):
    if ax is None:
        _, ax = plt.subplots(figsize=(5, 3.6))
    for method in sorted({r.method for r in table.rows}):
        rows, snr = _series(table, method)
        xi = np.array([r.mean_xi_snu for r in rows])
        err = np.nan_to_num(np.array([r.stderr_xi for r in rows]))
        ax.errorbar(snr, xi, yerr=err, capsize=2, **_STYLE.get(method, dict(label=method)))
    ax.axhline(XI_THRESHOLD_SNU, color="0.5", ls="--", lw=1)
    ax.set_xlabel("pilot SNR [dB]")
    ax.set_ylabel(r"excess noise $\xi$ [SNU]")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return ax


def plot_phase_mse(table, ax=None):
    if ax is None:
        _, ax = plt.subplots(figsize=(5, 3.6))
    for method in sorted({r.method for r in table.rows}):
        rows, snr = _series(table, method)
        mse = np.array([r.mean_phase_mse_rad2 for r in rows])
        ax.semilogy(snr, mse, **_STYLE.get(method, dict(label=method)))
    ax.set_xlabel("pilot SNR [dB]")
    ax.set_ylabel(r"residual phase MSE [rad$^2$]")
    ax.grid(alpha=0.3, which="both")
    ax.legend(frameon=False)
    return ax


def render_figures(table, outdir, fmt="png"):
    """Write both figures into ``outdir`` and return their paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fn in (("excess_noise", plot_excess_noise), ("phase_mse", plot_phase_mse)):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        fn(table, ax)
        fig.tight_layout()
        path = outdir / f"{name}_vs_pilot_snr.{fmt}"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths
