"""Static SVG figures for the calibration diagnostics.

Files are byte-reproducible: the SVG id salt is fixed and no creation date
is written.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .distributions import nbd_pmf_array  # noqa: E402

__all__ = ["plot_pit_histograms", "plot_quantile_profile", "plot_profile_histogram", "plot_pdf"]

_RC = {"svg.hashsalt": "cbdemand", "svg.fonttype": "path", "figure.dpi": 100}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_pit_histograms(hists: dict, path) -> None:
    """Side-by-side PIT histograms, one panel per model."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(hists), figsize=(4.5 * len(hists), 3.5), squeeze=False)
        for ax, (name, h) in zip(axes[0], hists.items()):
            e = h.edges
            ax.bar(e[:-1], h.density, width=np.diff(e), align="edge", color="#4c72b0", edgecolor="none")
            ax.axhline(1.0, color="k", lw=0.8, ls="--")
            ax.set_xlim(0, 1)
            ax.set_xlabel("CDF value at observation")
            ax.set_ylabel("density")
            ax.set_title(name)
        fig.tight_layout()
        _save(fig, path)


def plot_quantile_profile(profile, path) -> None:
    """Observed PIT fractions per group against the nominal quantiles."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        x = np.arange(len(profile.groups))
        for j, q in enumerate(profile.quantiles):
            ax.plot(x, profile.fractions[:, j], marker="o", ms=3, lw=1, label=f"{q:g}")
            ax.axhline(q, color="grey", lw=0.5, ls=":")
        ax.set_xticks(x)
        ax.set_xticklabels([str(g) for g in profile.groups], rotation=90 if len(x) > 12 else 0, fontsize=7)
        ax.set_ylim(0, 1)
        ax.set_xlabel(profile.group_name)
        ax.set_ylabel("fraction of PIT values below quantile")
        ax.legend(fontsize=6, ncol=len(profile.quantiles), loc="upper center")
        fig.tight_layout()
        _save(fig, path)


def plot_profile_histogram(frame, path, xlabel="x", ylabel="y", diagonal=False) -> None:
    """Per-bin mean with a one-standard-deviation band."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ok = frame["count"].to_numpy() > 0
        c = frame["center"].to_numpy()[ok]
        m = frame["mean"].to_numpy()[ok]
        s = np.nan_to_num(frame["std"].to_numpy()[ok])
        ax.errorbar(c, m, yerr=s, fmt="o", ms=3, lw=1, capsize=2)
        if diagonal and c.size:
            lim = [min(c.min(), m.min()), max(c.max(), m.max())]
            ax.plot(lim, lim, color="grey", lw=0.8, ls="--")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        _save(fig, path)


def plot_pdf(dist, observed, path, title="") -> None:
    """Probability mass of one forecast with the observation marked."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        top = max(int(dist.support_limit(1e-4)), int(observed) + 2)
        k = np.arange(top + 1)
        ax.bar(k, nbd_pmf_array(k, dist.mu, dist.inv_r), color="#4c72b0")
        ax.axvline(observed, color="#c44e52", lw=1.5)
        ax.set_xlabel("sales")
        ax.set_ylabel("probability")
        ax.set_title(title, fontsize=8)
        fig.tight_layout()
        _save(fig, path)
