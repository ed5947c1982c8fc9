"""Calibration and accuracy diagnostics for predicted count distributions.

The randomized PIT places each observation uniformly inside the CDF step it
falls on, which makes calibrated discrete forecasts produce exactly uniform
PIT values.  Everything downstream (histograms, quantile profiles, EMD
accuracy) is built from those values.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .distributions import NegBinArray, nbd_cdf_array

__all__ = [
    "SampleSizeWarning",
    "PitHistogram",
    "QuantileProfile",
    "CalibrationReport",
    "DEFAULT_QUANTILES",
    "randomized_pit",
    "pit_values",
    "pit_histogram",
    "inverse_quantile_profile",
    "emd_accuracy",
    "point_metrics",
    "profile_histogram",
    "calibration_report",
    "write_calibration_csv",
    "write_profile_csv",
]

DEFAULT_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9, 0.97)
CSV_VERSION = "1"


class SampleSizeWarning(UserWarning):
    """Too few samples for a meaningful PIT histogram."""


def randomized_pit(pred, y_obs: int, draw: float) -> float:
    """PIT value of one observation, placed inside its CDF step.

    ``pred`` is anything with a ``cdf`` method over the integers.  Returns
    ``lo + draw * (hi - lo)`` with ``lo = F(y - 1)`` and ``hi = F(y)``.
    """
    if y_obs < 0:
        raise ValueError("observation must be >= 0")
    lo = 0.0 if y_obs == 0 else float(pred.cdf(y_obs - 1))
    hi = float(pred.cdf(y_obs))
    return lo + draw * (hi - lo)


def _draws(n: int, seed: int, start: int = 0) -> np.ndarray:
    # the i-th draw is the i-th double of the seeded stream, so chunked
    # evaluation reproduces a single pass exactly
    bg = np.random.PCG64(seed)
    if start:
        bg.advance(start)
    return np.random.Generator(bg).random(n)


def pit_values(preds: NegBinArray, observations, seed: int = 0, start_index: int = 0) -> np.ndarray:
    """Randomized PIT values for a batch of negative binomial forecasts."""
    y = np.asarray(observations, dtype=float).ravel()
    if y.size != len(preds):
        raise ValueError(f"{len(preds)} predictions but {y.size} observations")
    if np.any(y < 0) or np.any(np.isnan(y)):
        raise ValueError("observations must be non-negative")
    lo = nbd_cdf_array(y - 1, preds.mu, preds.inv_r)
    hi = nbd_cdf_array(y, preds.mu, preds.inv_r)
    return lo + _draws(y.size, seed, start_index) * (hi - lo)


@dataclass(frozen=True)
class PitHistogram:
    """Counts of PIT values in ``n_bins`` equal bins over ``[0, 1]``."""

    counts: np.ndarray
    seed: int = 0

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    @property
    def density(self) -> np.ndarray:
        """Counts relative to the uniform expectation (1 = calibrated)."""
        return self.counts * self.n_bins / self.total

    def share(self, lo: float, hi: float) -> float:
        """Fraction of samples in bins lying within ``[lo, hi]``."""
        e = self.edges
        sel = (e[:-1] >= lo - 1e-12) & (e[1:] <= hi + 1e-12)
        return float(self.counts[sel].sum() / self.total)

    @classmethod
    def from_values(cls, u, n_bins: int = 100, seed: int = 0) -> "PitHistogram":
        if n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        u = np.asarray(u, dtype=float)
        if u.size == 0:
            raise ValueError("empty input")
        if u.size < 50 * n_bins:
            warnings.warn(f"{u.size} samples for {n_bins} PIT bins; the histogram is noisy",
                          SampleSizeWarning, stacklevel=3)
        idx = np.minimum((u * n_bins).astype(np.int64), n_bins - 1)
        return cls(np.bincount(idx, minlength=n_bins), seed)

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins, "total": self.total, "seed": self.seed,
                "counts": self.counts.tolist()}


def pit_histogram(preds: NegBinArray, observations, n_bins: int = 100, seed: int = 0) -> PitHistogram:
    """Histogram of randomized PIT values; deterministic given ``seed``."""
    if len(preds) == 0:
        raise ValueError("empty input")
    return PitHistogram.from_values(pit_values(preds, observations, seed), n_bins, seed)


def emd_accuracy(h: PitHistogram) -> float:
    """``1 - 2 * EMD`` between the PIT histogram and the uniform distribution.

    Both CDFs are taken at the upper edge of each bin: the empirical one as the
    inclusive cumulative count fraction, the uniform one as ``k / N``.  Their
    mean absolute difference is the EMD in units of the unit interval.  An
    exactly uniform histogram scores 1; all mass in one edge bin scores
    ``1 / N``.
    """
    if h.total == 0:
        raise ValueError("empty histogram")
    n = h.n_bins
    f_p = np.cumsum(h.counts) / h.total
    f_q = np.arange(1, n + 1) / n
    emd = float(np.sum(np.abs(f_p - f_q)) / n)
    return 1.0 - 2.0 * emd


@dataclass
class QuantileProfile:
    """Per-group fractions of PIT values at or below each quantile."""

    quantiles: tuple[float, ...]
    group_name: str
    groups: list
    fractions: np.ndarray  # (n_groups, n_quantiles)
    counts: np.ndarray
    omitted: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for g, frac, cnt in zip(self.groups, self.fractions, self.counts):
            for q, f in zip(self.quantiles, frac):
                rows.append({"group": g, "quantile": q, "fraction": float(f), "count": int(cnt)})
        return pd.DataFrame(rows, columns=["group", "quantile", "fraction", "count"])

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.fractions - np.asarray(self.quantiles)[None, :])))

    def to_dict(self) -> dict:
        return {
            "group_name": self.group_name,
            "quantiles": list(self.quantiles),
            "groups": [_jsonable(g) for g in self.groups],
            "fractions": self.fractions.tolist(),
            "counts": self.counts.tolist(),
            "omitted": [_jsonable(g) for g in self.omitted],
        }


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (pd.Timestamp,)):
        return v.isoformat()
    return v


def inverse_quantile_profile(preds: NegBinArray, observations, quantiles=DEFAULT_QUANTILES,
                             group_values=None, seed: int = 0, group_name: str = "all",
                             pit=None) -> QuantileProfile:
    """Fraction of samples per group whose PIT value is ``<= q``.

    Calibrated forecasts give fractions close to ``q`` in every group.  Pass
    precomputed ``pit`` values to skip the PIT step.
    """
    q = np.asarray(quantiles, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any(q <= 0) or np.any(q >= 1) or np.any(np.diff(q) <= 0):
        raise ValueError("quantiles must be strictly increasing in (0, 1)")
    u = pit_values(preds, observations, seed) if pit is None else np.asarray(pit, dtype=float)
    if group_values is None:
        group_values = np.zeros(u.size, dtype=np.int64)
    g = pd.Series(np.asarray(group_values))
    if g.size != u.size:
        raise ValueError("group values are not aligned with the samples")
    below = u[:, None] <= q[None, :]
    frame = pd.DataFrame(below.astype(np.int64))
    grouped = frame.groupby(g.to_numpy(), sort=True, dropna=False)
    sums = grouped.sum()
    counts = grouped.size()
    present = counts > 0
    omitted = list(counts.index[~present])
    sums, counts = sums[present], counts[present]
    fractions = sums.to_numpy(dtype=float) / counts.to_numpy()[:, None]
    return QuantileProfile(tuple(float(x) for x in q), group_name, list(counts.index), fractions,
                           counts.to_numpy(), omitted)


def point_metrics(mu_hat, y) -> tuple[float, float]:
    """Mean absolute deviation and mean squared error."""
    mu_hat = np.asarray(mu_hat, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if mu_hat.size == 0:
        raise ValueError("empty input")
    if mu_hat.shape != y.shape:
        raise ValueError("predictions and targets are not aligned")
    d = mu_hat - y
    return float(np.mean(np.abs(d))), float(np.mean(d * d))


def profile_histogram(x, y, bins=20) -> pd.DataFrame:
    """Mean, sample standard deviation and count of ``y`` per bin of ``x``.

    ``bins`` is a bin count (equidistant over the range of ``x``) or an array
    of edges.  Empty bins are kept with count 0 and NaN statistics.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y are not aligned")
    if np.ndim(bins) == 0:
        if int(bins) < 1:
            raise ValueError("need at least one bin")
        edges = np.linspace(np.nanmin(x), np.nanmax(x), int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
    nb = edges.size - 1
    idx = np.searchsorted(edges, x, side="right") - 1
    idx[x == edges[-1]] = nb - 1
    ok = (idx >= 0) & (idx < nb)
    idx, yy = idx[ok], y[ok]
    count = np.bincount(idx, minlength=nb)
    s1 = np.bincount(idx, weights=yy, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / count
        dev = yy - mean[idx]
        ss = np.bincount(idx, weights=dev * dev, minlength=nb)
        std = np.sqrt(ss / (count - 1))
    mean[count == 0] = np.nan
    std[count < 2] = np.nan
    return pd.DataFrame({
        "bin_lo": edges[:-1],
        "bin_hi": edges[1:],
        "center": 0.5 * (edges[:-1] + edges[1:]),
        "mean": mean,
        "std": std,
        "count": count,
    })


@dataclass
class CalibrationReport:
    """PIT histogram, EMD accuracy and point metrics of one model."""

    pit: PitHistogram
    accuracy: float
    mad: float
    mse: float
    profiles: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "emd_accuracy": self.accuracy,
            "mad": self.mad,
            "mse": self.mse,
            "pit": self.pit.to_dict(),
            "profiles": {k: p.to_dict() for k, p in self.profiles.items()},
        }


def calibration_report(preds: NegBinArray, observations, n_bins: int = 100, seed: int = 0,
                       quantiles=DEFAULT_QUANTILES, groupings: dict | None = None) -> CalibrationReport:
    """Compute every diagnostic from one shared set of PIT values."""
    u = pit_values(preds, observations, seed)
    hist = PitHistogram.from_values(u, n_bins, seed)
    mad, mse = point_metrics(preds.mu, observations)
    profiles = {}
    for name, values in (groupings or {}).items():
        profiles[name] = inverse_quantile_profile(preds, observations, quantiles, values, seed,
                                                  group_name=name, pit=u)
    return CalibrationReport(hist, emd_accuracy(hist), mad, mse, profiles)


def write_calibration_csv(path, reports: dict) -> None:
    """One row per (model, PIT bin); first line is a versioned header comment."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# cbdemand calibration v{CSV_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "bin", "bin_lo", "bin_hi", "count", "density"])
        for name, rep in reports.items():
            e = rep.pit.edges
            for k, (c, d) in enumerate(zip(rep.pit.counts, rep.pit.density)):
                w.writerow([name, k, f"{e[k]:.6f}", f"{e[k + 1]:.6f}", int(c), f"{d:.10g}"])


def write_profile_csv(path, frame: pd.DataFrame) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# cbdemand table v{CSV_VERSION}\n")
        frame.to_csv(fh, index=False, lineterminator="\n", float_format="%.10g")
