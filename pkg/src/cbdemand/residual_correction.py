"""Per-series exponential smoothing of residuals.

The correction factor at time ``t`` is the ratio of the EWMA of past targets to
the EWMA of past model predictions, both taken over times ``<= t - lag``.  The
normalizing weight sums cancel in the ratio, so the factor is computed from
the raw recursive sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import lfilter

__all__ = [
    "ewma",
    "grouped_lagged_ewma",
    "correction_factors",
    "correct",
    "ResidualCorrector",
]


def ewma(series, alpha: float) -> float:
    """Normalized EWMA of a time-ordered series, evaluated at its last element.

    >>> ewma([1, 2, 4], 0.5)
    3.0
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("ewma of an empty series")
    _check_alpha(alpha)
    w = (1.0 - alpha) ** np.arange(x.size)[::-1]
    return float(np.dot(w, x) / w.sum())


def _check_alpha(alpha):
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def _group_slices(groups, n):
    """Stable order of rows by group, and slice bounds of each group in it."""
    if groups is None:
        return np.arange(n), [(0, n)]
    if not isinstance(groups, pd.DataFrame) and np.ndim(groups) == 2:
        groups = pd.DataFrame(np.asarray(groups))
    if isinstance(groups, pd.DataFrame):
        codes = groups.groupby(list(groups.columns), sort=False, dropna=False).ngroup().to_numpy()
    else:
        codes, _ = pd.factorize(np.asarray(groups))
    if codes.shape[0] != n:
        raise ValueError(f"groups have {codes.shape[0]} rows, series have {n}")
    order = np.argsort(codes, kind="stable")
    bounds = np.flatnonzero(np.diff(codes[order])) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [n]])
    return order, list(zip(starts.tolist(), ends.tolist()))


def _running_sums(x, alpha):
    # s_t = x_t + (1 - alpha) s_{t-1}
    return lfilter([1.0], [1.0, -(1.0 - alpha)], x)


def _shift(a, lag, fill):
    out = np.full_like(a, fill)
    if lag < a.size:
        out[lag:] = a[: a.size - lag]
    return out


def grouped_lagged_ewma(x, alpha: float, lag: int, groups=None) -> np.ndarray:
    """Normalized EWMA of ``x`` over steps ``<= t - lag`` within each group.

    Rows must be time-ordered within each group; ``lag`` counts rows of the
    group.  NaN where no history is available yet.  NaN inputs are treated
    as 0 with zero weight.
    """
    _check_alpha(alpha)
    if lag < 0:
        raise ValueError("lag must be >= 0")
    x = np.asarray(x, dtype=float).ravel()
    order, slices = _group_slices(groups, x.size)
    out = np.empty(x.size)
    for a, b in slices:
        idx = order[a:b]
        xi = x[idx]
        known = ~np.isnan(xi)
        num = _shift(_running_sums(np.where(known, xi, 0.0), alpha), lag, np.nan)
        den = _shift(_running_sums(known.astype(float), alpha), lag, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[idx] = np.where(den > 0, num / den, np.nan)
    return out


def correction_factors(mu_ml, y, alpha: float = 0.15, lag: int = 2, groups=None,
                       clamp: tuple[float, float] = (0.05, 20.0)) -> np.ndarray:
    """Factor ``EWMA(y) / EWMA(mu_ml)`` over times ``<= t - lag`` per series.

    Exactly 1 during the first ``lag`` steps of a series and wherever the
    prediction EWMA is 0; otherwise clamped to ``clamp``.  Targets that are
    NaN (not yet observed) are skipped together with their prediction.
    """
    _check_alpha(alpha)
    if lag < 1:
        raise ValueError("lag must be >= 1")
    lo, hi = clamp
    if not 0 <= lo <= 1 <= hi:
        raise ValueError("clamp must satisfy 0 <= low <= 1 <= high")
    mu_ml = np.asarray(mu_ml, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if mu_ml.shape != y.shape:
        raise ValueError(f"misaligned series: {mu_ml.size} predictions, {y.size} targets")
    order, slices = _group_slices(groups, y.size)
    out = np.ones(y.size)
    for a, b in slices:
        idx = order[a:b]
        yi = y[idx]
        known = ~np.isnan(yi)
        num = _shift(_running_sums(np.where(known, yi, 0.0), alpha), lag, 0.0)
        den = _shift(_running_sums(np.where(known, mu_ml[idx], 0.0), alpha), lag, 0.0)
        ratio = np.divide(num, den, out=np.ones_like(num), where=den > 0)
        out[idx] = np.where(den > 0, np.clip(ratio, lo, hi), 1.0)
    return out


def correct(mu_ml, y, alpha: float = 0.15, lag: int = 2, groups=None,
            clamp: tuple[float, float] = (0.05, 20.0)) -> np.ndarray:
    """Residual-corrected predictions ``factor * mu_ml``."""
    f = correction_factors(mu_ml, y, alpha, lag, groups, clamp)
    return f * np.asarray(mu_ml, dtype=float).ravel()


@dataclass
class ResidualCorrector:
    """Configured residual correction.

    Stateless: the EWMA state is recomputed from the stored histories on each
    call.
    """

    alpha: float = 0.15
    lag: int = 2
    floor: float = 0.05
    ceiling: float = 20.0

    def factors(self, mu_ml, y, groups=None) -> np.ndarray:
        return correction_factors(mu_ml, y, self.alpha, self.lag, groups, (self.floor, self.ceiling))

    def transform(self, mu_ml, y, groups=None) -> np.ndarray:
        return self.factors(mu_ml, y, groups) * np.asarray(mu_ml, dtype=float).ravel()
