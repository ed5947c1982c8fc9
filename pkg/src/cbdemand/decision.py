"""Turn a predicted count distribution into the point decision a cost implies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import (
    NegBinArray,
    NegBinDistribution,
    nbd_cdf,
    nbd_pmf_array,
    nbd_quantile,
    nbd_quantile_array,
)

__all__ = [
    "CostFunction",
    "newsvendor_quantile",
    "truncated_support",
    "expected_cost",
    "optimal_point_estimate",
    "scan_optimum",
    "decisions",
]

_SUPPORT_TAIL = 1e-12


@dataclass(frozen=True)
class CostFunction:
    """Cost ``C(p, t)`` of deciding ``p`` when the demand turns out ``t``.

    Use the constructors: :meth:`quadratic`, :meth:`absolute`,
    :meth:`linear_asymmetric` (underage ``b``, overage ``h``) and
    :meth:`custom` (a vectorized callable).
    """

    kind: str
    b: float = 1.0
    h: float = 1.0
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "absolute", "linear_asymmetric", "custom"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "linear_asymmetric" and not (self.b > 0 and self.h > 0):
            raise ValueError("underage and overage costs must be > 0")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom cost needs a callable")

    @classmethod
    def quadratic(cls):
        return cls("quadratic")

    @classmethod
    def absolute(cls):
        return cls("absolute")

    @classmethod
    def linear_asymmetric(cls, b: float, h: float):
        return cls("linear_asymmetric", float(b), float(h))

    @classmethod
    def custom(cls, func: Callable):
        return cls("custom", func=func)

    def __call__(self, p, t):
        p = np.asarray(p, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.kind == "quadratic":
            return (p - t) ** 2
        if self.kind == "absolute":
            return np.abs(p - t)
        if self.kind == "linear_asymmetric":
            return self.b * np.maximum(t - p, 0.0) + self.h * np.maximum(p - t, 0.0)
        return np.asarray(self.func(p, t), dtype=float)


def newsvendor_quantile(b: float, h: float) -> float:
    """Cost-optimal CDF level ``b / (b + h)``."""
    if not (b > 0 and h > 0):
        raise ValueError("underage and overage costs must be > 0")
    return b / (b + h)


def truncated_support(d: NegBinDistribution, tail: float = _SUPPORT_TAIL) -> np.ndarray:
    """Integers ``0..T`` with ``T`` the first point where ``F(T) > 1 - tail``."""
    top = int(nbd_quantile_array(1.0 - tail, d.mu, d.inv_r))
    return np.arange(top + 1)


def expected_cost(d: NegBinDistribution, cost: CostFunction, p) -> np.ndarray:
    """Expected cost of decision(s) ``p`` over the truncated support."""
    t = truncated_support(d)
    w = nbd_pmf_array(t, d.mu, d.inv_r)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    c = cost(p[:, None], t[None, :])
    out = c @ w
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite expected cost")
    return out


def scan_optimum(d: NegBinDistribution, cost: CostFunction) -> tuple[int, float]:
    """Integer decision minimizing the expected cost, by exhaustive scan."""
    t = truncated_support(d)
    values = expected_cost(d, cost, t)
    k = int(np.argmin(values))
    return int(t[k]), float(values[k])


def _median(d: NegBinDistribution) -> int:
    # smallest x with F(x) >= 1/2; nbd_quantile gives the smallest with F(x) > 1/2
    x = nbd_quantile(0.5, d)
    if x > 0 and nbd_cdf(x - 1, d) >= 0.5:
        x -= 1
    return x


def optimal_point_estimate(d: NegBinDistribution, cost: CostFunction):
    """Point decision minimizing the expected ``cost`` under ``d``.

    Quadratic cost gives the real-valued mean; the other kinds give integers.
    """
    if cost.kind == "quadratic":
        return float(d.mu)
    if cost.kind == "absolute":
        return _median(d)
    if cost.kind == "linear_asymmetric":
        return nbd_quantile(newsvendor_quantile(cost.b, cost.h), d)
    p, value = scan_optimum(d, cost)
    if not math.isfinite(value):
        raise FloatingPointError("non-finite expected cost")
    return p


def decisions(preds: NegBinArray, cost: CostFunction) -> np.ndarray:
    """Vectorized :func:`optimal_point_estimate` for a batch of forecasts."""
    if cost.kind == "quadratic":
        return preds.mu.copy()
    if cost.kind == "linear_asymmetric":
        return nbd_quantile_array(newsvendor_quantile(cost.b, cost.h), preds.mu, preds.inv_r)
    return np.array([optimal_point_estimate(d, cost) for d in preds])
