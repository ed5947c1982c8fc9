"""Negative binomial and Poisson count distributions.

The negative binomial is parameterized by its mean ``mu`` and the inverse
dispersion ``inv_r = 1/r`` bounded to ``[0, 1]``.  ``inv_r == 0`` is an exact
Poisson branch, not a numerical limit.

Scalar functions (``nbd_pmf``, ``nbd_cdf``, ``nbd_quantile``) take a
:class:`NegBinDistribution`.  The ``*_array`` variants are vectorized over
samples and are what the models and diagnostics use internally.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "ParameterDomainError",
    "NegBinDistribution",
    "PoissonDistribution",
    "nbd_logpmf",
    "nbd_pmf",
    "nbd_cdf",
    "nbd_quantile",
    "nbd_pmf_array",
    "nbd_cdf_array",
    "nbd_quantile_array",
    "variance_from_dispersion",
    "dispersion_from_variance",
    "NegBinArray",
    "TAIL_CUT",
]

#: pmf value below which the infinite support is truncated for sums
TAIL_CUT = 1e-15


class ParameterDomainError(ValueError):
    """Raised for distribution parameters outside their valid domain."""


def _check_params(mu, inv_r):
    mu = np.asarray(mu, dtype=float)
    inv_r = np.asarray(inv_r, dtype=float)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise ParameterDomainError("mu must be finite and > 0")
    if not np.all(np.isfinite(inv_r)) or np.any(inv_r < 0) or np.any(inv_r > 1):
        raise ParameterDomainError("inv_r must lie in [0, 1]")
    return mu, inv_r


@dataclass(frozen=True)
class NegBinDistribution:
    """Negative binomial distribution with mean ``mu`` and inverse dispersion ``inv_r``.

    Variance is ``mu + mu**2 * inv_r``; ``inv_r = 0`` is the Poisson distribution.
    """

    mu: float
    inv_r: float

    def __post_init__(self):
        _check_params(self.mu, self.inv_r)

    @property
    def r(self) -> float:
        """Dispersion parameter; ``inf`` in the Poisson case."""
        return math.inf if self.inv_r == 0 else 1.0 / self.inv_r

    @property
    def variance(self) -> float:
        return variance_from_dispersion(self.mu, self.inv_r)

    def pmf(self, y):
        return nbd_pmf(y, self)

    def cdf(self, y):
        return nbd_cdf(y, self)

    def quantile(self, q):
        return nbd_quantile(q, self)

    def mode(self) -> int:
        if self.inv_r == 0:
            return int(math.floor(self.mu)) if self.mu >= 1 else 0
        r = self.r
        # mode of NB(r, p) with success prob mu/(r+mu)
        return max(0, int(math.floor((r - 1) * self.mu / r)))

    def support_limit(self, tail: float = TAIL_CUT) -> int:
        """Smallest ``y`` above the mean where ``pmf(y) < tail``."""
        y = max(self.mode(), int(math.ceil(self.mu)))
        while nbd_pmf(y, self) >= tail:
            y += max(1, y // 16)
        return y


@dataclass(frozen=True)
class PoissonDistribution(NegBinDistribution):
    """Poisson distribution, the ``inv_r = 0`` member of the family."""

    mu: float
    inv_r: float = field(default=0.0, init=False)


def nbd_logpmf(y, mu, inv_r):
    """Log probability mass of the negative binomial, vectorized.

    Evaluated in log space; for ``y >= 1`` the ratio ``Gamma(r+y)/Gamma(r)`` is
    written through ``betaln`` so that very large ``r`` stays accurate.
    """
    y = np.asarray(y, dtype=float)
    mu, inv_r = _check_params(mu, inv_r)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise ParameterDomainError("y must be a non-negative integer")
    y, mu, inv_r = np.broadcast_arrays(y, mu, inv_r)

    out = np.empty(y.shape, dtype=float)
    pois = inv_r == 0
    if np.any(pois):
        yp, mp = y[pois], mu[pois]
        out[pois] = special.xlogy(yp, mp) - mp - special.gammaln(yp + 1)
    nb = ~pois
    if np.any(nb):
        yn, mn, a = y[nb], mu[nb], inv_r[nb]
        r = 1.0 / a
        ma = mn * a
        # r * log(r / (r + mu)) and y * log(mu / (r + mu))
        head = -r * np.log1p(ma)
        tail = yn * (np.log(ma) - np.log1p(ma))
        pos = yn > 0
        comb = np.zeros_like(yn)
        comb[pos] = -np.log(yn[pos]) - special.betaln(r[pos], yn[pos])
        out[nb] = comb + head + np.where(pos, tail, 0.0)
    return out


def nbd_pmf_array(y, mu, inv_r):
    """Vectorized probability mass."""
    return np.exp(nbd_logpmf(y, mu, inv_r))


def nbd_cdf_array(y, mu, inv_r):
    """Vectorized CDF ``P(Y <= y)``; ``y < 0`` gives 0.

    Uses the regularized incomplete beta (negative binomial) and the
    regularized upper incomplete gamma (Poisson) closed forms.
    """
    y = np.asarray(y, dtype=float)
    mu, inv_r = _check_params(mu, inv_r)
    y, mu, inv_r = np.broadcast_arrays(y, mu, inv_r)
    out = np.zeros(y.shape, dtype=float)
    valid = y >= 0
    yf = np.floor(np.where(valid, y, 0.0))
    pois = valid & (inv_r == 0)
    nb = valid & (inv_r > 0)
    if np.any(pois):
        out[pois] = special.gammaincc(yf[pois] + 1.0, mu[pois])
    if np.any(nb):
        a = inv_r[nb]
        r = 1.0 / a
        p = 1.0 / (1.0 + mu[nb] * a)  # r / (r + mu)
        out[nb] = special.betainc(r, yf[nb] + 1.0, p)
    return np.clip(out, 0.0, 1.0)


def nbd_pmf(y: int, d: NegBinDistribution) -> float:
    """Probability mass ``P(Y = y)`` for one distribution."""
    return float(nbd_pmf_array(y, d.mu, d.inv_r))


def nbd_cdf(y: int, d: NegBinDistribution) -> float:
    """CDF ``P(Y <= y)`` as an explicit sum of the pmf over ``0..y``.

    The terms are generated by the pmf recurrence in log space, so the sum is
    exact up to rounding regardless of how large ``y`` is.
    """
    if y < 0:
        return 0.0
    y = int(y)
    logp = float(nbd_logpmf(0, d.mu, d.inv_r))
    if d.inv_r == 0:
        log_step = math.log(d.mu)
        r = None
    else:
        r = 1.0 / d.inv_r
        log_step = math.log(d.mu * d.inv_r) - math.log1p(d.mu * d.inv_r)
    total = math.exp(logp)
    for k in range(y):
        if r is None:
            logp += log_step - math.log(k + 1)
        else:
            logp += math.log(r + k) - math.log(k + 1) + log_step
        total += math.exp(logp)
    return min(total, 1.0)


def nbd_quantile(q: float, d: NegBinDistribution) -> int:
    """Generalized inverse ``inf{x : F(x) > q}``.

    Scans linearly from the mode, reusing the running CDF.
    """
    if not (0.0 <= q < 1.0):
        raise ParameterDomainError(f"quantile level must lie in [0, 1), got {q}")
    x = d.mode()
    cdf_x = nbd_cdf(x, d)
    if cdf_x > q:
        # walk down while the previous value still exceeds q
        while x > 0:
            prev = cdf_x - nbd_pmf(x, d)
            if abs(prev - q) < 1e-9:
                # subtraction has lost precision near q, resum from zero
                prev = nbd_cdf(x - 1, d)
            if prev > q:
                x -= 1
                cdf_x = prev
            else:
                break
        return x
    while cdf_x <= q:
        x += 1
        p = nbd_pmf(x, d)
        cdf_x += p
        if cdf_x >= 1.0 or (p == 0.0 and x > d.mu):
            break
    return x


def nbd_quantile_array(q, mu, inv_r):
    """Vectorized generalized inverse ``inf{x : F(x) > q}``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or np.any(q >= 1):
        raise ParameterDomainError("quantile levels must lie in [0, 1)")
    mu, inv_r = _check_params(mu, inv_r)
    q, mu, inv_r = np.broadcast_arrays(q, mu, inv_r)
    shape = q.shape
    q, mu, inv_r = (np.ravel(a).astype(float) for a in (q, mu, inv_r))
    sd = np.sqrt(mu + mu * mu * inv_r)
    z = special.ndtri(np.clip(q, 1e-12, 1 - 1e-12))
    guess = np.maximum(np.floor(mu + z * sd), 0.0)

    def above(x, sel):
        return nbd_cdf_array(x, mu[sel], inv_r[sel]) > q[sel]

    # bracket lo < answer <= hi with F(lo) <= q < F(hi), lo = -1 meaning "none"
    ok = above(guess, slice(None))
    hi = np.where(ok, guess, np.inf)
    lo = np.where(ok, -1.0, guess)
    step = np.ceil(np.maximum(sd, 1.0))
    todo = ~ok
    while np.any(todo):
        cand = lo[todo] + step[todo]
        hit = above(cand, todo)
        idx = np.flatnonzero(todo)
        hi[idx[hit]] = cand[hit]
        lo[idx[~hit]] = cand[~hit]
        step[idx[~hit]] *= 2
        todo[idx[hit]] = False
    # the guess may lie far above the answer; tighten lo from below
    todo = ok & (guess > 0)
    step = np.ceil(np.maximum(sd, 1.0))
    while np.any(todo):
        idx = np.flatnonzero(todo)
        cand = np.maximum(hi[idx] - step[idx], 0.0)
        hit = above(cand, todo)
        hi[idx[hit]] = cand[hit]
        lo[idx[~hit]] = cand[~hit]
        step[idx[hit]] *= 2
        todo[idx[~hit]] = False
        todo[idx[hit & (cand == 0)]] = False
    while True:
        gap = hi - lo > 1
        if not np.any(gap):
            break
        mid = np.floor((lo[gap] + hi[gap]) / 2)
        hit = above(mid, gap)
        idx = np.flatnonzero(gap)
        hi[idx[hit]] = mid[hit]
        lo[idx[~hit]] = mid[~hit]
    return hi.astype(np.int64).reshape(shape)


def variance_from_dispersion(mu, inv_r):
    """``mu + mu**2 * inv_r``."""
    mu, inv_r = _check_params(mu, inv_r)
    out = mu + mu * mu * inv_r
    return float(out) if out.ndim == 0 else out


class DispersionClampWarning(RuntimeWarning):
    pass


def dispersion_from_variance(mu, sigma2):
    """Invert ``variance_from_dispersion``; result is clamped to ``[0, 1]``.

    Under-dispersed input (``sigma2 < mu``) maps to the Poisson value 0 and
    emits a :class:`DispersionClampWarning` carrying the number of clamped values.
    """
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(mu <= 0):
        raise ParameterDomainError("mu must be > 0")
    raw = (sigma2 - mu) / (mu * mu)
    n_low = int(np.count_nonzero(raw < 0))
    if n_low:
        warnings.warn(f"{n_low} variance value(s) below the mean clamped to inv_r=0",
                      DispersionClampWarning, stacklevel=2)
    out = np.clip(raw, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NegBinArray:
    """A vector of negative binomial distributions stored column-wise.

    Indexing returns a :class:`NegBinDistribution`.
    """

    mu: np.ndarray
    inv_r: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        inv_r = np.broadcast_to(np.asarray(self.inv_r, dtype=float), mu.shape).copy()
        _check_params(mu, inv_r)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "inv_r", inv_r)

    def __len__(self):
        return self.mu.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return NegBinDistribution(float(self.mu[i]), float(self.inv_r[i]))
        return NegBinArray(self.mu[i], self.inv_r[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def variance(self) -> np.ndarray:
        return self.mu + self.mu * self.mu * self.inv_r

    @property
    def r(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.inv_r

    def pmf(self, y):
        return nbd_pmf_array(y, self.mu, self.inv_r)

    def cdf(self, y):
        return nbd_cdf_array(y, self.mu, self.inv_r)

    def quantile(self, q):
        return nbd_quantile_array(q, self.mu, self.inv_r)

    def as_poisson(self) -> "NegBinArray":
        """Same means, zero inverse dispersion."""
        return NegBinArray(self.mu, np.zeros_like(self.mu))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One draw per distribution via the gamma-Poisson mixture."""
        lam = self.mu.copy()
        nb = self.inv_r > 0
        if np.any(nb):
            shape = 1.0 / self.inv_r[nb]
            lam[nb] = rng.gamma(shape, self.mu[nb] / shape)
        return rng.poisson(lam)
