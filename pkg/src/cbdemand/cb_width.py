"""Negative binomial width mode of Cyclic Boosting.

With the mean predictions held fixed, each (feature, bin) gets a factor and
the dispersion of a sample is ``r = 1 + 1 / prod(factors)``, so the inverse
dispersion ``1/r = P / (1 + P)`` is a logistic function of ``log P`` and
always lies in ``[0, 1]``.  Factors are fitted by cyclic coordinate descent;
each bin's log-factor minimizes the summed negative binomial log-likelihood of
its samples by golden-section search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_matrix, check_layout_compatible, check_targets
from .cb_mean import Explanation, MeanModel, _explain, predict_mean
from .distributions import NegBinArray
from .features import FeatureMatrix

__all__ = [
    "WidthTrainConfig",
    "WidthModel",
    "NumericError",
    "fit_width",
    "predict_factor_product",
    "predict_inv_dispersion",
    "predict_dispersion",
    "predict_pdf",
    "explain_width",
    "nbd_nll",
    "CyclicBoostingWidthRegressor",
]

_logger = logging.getLogger(__name__)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class NumericError(FloatingPointError):
    """Non-finite likelihood during training."""


@dataclass
class WidthTrainConfig:
    max_cycles: int = 20
    nll_tolerance: float = 1e-5
    prior_weight: float = 10.0
    log_factor_bounds: tuple[float, float] = (-6.0, 6.0)
    line_search_evaluations: int = 40

    def __post_init__(self):
        lo, hi = self.log_factor_bounds
        if not lo < 0 < hi:
            raise ValueError("log_factor_bounds must bracket 0")
        self.log_factor_bounds = (float(lo), float(hi))
        if self.line_search_evaluations < 3:
            raise ValueError("line_search_evaluations must be >= 3")
        if self.prior_weight < 0:
            raise ValueError("prior_weight must be >= 0")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")


@dataclass
class WidthModel:
    """Fitted per-(feature, bin) width factors."""

    names: list[str]
    n_bins: list[int]
    factors: list[np.ndarray]
    support: list[np.ndarray]
    labels: list[list[str]] | None = None
    history: list[dict] = field(default_factory=list)
    config: WidthTrainConfig = field(default_factory=WidthTrainConfig)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["log_factor_bounds"] = list(cfg["log_factor_bounds"])
        return {
            "names": list(self.names),
            "n_bins": list(self.n_bins),
            "factors": [f.tolist() for f in self.factors],
            "support": [s.tolist() for s in self.support],
            "labels": self.labels,
            "history": self.history,
            "config": cfg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WidthModel":
        cfg = dict(d.get("config", {}))
        if "log_factor_bounds" in cfg:
            cfg["log_factor_bounds"] = tuple(cfg["log_factor_bounds"])
        return cls(
            names=list(d["names"]),
            n_bins=list(d["n_bins"]),
            factors=[np.asarray(f, dtype=float) for f in d["factors"]],
            support=[np.asarray(s, dtype=np.int64) for s in d["support"]],
            labels=d.get("labels"),
            history=list(d.get("history", [])),
            config=WidthTrainConfig(**cfg),
        )


def nbd_nll(y, mu, inv_r) -> np.ndarray:
    """Per-sample negative log-likelihood of the negative binomial, unchecked.

    ``inv_r == 0`` is evaluated as Poisson.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    inv_r = np.asarray(inv_r, dtype=float)
    y, mu, inv_r = np.broadcast_arrays(y, mu, inv_r)
    pos = y > 0
    ysafe = np.where(pos, y, 1.0)
    out = np.empty(y.shape)
    pois = inv_r == 0
    nb = ~pois
    if np.any(pois):
        out[pois] = mu[pois] - special.xlogy(y[pois], mu[pois]) + special.gammaln(y[pois] + 1)
    if np.any(nb):
        a = inv_r[nb]
        ma = mu[nb] * a
        l1 = np.log1p(ma)
        r = 1.0 / a
        yy, pp = y[nb], pos[nb]
        body = yy * (np.log(ma) - l1) - np.log(ysafe[nb]) - special.betaln(r, ysafe[nb])
        out[nb] = r * l1 - np.where(pp, body, 0.0)
    return out


def _inv_r_from_log_product(log_p):
    # P / (1 + P) written as a logistic of log P
    return special.expit(log_p)


class _Problem:
    """Samples of a width fit with cached pieces of the likelihood."""

    def __init__(self, y, mu):
        self.y = y
        self.mu = mu
        self.pos = y > 0
        self.ysafe = np.where(self.pos, y, 1.0)
        self.log_y = np.log(self.ysafe)
        self.log_mu = np.log(mu)

    def nll(self, log_p, rows=None):
        if rows is None:
            y, mu, pos, ysafe, log_y, log_mu = self.y, self.mu, self.pos, self.ysafe, self.log_y, self.log_mu
        else:
            y, mu, pos, ysafe, log_y, log_mu = (
                self.y[rows], self.mu[rows], self.pos[rows], self.ysafe[rows], self.log_y[rows], self.log_mu[rows]
            )
        a = _inv_r_from_log_product(log_p)
        ma = mu * a
        l1 = np.log1p(ma)
        r = 1.0 / a
        body = y * (log_mu + np.log(a) - l1) - log_y - special.betaln(r, ysafe)
        out = r * l1 - np.where(pos, body, 0.0)
        return out


def _golden_section(objective, lo, hi, n_eval):
    """Minimize ``objective`` independently per bin over ``[lo, hi]``.

    ``objective`` maps a vector of per-bin abscissae to per-bin values.  Returns
    the best evaluated point and its value for each bin.
    """
    a = np.full_like(lo, lo)
    b = np.full_like(hi, hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = objective(c)
    fd = objective(d)
    best_x = np.where(fc <= fd, c, d)
    best_f = np.minimum(fc, fd)
    for _ in range(n_eval - 2):
        left = fc <= fd  # minimum lies in [a, d]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _INVPHI * (b - a)
        new_d = a + _INVPHI * (b - a)
        # reuse the surviving interior point, evaluate one new point per bin
        x_new = np.where(left, new_c, new_d)
        f_new = objective(x_new)
        c, fc, d, fd = (
            np.where(left, new_c, d),
            np.where(left, f_new, fd),
            np.where(left, c, new_d),
            np.where(left, fc, f_new),
        )
        better = f_new < best_f
        best_x = np.where(better, x_new, best_x)
        best_f = np.where(better, f_new, best_f)
    return best_x, best_f


def fit_width(targets, mu_hat, fm: FeatureMatrix, cfg: WidthTrainConfig | None = None) -> WidthModel:
    """Fit width factors with the mean predictions ``mu_hat`` held fixed.

    Per bin the log-factor is searched in ``cfg.log_factor_bounds``; the
    optimum is then shrunk toward 0 by ``n / (n + prior_weight)`` for a bin
    with ``n`` samples.  A bin keeps its current factor when the shrunk value
    would raise its likelihood loss, so the total loss never increases.
    """
    cfg = cfg or WidthTrainConfig()
    fm = check_feature_matrix(fm)
    y = check_targets(targets, fm.n_samples, integer=True)
    mu = np.asarray(mu_hat, dtype=float).ravel()
    if mu.shape[0] != fm.n_samples:
        raise ValueError(f"mu_hat has {mu.shape[0]} rows, features have {fm.n_samples}")
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise ValueError("mean predictions must be finite and > 0")
    if fm.n_samples == 0:
        raise ValueError("cannot fit on an empty sample")

    prob = _Problem(y, mu)
    codes = fm.codes
    theta = [np.zeros(nb) for nb in fm.n_bins]
    support = [np.bincount(codes[:, j], minlength=nb) for j, nb in enumerate(fm.n_bins)]
    log_p = np.zeros(fm.n_samples)
    lo, hi = cfg.log_factor_bounds

    def total(lp):
        terms = prob.nll(lp)
        value = float(np.sum(terms))
        if not math.isfinite(value):
            raise NumericError("non-finite negative log-likelihood")
        return value

    loss = total(log_p)
    history = [{"cycle": 0, "nll": loss}]
    updates = []
    for cycle in range(1, cfg.max_cycles + 1):
        start = loss
        for j in range(fm.n_features):
            cj = codes[:, j]
            nb = fm.n_bins[j]
            others = log_p - theta[j][cj]

            def bin_loss(t, cj=cj, others=others, nb=nb):
                return np.bincount(cj, weights=prob.nll(others + t[cj]), minlength=nb)

            t_opt, _ = _golden_section(bin_loss, np.full(nb, lo), np.full(nb, hi), cfg.line_search_evaluations)
            n = support[j].astype(float)
            shrink = np.divide(n, n + cfg.prior_weight, out=np.zeros(nb), where=(n + cfg.prior_weight) > 0)
            candidate = np.where(support[j] > 0, t_opt * shrink, 0.0)
            current_loss = bin_loss(theta[j])
            cand_loss = bin_loss(candidate)
            keep = (support[j] > 0) & (cand_loss > current_loss)
            theta[j] = np.where(keep, theta[j], candidate)
            log_p = others + theta[j][cj]
            new_loss = total(log_p)
            if new_loss > loss + 1e-9:
                _logger.warning("width loss increased on feature %s: %.12g -> %.12g",
                                fm.names[j], loss, new_loss)
            updates.append(new_loss)
            loss = new_loss
        history.append({"cycle": cycle, "nll": loss, "updates": updates})
        updates = []
        if start - loss <= cfg.nll_tolerance * abs(start):
            break

    return WidthModel(
        names=list(fm.names),
        n_bins=list(fm.n_bins),
        factors=[np.exp(t) for t in theta],
        support=support,
        history=history,
        config=cfg,
    )


def predict_factor_product(model: WidthModel, fm) -> np.ndarray:
    """Product of the sample's width factors, multiplied in feature order."""
    fm = check_feature_matrix(fm, n_bins=model.n_bins, names=model.names)
    check_layout_compatible(fm, model.names, model.n_bins)
    out = np.ones(fm.n_samples)
    for j, f in enumerate(model.factors):
        out = out * f[fm.codes[:, j]]
    return out


def predict_inv_dispersion(model: WidthModel, fm) -> np.ndarray:
    """``1/r = P / (1 + P)``; exactly 0 where the factor product is 0."""
    p = predict_factor_product(model, fm)
    with np.errstate(divide="ignore"):
        return 1.0 / (1.0 + 1.0 / p)


def predict_dispersion(model: WidthModel, fm) -> np.ndarray:
    """``r = 1 + 1/P``; ``inf`` (Poisson) where the factor product is 0."""
    p = predict_factor_product(model, fm)
    with np.errstate(divide="ignore"):
        return 1.0 + 1.0 / p


def predict_pdf(mean_model: MeanModel | None, width_model: WidthModel, fm_mean, fm_width=None,
                mu=None) -> NegBinArray:
    """Full negative binomial per sample.

    The mean comes from ``mu`` when given (e.g. residual-corrected means),
    otherwise from ``mean_model`` on ``fm_mean``.  ``fm_width`` defaults to
    ``fm_mean`` for models that share one layout.
    """
    if mu is None:
        mu = predict_mean(mean_model, fm_mean)
    inv_r = predict_inv_dispersion(width_model, fm_mean if fm_width is None else fm_width)
    return NegBinArray(np.asarray(mu, dtype=float), inv_r)


def explain_width(model: WidthModel, sample) -> Explanation:
    """Factor breakdown of one width prediction.

    ``prediction`` is the factor product ``P``; the dispersion is ``1 + 1/P``.
    """
    if isinstance(sample, FeatureMatrix):
        check_layout_compatible(sample, model.names, model.n_bins)
        sample = sample.codes[0]
    return _explain(1.0, model.names, model.factors, model.labels, sample)


class CyclicBoostingWidthRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_width`.

    ``fit`` takes the fixed mean predictions as a third argument and
    ``predict`` returns the inverse dispersion ``1/r``.

    Parameters
    ----------
    max_cycles : int, default=20
    nll_tolerance : float, default=1e-5
    prior_weight : float, default=10.0
    log_factor_bounds : tuple of float, default=(-6, 6)
    line_search_evaluations : int, default=40
    layout : BinLayout, optional
        Only used for bin labels in explanations.
    """

    def __init__(self, max_cycles=20, nll_tolerance=1e-5, prior_weight=10.0,
                 log_factor_bounds=(-6.0, 6.0), line_search_evaluations=40, layout=None):
        self.max_cycles = max_cycles
        self.nll_tolerance = nll_tolerance
        self.prior_weight = prior_weight
        self.log_factor_bounds = log_factor_bounds
        self.line_search_evaluations = line_search_evaluations
        self.layout = layout

    def fit(self, X, y, mu):
        fm = check_feature_matrix(X)
        cfg = WidthTrainConfig(
            max_cycles=self.max_cycles,
            nll_tolerance=self.nll_tolerance,
            prior_weight=self.prior_weight,
            log_factor_bounds=tuple(self.log_factor_bounds),
            line_search_evaluations=self.line_search_evaluations,
        )
        self.model_ = fit_width(y, mu, fm, cfg)
        if self.layout is not None:
            self.model_.labels = [self.layout[n].labels for n in fm.names]
        self.n_features_in_ = fm.n_features
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_inv_dispersion(self.model_, X)

    def predict_dispersion(self, X):
        check_is_fitted(self, "model_")
        return predict_dispersion(self.model_, X)

    def predict_pdf(self, X, mu) -> NegBinArray:
        check_is_fitted(self, "model_")
        return predict_pdf(None, self.model_, X, mu=mu)

    def score(self, X, y, mu):
        """Mean negative binomial log-likelihood (higher is better)."""
        inv_r = self.predict(X)
        return -float(np.mean(nbd_nll(y, mu, inv_r)))

    def explain(self, X):
        check_is_fitted(self, "model_")
        fm = check_feature_matrix(X, n_bins=self.model_.n_bins, names=self.model_.names)
        return [explain_width(self.model_, row) for row in fm.codes]
