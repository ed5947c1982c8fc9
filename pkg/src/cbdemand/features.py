"""Feature construction and discretization.

Every feature, raw or derived, is turned into a vector of bin indices.  Each
categorical and continuous feature reserves its last bin for missing or
unseen values; an interaction feature indexes the row-major product of its
two parents' bins.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "FeatureSpec",
    "FeatureBins",
    "BinLayout",
    "FeatureMatrix",
    "FeatureBinner",
    "build_calendar_features",
    "build_event_windows",
    "build_price_features",
    "fit_bins",
    "apply_bins",
    "specs_to_yaml",
    "specs_from_yaml",
    "WIDE_WINDOW_EVENTS",
    "OUTSIDE",
]

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
INTERACTION = "interaction"
_KINDS = (CATEGORICAL, CONTINUOUS, INTERACTION)

#: event names that get the (-7, +3) day window, all others get (-3, +1)
WIDE_WINDOW_EVENTS = frozenset({"Christmas", "Easter"})
WIDE_WINDOW = (-7, 3)
NARROW_WINDOW = (-3, 1)
OUTSIDE = "outside"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    """Declaration of one model feature.

    ``provenance`` is ``"target"`` for features computed from the target
    series (lagged averages) and ``"exogenous"`` otherwise.
    """

    name: str
    kind: str
    bin_count: int = 20
    parents: tuple[str, str] | None = None
    provenance: str = "exogenous"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise FeatureError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.bin_count < 1:
            raise FeatureError(f"feature {self.name!r}: bin_count must be >= 1")
        if self.kind == INTERACTION:
            if self.parents is None or len(self.parents) != 2:
                raise FeatureError(f"interaction {self.name!r} needs exactly two parents")
            object.__setattr__(self, "parents", tuple(self.parents))
        elif self.parents is not None:
            raise FeatureError(f"feature {self.name!r}: only interactions have parents")

    @classmethod
    def categorical(cls, name, **kw):
        return cls(name, CATEGORICAL, **kw)

    @classmethod
    def continuous(cls, name, bin_count=20, **kw):
        return cls(name, CONTINUOUS, bin_count=bin_count, **kw)

    @classmethod
    def interaction(cls, a, b, name=None, **kw):
        return cls(name or f"{a}__{b}", INTERACTION, parents=(a, b), **kw)

    def to_dict(self):
        d = asdict(self)
        if d["parents"] is not None:
            d["parents"] = list(d["parents"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("parents") is not None:
            d["parents"] = tuple(d["parents"])
        return cls(**d)


def specs_to_yaml(specs: Sequence[FeatureSpec]) -> str:
    return yaml.safe_dump({"features": [s.to_dict() for s in specs]}, sort_keys=False)


def specs_from_yaml(text: str) -> list[FeatureSpec]:
    doc = yaml.safe_load(text) or {}
    return [FeatureSpec.from_dict(d) for d in doc.get("features", [])]


def resolve_provenance(specs: Sequence[FeatureSpec]) -> dict[str, str]:
    """Provenance per feature, with interactions inheriting ``target`` from a parent."""
    out = {}
    for s in specs:
        if s.kind == INTERACTION:
            tainted = any(out.get(p) == "target" for p in s.parents)
            out[s.name] = "target" if tainted or s.provenance == "target" else "exogenous"
        else:
            out[s.name] = s.provenance
    return out


# --------------------------------------------------------------------------
# raw feature builders


def build_calendar_features(dates, epoch=_dt.date(2013, 1, 1)) -> pd.DataFrame:
    """Trend and seasonality columns for a sequence of dates."""
    dates = pd.DatetimeIndex(pd.to_datetime(dates))
    epoch = pd.Timestamp(epoch)
    if len(dates) and dates.min() < epoch:
        raise FeatureError(f"dates before epoch {epoch.date()} are not allowed")
    return pd.DataFrame(
        {
            "days_since_epoch": (dates - epoch).days.astype(np.int64),
            "day_of_week": dates.dayofweek.astype(np.int64),
            "day_of_year": dates.dayofyear.astype(np.int64),
            "month": dates.month.astype(np.int64),
            "week_of_month": ((dates.day - 1) // 7 + 1).astype(np.int64),
        }
    )


def _event_column_name(name: str) -> str:
    return "event_" + "".join(c if c.isalnum() else "_" for c in name)


def build_event_windows(dates, events: Iterable[tuple]) -> pd.DataFrame:
    """One categorical column per event name holding the day offset to the event.

    ``events`` is an iterable of ``(date, name, type)``.  Days outside every
    occurrence's window get the value :data:`OUTSIDE`.  When two occurrences
    of the same event both cover a day, the nearer one wins.
    """
    dates = pd.DatetimeIndex(pd.to_datetime(dates)).normalize()
    day = dates.values.astype("datetime64[D]").astype(np.int64)
    by_name: dict[str, list[int]] = {}
    for when, name, _type in events:
        by_name.setdefault(name, []).append(
            int(np.datetime64(pd.Timestamp(when).date(), "D").astype(np.int64))
        )
    cols = {}
    for name in sorted(by_name):
        lo, hi = WIDE_WINDOW if name in WIDE_WINDOW_EVENTS else NARROW_WINDOW
        best = np.full(len(day), np.iinfo(np.int64).max)
        for ev in sorted(set(by_name[name])):
            off = day - ev
            inside = (off >= lo) & (off <= hi) & (np.abs(off) < np.abs(best))
            best = np.where(inside, off, best)
        col = np.empty(len(day), dtype=object)
        hit = best != np.iinfo(np.int64).max
        col[:] = OUTSIDE
        col[hit] = best[hit].tolist()
        cols[_event_column_name(name)] = col
    return pd.DataFrame(cols, index=range(len(day)))


def build_price_features(sell_price, list_price) -> pd.DataFrame:
    """Price ratio ``sell / list`` and the promotion flag ``ratio < 1``.

    Missing prices give a NaN ratio (the missing bin downstream) and no promotion.
    """
    sell = np.asarray(sell_price, dtype=float)
    lst = np.asarray(list_price, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where((lst > 0) & np.isfinite(sell) & np.isfinite(lst), sell / lst, np.nan)
    promo = np.where(np.isfinite(ratio), ratio < 1.0, False)
    return pd.DataFrame({"promo_flag": promo.astype(np.int64), "price_ratio": ratio})


# --------------------------------------------------------------------------
# binning


def _sort_key(v):
    if isinstance(v, str):
        return (1, 0.0, v)
    return (0, float(v), "")


def _is_missing(values: np.ndarray) -> np.ndarray:
    return pd.isna(pd.Series(values, dtype=object)).to_numpy()


@dataclass
class FeatureBins:
    """Binning of one feature.  ``n_bins`` counts the missing bin."""

    kind: str
    n_bins: int
    boundaries: list[float] | None = None
    categories: list | None = None
    parents: tuple[str, str] | None = None
    labels: list[str] = field(default_factory=list)

    @property
    def missing_bin(self) -> int | None:
        return None if self.kind == INTERACTION else self.n_bins - 1

    def to_dict(self):
        d = asdict(self)
        if d["parents"] is not None:
            d["parents"] = list(d["parents"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("parents") is not None:
            d["parents"] = tuple(d["parents"])
        return cls(**d)


@dataclass
class BinLayout:
    """Fitted bins for an ordered list of features."""

    features: dict[str, FeatureBins]

    @property
    def names(self) -> list[str]:
        return list(self.features)

    @property
    def n_bins(self) -> list[int]:
        return [b.n_bins for b in self.features.values()]

    def __getitem__(self, name) -> FeatureBins:
        return self.features[name]

    def to_dict(self):
        return {name: b.to_dict() for name, b in self.features.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({name: FeatureBins.from_dict(b) for name, b in d.items()})


@dataclass
class FeatureMatrix:
    """Bin indices, one column per feature, rows aligned with the input table."""

    codes: np.ndarray
    names: list[str]
    n_bins: list[int]

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        if self.codes.ndim != 2 or self.codes.shape[1] != len(self.names):
            raise FeatureError("codes must be (n_samples, n_features)")
        if len(self.n_bins) != len(self.names):
            raise FeatureError("n_bins must match the number of features")
        nb = np.asarray(self.n_bins, dtype=np.int64)
        if self.codes.size and (np.any(self.codes < 0) or np.any(self.codes >= nb)):
            raise FeatureError("bin index out of range")

    @property
    def n_samples(self) -> int:
        return self.codes.shape[0]

    @property
    def n_features(self) -> int:
        return self.codes.shape[1]

    def __len__(self):
        return self.n_samples

    def __array__(self, dtype=None, copy=None):
        return self.codes if dtype is None else self.codes.astype(dtype)

    def column(self, name) -> np.ndarray:
        return self.codes[:, self.names.index(name)]

    def take(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.codes[rows], list(self.names), list(self.n_bins))

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(self.codes[:, idx], list(names), [self.n_bins[i] for i in idx])


def _fit_continuous(name, values, bin_count) -> FeatureBins:
    x = pd.to_numeric(pd.Series(values), errors="coerce").to_numpy(dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise FeatureError(f"feature {name!r} has no non-missing values")
    probs = np.linspace(0.0, 1.0, bin_count + 1)[1:-1]
    cuts = np.unique(np.quantile(x, probs)) if probs.size else np.empty(0)
    cuts = cuts[cuts > x.min()]
    edges = [-np.inf, *cuts.tolist(), np.inf]
    labels = [f"[{lo:.6g}, {hi:.6g})" for lo, hi in zip(edges[:-1], edges[1:])] + ["missing"]
    return FeatureBins(CONTINUOUS, len(cuts) + 2, boundaries=cuts.tolist(), labels=labels)


def _fit_categorical(name, values) -> FeatureBins:
    v = np.asarray(values, dtype=object)
    present = v[~_is_missing(v)]
    if present.size == 0:
        raise FeatureError(f"feature {name!r} has no non-missing values")
    cats = sorted({_py(c) for c in present.tolist()}, key=_sort_key)
    labels = [str(c) for c in cats] + ["missing"]
    return FeatureBins(CATEGORICAL, len(cats) + 1, categories=cats, labels=labels)


def _py(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def fit_bins(raw: pd.DataFrame, specs: Sequence[FeatureSpec]) -> BinLayout:
    """Fit bin definitions on training columns.

    Continuous features use equal-frequency quantile cuts (duplicate cuts
    merged); categoricals enumerate the observed categories.
    """
    if len(raw) == 0:
        raise FeatureError("cannot fit bins on an empty table")
    out: dict[str, FeatureBins] = {}
    for s in specs:
        if s.name in out:
            raise FeatureError(f"duplicate feature name {s.name!r}")
        if s.kind == INTERACTION:
            a, b = s.parents
            if a not in out or b not in out:
                raise FeatureError(f"interaction {s.name!r} must follow its parents {a!r}, {b!r}")
            la, lb = out[a].labels, out[b].labels
            labels = [f"{x} & {y}" for x in la for y in lb]
            out[s.name] = FeatureBins(INTERACTION, out[a].n_bins * out[b].n_bins,
                                      parents=(a, b), labels=labels)
            continue
        if s.name not in raw.columns:
            raise FeatureError(f"column {s.name!r} missing from input")
        if s.kind == CONTINUOUS:
            out[s.name] = _fit_continuous(s.name, raw[s.name].to_numpy(), s.bin_count)
        else:
            out[s.name] = _fit_categorical(s.name, raw[s.name].to_numpy())
    return BinLayout(out)


def _apply_one(bins: FeatureBins, values) -> np.ndarray:
    if bins.kind == CONTINUOUS:
        x = pd.to_numeric(pd.Series(values), errors="coerce").to_numpy(dtype=float)
        idx = np.searchsorted(np.asarray(bins.boundaries, dtype=float), x, side="right")
        return np.where(np.isfinite(x), idx, bins.missing_bin).astype(np.int64)
    idx = pd.Index(bins.categories, dtype=object).get_indexer(pd.Index(values, dtype=object))
    return np.where(idx < 0, bins.missing_bin, idx).astype(np.int64)


def apply_bins(raw: pd.DataFrame, layout: BinLayout, specs: Sequence[FeatureSpec] | None = None) -> FeatureMatrix:
    """Map raw columns to bin indices using a fitted layout.

    Continuous values outside the fitted range clamp to the edge bins;
    missing values and unseen categories map to the missing bin.
    """
    names = [s.name for s in specs] if specs is not None else layout.names
    n = len(raw)
    cols: dict[str, np.ndarray] = {}
    for name in names:
        bins = layout[name]
        if bins.kind == INTERACTION:
            a, b = bins.parents
            ca = cols[a] if a in cols else _apply_one(layout[a], raw[a].to_numpy())
            cb = cols[b] if b in cols else _apply_one(layout[b], raw[b].to_numpy())
            cols[name] = ca * layout[b].n_bins + cb
        else:
            if name not in raw.columns:
                raise FeatureError(f"column {name!r} missing from input")
            cols[name] = _apply_one(bins, raw[name].to_numpy())
    codes = np.column_stack([cols[n_] for n_ in names]) if names else np.zeros((n, 0), np.int64)
    return FeatureMatrix(codes, list(names), [layout[n_].n_bins for n_ in names])


class FeatureBinner(TransformerMixin, BaseEstimator):
    """Transformer wrapping :func:`fit_bins` and :func:`apply_bins`.

    Parameters
    ----------
    specs : list of FeatureSpec
        Features in processing order; interactions must follow their parents.

    Attributes
    ----------
    layout_ : BinLayout
    """

    def __init__(self, specs=()):
        self.specs = specs

    def fit(self, X, y=None):
        X = _as_frame(X)
        self.layout_ = fit_bins(X, list(self.specs))
        self.n_features_in_ = X.shape[1]
        self.feature_names_in_ = np.asarray(X.columns, dtype=object)
        return self

    def transform(self, X) -> FeatureMatrix:
        check_is_fitted(self, "layout_")
        return apply_bins(_as_frame(X), self.layout_, list(self.specs))

    def get_feature_names_out(self, input_features=None):
        return np.asarray([s.name for s in self.specs], dtype=object)


def _as_frame(X) -> pd.DataFrame:
    if isinstance(X, pd.DataFrame):
        return X
    raise TypeError(f"expected a pandas DataFrame with named columns, got {type(X).__name__}")
