"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .features import FeatureMatrix


def check_feature_matrix(X, n_bins=None, names=None) -> FeatureMatrix:
    """Coerce ``X`` to a :class:`FeatureMatrix`.

    Plain integer arrays are accepted; their bin counts come from ``n_bins``
    or, failing that, from the column maxima.
    """
    if isinstance(X, FeatureMatrix):
        return X
    codes = np.asarray(X)
    if codes.ndim == 1:
        codes = codes.reshape(-1, 1)
    if codes.ndim != 2:
        raise ValueError(f"expected a 2-d array of bin indices, got shape {codes.shape}")
    if codes.size and not np.issubdtype(codes.dtype, np.integer):
        if not np.all(codes == np.floor(codes)):
            raise ValueError("bin indices must be integers")
        codes = codes.astype(np.int64)
    if n_bins is None:
        n_bins = (codes.max(axis=0) + 1).tolist() if codes.size else [1] * codes.shape[1]
    if names is None:
        names = [f"x{j}" for j in range(codes.shape[1])]
    return FeatureMatrix(codes, list(names), list(n_bins))


def check_targets(y, n_samples: int, integer: bool = False) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != n_samples:
        raise ValueError(f"targets have {y.shape[0]} rows, features have {n_samples}")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError("targets must be finite and non-negative")
    if integer and np.any(y != np.floor(y)):
        raise ValueError("targets must be integer counts")
    return y


def check_layout_compatible(fm: FeatureMatrix, names, n_bins) -> None:
    if list(fm.names) != list(names) or list(fm.n_bins) != list(n_bins):
        raise ValueError(
            "feature layout mismatch: model was fitted on "
            f"{list(zip(names, n_bins))}, got {list(zip(fm.names, fm.n_bins))}"
        )
