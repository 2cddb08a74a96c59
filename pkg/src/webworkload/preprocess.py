"""Row standardization (z-score) followed by exponential smoothing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import DegenerateRow, EmptyResult
from .timeseries import WorkloadMatrix

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.3
# relative to the row's magnitude; below this a row is considered flat
_FLAT_RTOL = 1e-12


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float = DEFAULT_ALPHA
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")


def _is_flat(v, sigma):
    scale = max(np.max(np.abs(v)), 1.0)
    return sigma <= _FLAT_RTOL * scale


def zscore_row(v) -> np.ndarray:
    """(v - mean) / std with the population standard deviation."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("z-score needs a vector of at least two values")
    mu = v.mean()
    sigma = v.std()
    if _is_flat(v, sigma):
        raise DegenerateRow("row has zero standard deviation")
    return (v - mu) / sigma


def ema(v, cfg: SmoothingConfig | float = DEFAULT_ALPHA) -> np.ndarray:
    """Exponential moving average seeded with the first observation."""
    if isinstance(cfg, SmoothingConfig):
        if not cfg.enabled:
            return np.array(v, dtype=float)
        alpha = cfg.alpha
    else:
        alpha = SmoothingConfig(float(cfg)).alpha
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("ema needs a non-empty vector")
    out = np.empty_like(v)
    out[0] = v[0]
    keep = 1.0 - alpha
    for t in range(1, v.size):
        out[t] = alpha * v[t] + keep * out[t - 1]
    return out


def preprocess_matrix(m: WorkloadMatrix, cfg: SmoothingConfig = SmoothingConfig(),
                      scope: str = "row") -> WorkloadMatrix:
    """Standardize then smooth every row; flat rows are removed and itemized.

    ``scope="dataset"`` standardizes with the mean and deviation of all
    values belonging to the row's dataset instead of the row's own.
    """
    if scope not in ("row", "dataset"):
        raise ValueError("scope must be 'row' or 'dataset'")
    keep, out, dropped = [], [], list(m.dropped)
    stats = {}
    if scope == "dataset":
        ds = np.asarray(m.datasets)
        for name in set(m.datasets):
            vals = m.values[ds == name]
            stats[name] = (vals.mean(), vals.std())
    for i, (origin, row) in enumerate(m.rows):
        try:
            if scope == "row":
                z = zscore_row(row)
            else:
                mu, sigma = stats[m.datasets[i]]
                if _is_flat(row, sigma):
                    raise DegenerateRow("dataset has zero standard deviation")
                z = (row - mu) / sigma
        except DegenerateRow:
            dropped.append(origin)
            logger.info("%s %s: flat row excluded", m.datasets[i], origin)
            continue
        keep.append(i)
        out.append(ema(z, cfg))
    if not keep:
        raise EmptyResult("every row is degenerate")
    sub = m.select(np.isin(np.arange(len(m)), keep))
    return replace(sub, values=np.array(out), dropped=tuple(dropped), preprocessed=True)


class RowStandardizer(TransformerMixin, BaseEstimator):
    """Stateless per-row z-scoring for use inside sklearn pipelines.

    Rows with zero deviation raise :class:`DegenerateRow`; filter them first
    or use :func:`preprocess_matrix` which drops and itemizes them.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_features=2)
        return np.vstack([zscore_row(row) for row in X])


class EMASmoother(TransformerMixin, BaseEstimator):
    def __init__(self, alpha=DEFAULT_ALPHA):
        self.alpha = alpha

    def fit(self, X, y=None):
        SmoothingConfig(self.alpha)
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        cfg = SmoothingConfig(self.alpha)
        return np.vstack([ema(row, cfg) for row in X])
