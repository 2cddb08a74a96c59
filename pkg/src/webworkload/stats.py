"""Variability (coefficient of variation) and burstiness of raw workload rows."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import ProvenanceViolation, ZeroMean
from .timeseries import WorkloadMatrix

HIGH_VARIABILITY_CV = 1.0


def _moments(v):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("empty vector")
    mu = v.mean()
    if mu <= 0:
        raise ZeroMean("mean must be positive (all-zero or negative row)")
    if np.all(v == v[0]):
        # exact: avoids rounding noise from the mean of repeated values
        return float(v[0]), 0.0
    return mu, v.std()


def cv(v) -> float:
    mu, sigma = _moments(v)
    return float(sigma / mu)


def burstiness(v) -> float:
    """(sigma - mu) / (sigma + mu); -1 for a perfectly regular row."""
    mu, sigma = _moments(v)
    return float((sigma - mu) / (sigma + mu))


def is_highly_variable(v) -> bool:
    return cv(v) > HIGH_VARIABILITY_CV


@dataclass
class DatasetProfile:
    dataset_id: str
    granularity: str
    per_row: list = field(default_factory=list)
    cv_mean: float = float("nan")
    burstiness_mean: float = float("nan")
    excluded: list = field(default_factory=list)
    mode: str = "row-mean"


def profile(m: WorkloadMatrix, mode: str = "row-mean") -> DatasetProfile:
    """Per-row CV and burstiness with their dataset-level means.

    ``mode="series"`` instead computes the dataset-level values over all of
    the matrix's values at once; per-row values are still reported.
    """
    if m.preprocessed:
        raise ProvenanceViolation("profile needs raw counts, got a preprocessed matrix")
    if mode not in ("row-mean", "series"):
        raise ValueError("mode must be 'row-mean' or 'series'")
    prof = DatasetProfile(m.dataset_id, m.granularity, mode=mode)
    for origin, row in m.rows:
        try:
            prof.per_row.append((origin, cv(row), burstiness(row)))
        except ZeroMean:
            prof.excluded.append(origin)
    if mode == "series" and len(m):
        try:
            prof.cv_mean = cv(m.values.ravel())
            prof.burstiness_mean = burstiness(m.values.ravel())
        except ZeroMean:
            pass
    elif prof.per_row:
        prof.cv_mean = float(np.mean([r[1] for r in prof.per_row]))
        prof.burstiness_mean = float(np.mean([r[2] for r in prof.per_row]))
    return prof


def write_profiles_csv(profiles, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "granularity", "origin", "cv", "burstiness"])
        for p in profiles:
            for origin, c, b in p.per_row:
                w.writerow([p.dataset_id, p.granularity, origin.isoformat(), repr(c), repr(b)])
            w.writerow([p.dataset_id, p.granularity, "mean", repr(p.cv_mean),
                        repr(p.burstiness_mean)])


class VariabilityProfiler(TransformerMixin, BaseEstimator):
    """Map raw rows to ``[cv, burstiness]`` feature pairs."""

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        return np.array([[cv(r), burstiness(r)] for r in X])
