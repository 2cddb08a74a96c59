"""Polynomial centroid models, the built-in pattern library and cluster associations."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import NoOverlap, RankDeficient, UnknownLabel, UnknownPattern

logger = logging.getLogger(__name__)

DAILY_GRID = np.arange(24, dtype=float)
WEEKLY_GRID = np.arange(1, 8, dtype=float)
DAILY_DOMAIN = (0.0, 24.0)
WEEKLY_DOMAIN = (1.0, 8.0)


@dataclass(frozen=True)
class PolynomialModel:
    """Polynomial in t with coefficients from the highest power down.

    ``(a, b, c)`` is a*t**2 + b*t + c and ``(a, b, c, d)`` is
    a*t**3 + b*t**2 + c*t + d.
    """

    degree: int
    coefficients: tuple
    domain: tuple = DAILY_DOMAIN
    rmse: float = 0.0

    def __post_init__(self):
        if self.degree not in (2, 3):
            raise ValueError("only quadratic and cubic models are supported")
        coefs = tuple(float(c) for c in self.coefficients)
        if len(coefs) != self.degree + 1:
            raise ValueError(f"degree {self.degree} needs {self.degree + 1} coefficients")
        if not np.isfinite(self.rmse):
            raise ValueError("rmse must be finite")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "domain", tuple(float(x) for x in self.domain))

    @property
    def period(self) -> float:
        return self.domain[1] - self.domain[0]

    def __call__(self, t):
        return evaluate_pattern(self, t)

    def to_dict(self):
        return {"degree": self.degree, "coefficients": list(self.coefficients),
                "domain": list(self.domain), "rmse": self.rmse}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["degree"]), tuple(d["coefficients"]), tuple(d.get("domain", DAILY_DOMAIN)),
                   float(d.get("rmse", 0.0)))


def _horner(coefs, t):
    acc = np.zeros_like(np.asarray(t, dtype=float))
    for c in coefs:
        acc = acc * t + c
    return acc


def evaluate_pattern(p: PolynomialModel, t):
    t_arr = np.asarray(t, dtype=float)
    lo, hi = p.domain
    if np.any((t_arr < lo) | (t_arr >= hi)):
        warnings.warn(f"evaluating outside the pattern domain [{lo}, {hi})", stacklevel=2)
    out = _horner(p.coefficients, t_arr)
    return float(out) if out.ndim == 0 else out


def _design(t, degree):
    return np.vander(np.asarray(t, dtype=float), degree + 1)


@dataclass
class LMResult:
    coefficients: np.ndarray
    cost: float
    n_iter: int
    converged: bool


def levenberg_marquardt(J, y, theta0=None, lam=1e-3, max_iter=200, step_tol=1e-10) -> LMResult:
    """Damped Gauss-Newton for the model ``J @ theta`` against ``y``.

    Damping is Marquardt-scaled by ``diag(J.T @ J)``; each damped step is
    solved as an augmented least-squares problem rather than through the
    (ill-conditioned) normal equations.
    """
    J = np.asarray(J, dtype=float)
    y = np.asarray(y, dtype=float)
    p = J.shape[1]
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    scale = np.sqrt(np.maximum(np.sum(J ** 2, axis=0), np.finfo(float).tiny))
    r = J @ theta - y
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = np.vstack([J, np.sqrt(lam) * np.diag(scale)])
        rhs = np.concatenate([-r, np.zeros(p)])
        step = np.linalg.lstsq(A, rhs, rcond=None)[0]
        trial = theta + step
        r_trial = J @ trial - y
        cost_trial = float(r_trial @ r_trial)
        if cost_trial < cost:
            theta, r, cost = trial, r_trial, cost_trial
            lam /= 10.0
        else:
            lam *= 10.0
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
    return LMResult(theta, cost, it, converged)


def fit_polynomial(y, degree: int, t_grid=None, domain=None) -> PolynomialModel:
    """Least-squares polynomial fit of ``y`` over ``t_grid`` by Levenberg-Marquardt.

    The result is cross-checked against the direct linear least-squares
    solution; a disagreement above 1e-6 in any coefficient is an error.
    """
    y = np.asarray(y, dtype=float)
    if t_grid is None:
        t_grid = DAILY_GRID[: len(y)] if degree == 3 else np.arange(1, len(y) + 1, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if t.shape != y.shape or y.ndim != 1:
        raise ValueError("y and t_grid must be 1-D and of equal length")
    if len(y) < degree + 2:
        raise ValueError(f"need at least {degree + 2} points for a degree-{degree} fit")
    if len(np.unique(t)) < degree + 1:
        raise RankDeficient(f"t_grid has fewer than {degree + 1} distinct points")
    J = _design(t, degree)
    res = levenberg_marquardt(J, y)
    direct = np.linalg.lstsq(J, y, rcond=None)[0]
    gap = np.max(np.abs(res.coefficients - direct))
    if gap > 1e-6:
        raise ArithmeticError(f"LM solution deviates from linear least squares by {gap:.3g}")
    if not res.converged:
        logger.warning("LM stopped after %d iterations without meeting the step tolerance", res.n_iter)
    if domain is None:
        domain = DAILY_DOMAIN if degree == 3 else WEEKLY_DOMAIN
    rmse = float(np.sqrt(res.cost / len(y)))
    return PolynomialModel(degree, tuple(res.coefficients.tolist()), domain, rmse)


class PolynomialPatternRegressor(RegressorMixin, BaseEstimator):
    """Fit a quadratic or cubic trend with Levenberg-Marquardt.

    ``X`` holds the time coordinate as a single feature column.
    """

    def __init__(self, degree=3, domain=None):
        self.degree = degree
        self.domain = domain

    def fit(self, X, y):
        X = check_array(X, ensure_2d=False)
        t = X.ravel() if X.ndim == 1 or X.shape[1] == 1 else None
        if t is None:
            raise ValueError("expected a single time feature")
        self.model_ = fit_polynomial(np.asarray(y, dtype=float), self.degree, t, self.domain)
        self.coef_ = np.array(self.model_.coefficients)
        self.rmse_ = self.model_.rmse
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, ensure_2d=False)
        return _horner(self.model_.coefficients, X.ravel())


# Reference centroid fits: daily cubics on hours 0..23, weekly quadratics on days 1..7.
BUILTIN_PATTERNS = {
    "D1": (PolynomialModel(3, (-0.001, 0.029, -0.221, -0.728), DAILY_DOMAIN),
           "daytime peak with a steep fall to off-peak hours"),
    "D2": (PolynomialModel(3, (0.000, 0.011, -0.214, 0.648), DAILY_DOMAIN),
           "night-time peak with gentle changes (leading coefficient rounded to 0.000)"),
    "D3": (PolynomialModel(3, (-0.001, 0.031, -0.166, -0.708), DAILY_DOMAIN),
           "daytime peak with a gradual fall to off-peak hours"),
    "W1": (PolynomialModel(2, (0.041, -0.516, 1.299), WEEKLY_DOMAIN),
           "weekday heavy, declining through the week"),
    "W2": (PolynomialModel(2, (0.005, 0.087, -0.535), WEEKLY_DOMAIN),
           "weekend heavy, rising steadily through the week"),
    "W3": (PolynomialModel(2, (-0.079, 0.352, 0.251), WEEKLY_DOMAIN),
           "midweek peak with smooth changes"),
}


class PatternLibrary:
    """Named polynomial patterns; the six built-ins cannot be replaced."""

    def __init__(self):
        self._entries = {name: (model, desc) for name, (model, desc) in BUILTIN_PATTERNS.items()}

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def get(self, name) -> PolynomialModel:
        try:
            return self._entries[name][0]
        except KeyError:
            raise UnknownPattern(f"no pattern named {name!r}") from None

    def description(self, name) -> str:
        self.get(name)
        return self._entries[name][1]

    def add(self, name, model: PolynomialModel, description=""):
        if name in self._entries:
            raise ValueError(f"pattern {name!r} already exists")
        self._entries[name] = (model, description)

    def to_list(self):
        out = []
        for name, (model, desc) in self._entries.items():
            out.append({"name": name, "degree": model.degree,
                        "coefficients": list(model.coefficients),
                        "domain": list(model.domain), "description": desc})
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2) + "\n"

    def load_json(self, path):
        with open(path) as fh:
            for e in json.load(fh):
                if e["name"] in BUILTIN_PATTERNS:
                    continue
                model = PolynomialModel(int(e["degree"]), tuple(e["coefficients"]),
                                        tuple(e["domain"]))
                self.add(e["name"], model, e.get("description", ""))
        return self


def resolve_pattern(pattern, library: Optional[PatternLibrary] = None) -> PolynomialModel:
    if isinstance(pattern, PolynomialModel):
        return pattern
    return (library or PatternLibrary()).get(pattern)


def centroid_of(model, label) -> np.ndarray:
    if not 0 <= int(label) < model.k or int(label) != label:
        raise UnknownLabel(f"label {label!r} not in [0, {model.k})")
    return np.asarray(model.centroids[int(label)])


def fit_centroids(model, granularity: str):
    """Cubic fits for daily centroids, quadratic for weekly ones."""
    degree, grid = (3, DAILY_GRID) if granularity == "daily" else (2, WEEKLY_GRID)
    return [fit_polynomial(centroid_of(model, j), degree, grid) for j in range(model.k)]


def size_ranked_names(model, prefix: str) -> dict:
    """Map cluster label -> ``prefix + rank`` with rank 1 the largest cluster."""
    order = sorted(range(model.k), key=lambda j: (-int(model.sizes[j]), j))
    return {j: f"{prefix}{r}" for r, j in enumerate(order, start=1)}


def nearest_builtin(fitted: PolynomialModel) -> str:
    """Built-in pattern of the same degree whose curve is closest on the grid."""
    grid = DAILY_GRID if fitted.degree == 3 else WEEKLY_GRID
    best, best_d = None, np.inf
    for name, (model, _) in BUILTIN_PATTERNS.items():
        if model.degree != fitted.degree:
            continue
        d = float(np.sum((_horner(model.coefficients, grid) - _horner(fitted.coefficients, grid)) ** 2))
        if d < best_d:
            best, best_d = name, d
    return best


@dataclass
class FrequencyTable:
    rows: list  # weekly pattern names
    cols: list  # daily pattern names
    percent: np.ndarray
    dataset_counts: np.ndarray
    row_totals: np.ndarray
    col_totals: np.ndarray
    row_dataset_counts: np.ndarray
    col_dataset_counts: np.ndarray
    grand_total: float
    n_days: int
    n_datasets: int

    def cell(self, row, col) -> float:
        return float(self.percent[self.rows.index(row), self.cols.index(col)])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["weekly"] + [f"{c}" for c in self.cols] + ["Total"])
            for i, r in enumerate(self.rows):
                w.writerow([r] + [f"{self.percent[i, j]:.1f} ({self.dataset_counts[i, j]})"
                                  for j in range(len(self.cols))]
                           + [f"{self.row_totals[i]:.1f} ({self.row_dataset_counts[i]})"])
            w.writerow(["Total"] + [f"{self.col_totals[j]:.1f} ({self.col_dataset_counts[j]})"
                                    for j in range(len(self.cols))]
                       + [f"{self.grand_total:.1f} ({self.n_datasets})"])


def _label_name(names, lab):
    return names[lab] if names is not None else lab


def association_table(daily_assignments, weekly_assignments, daily_names=None,
                      weekly_names=None) -> FrequencyTable:
    """Share of days with each daily pattern inside weeks of each weekly pattern.

    Both inputs are sequences of ``(dataset, origin, label)``; weekly origins
    are Mondays.  Only days that fall in a clustered week of the same dataset
    are counted.
    """
    from datetime import timedelta

    week_label = {(ds, origin): lab for ds, origin, lab in weekly_assignments}
    matched = []
    for ds, day, lab in daily_assignments:
        key = (ds, day - timedelta(days=day.weekday()))
        if key in week_label:
            matched.append((ds, _label_name(weekly_names, week_label[key]),
                            _label_name(daily_names, lab)))
    if not matched:
        raise NoOverlap("no clustered day falls inside a clustered week")
    rows = sorted({w for w in (weekly_names or {}).values()} | {m[1] for m in matched},
                  key=str)
    cols = sorted({d for d in (daily_names or {}).values()} | {m[2] for m in matched},
                  key=str)
    counts = np.zeros((len(rows), len(cols)))
    sets = defaultdict(set)
    for ds, w, d in matched:
        i, j = rows.index(w), cols.index(d)
        counts[i, j] += 1
        sets[(i, j)].add(ds)
    total = len(matched)
    pct = 100.0 * counts / total
    dcounts = np.array([[len(sets[(i, j)]) for j in range(len(cols))] for i in range(len(rows))],
                       dtype=int)
    row_sets = [set().union(*(sets[(i, j)] for j in range(len(cols)))) for i in range(len(rows))]
    col_sets = [set().union(*(sets[(i, j)] for i in range(len(rows)))) for j in range(len(cols))]
    return FrequencyTable(rows, cols, pct, dcounts, pct.sum(axis=1), pct.sum(axis=0),
                          np.array([len(s) for s in row_sets], dtype=int),
                          np.array([len(s) for s in col_sets], dtype=int),
                          float(pct.sum()), total, len({m[0] for m in matched}))


SEASONS_METEOROLOGICAL = {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring",
                          5: "spring", 6: "summer", 7: "summer", 8: "summer", 9: "fall",
                          10: "fall", 11: "fall"}


def time_bucket(d, scheme: str, seasons: str = "meteorological") -> str:
    if scheme == "weekday-weekend":
        return "weekend" if d.weekday() >= 5 else "weekday"
    if scheme == "season":
        if seasons == "meteorological":
            return SEASONS_METEOROLOGICAL[d.month]
        if seasons == "quarter":
            return f"Q{(d.month - 1) // 3 + 1}"
        raise ValueError(f"unknown season convention {seasons!r}")
    raise ValueError(f"unknown scheme {scheme!r}")


def bucket_names(scheme: str, seasons: str = "meteorological"):
    if scheme == "weekday-weekend":
        return ["weekday", "weekend"]
    if seasons == "quarter":
        return ["Q1", "Q2", "Q3", "Q4"]
    return ["winter", "spring", "summer", "fall"]


def time_dependence(origins, labels, scheme: str = "weekday-weekend",
                    seasons: str = "meteorological", names=None) -> dict:
    """Percentage of each cluster's rows falling in each time bucket."""
    buckets = bucket_names(scheme, seasons)
    counts = defaultdict(lambda: dict.fromkeys(buckets, 0))
    for d, lab in zip(origins, labels):
        counts[_label_name(names, int(lab))][time_bucket(d, scheme, seasons)] += 1
    out = {}
    for lab in sorted(counts, key=str):
        n = sum(counts[lab].values())
        out[lab] = {b: 100.0 * c / n for b, c in counts[lab].items()}
    return out


def write_time_dependence_csv(tables: dict, path):
    """``tables`` maps (granularity, scheme) to a time_dependence result."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["granularity", "scheme", "pattern", "bucket", "percent"])
        for (gran, scheme), dist in tables.items():
            for lab, row in dist.items():
                for b, pct in row.items():
                    w.writerow([gran, scheme, lab, b, repr(pct)])
