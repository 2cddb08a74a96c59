"""K-Means over workload rows with Euclidean, DTW or soft-DTW dissimilarity."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import LengthMismatch, SingleCluster, TooFewRows

logger = logging.getLogger(__name__)

METRICS = ("euclidean", "dtw", "softdtw")
DEFAULT_GAMMA = 1.0
MAX_ITER = 300


@dataclass(frozen=True)
class DistanceConfig:
    metric: str = "euclidean"
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.metric == "softdtw":
            if self.gamma is None:
                object.__setattr__(self, "gamma", DEFAULT_GAMMA)
            if not self.gamma > 0:
                raise ValueError("soft-DTW gamma must be positive")
        elif self.gamma is not None:
            raise ValueError("gamma only applies to the softdtw metric")

    def as_dict(self):
        return {"metric": self.metric, "gamma": self.gamma}


EUCLIDEAN = DistanceConfig()


def _dtw_cost_batch(A, B):
    """Optimal cumulative squared cost for each pair (A[p], B[p]).

    The DP runs over the (n, m) grid once with every pair vectorized along
    the first axis.
    """
    P, n = A.shape
    m = B.shape[1]
    R = np.full((P, n + 1, m + 1), np.inf)
    R[:, 0, 0] = 0.0
    for i in range(1, n + 1):
        a = A[:, i - 1]
        for j in range(1, m + 1):
            c = (a - B[:, j - 1]) ** 2
            R[:, i, j] = c + np.minimum(np.minimum(R[:, i - 1, j - 1], R[:, i - 1, j]),
                                        R[:, i, j - 1])
    return R[:, n, m]


def _softdtw_batch(A, B, gamma):
    P, n = A.shape
    m = B.shape[1]
    R = np.full((P, n + 1, m + 1), np.inf)
    R[:, 0, 0] = 0.0
    for i in range(1, n + 1):
        a = A[:, i - 1]
        for j in range(1, m + 1):
            c = (a - B[:, j - 1]) ** 2
            prev = np.stack([R[:, i - 1, j - 1], R[:, i - 1, j], R[:, i, j - 1]])
            lo = prev.min(axis=0)
            # soft minimum: -gamma * log(sum(exp(-r / gamma)))
            with np.errstate(invalid="ignore"):
                s = np.exp(-(prev - lo) / gamma).sum(axis=0)
            R[:, i, j] = c + lo - gamma * np.log(s)
    return R[:, n, m]


def dtw(a, b) -> float:
    """Square root of the minimal squared-cost monotone alignment of a and b."""
    a = np.asarray(a, dtype=float)[None, :]
    b = np.asarray(b, dtype=float)[None, :]
    return float(np.sqrt(_dtw_cost_batch(a, b)[0]))


def soft_dtw(a, b, gamma=DEFAULT_GAMMA) -> float:
    """Soft-DTW value with squared pointwise cost; negative values are possible."""
    a = np.asarray(a, dtype=float)[None, :]
    b = np.asarray(b, dtype=float)[None, :]
    return float(_softdtw_batch(a, b, gamma)[0])


def distance(a, b, cfg: DistanceConfig = EUCLIDEAN) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if cfg.metric == "euclidean":
        if a.shape != b.shape:
            raise LengthMismatch(f"lengths {a.shape} and {b.shape} differ")
        return float(np.sqrt(np.sum((a - b) ** 2)))
    if cfg.metric == "dtw":
        return dtw(a, b)
    return soft_dtw(a, b, cfg.gamma)


def cross_dissimilarity(X, Y, cfg: DistanceConfig = EUCLIDEAN, squared=False):
    """Matrix of dissimilarities between rows of X and rows of Y.

    For soft-DTW the (non-negative) soft-DTW divergence
    ``sdtw(x, y) - (sdtw(x, x) + sdtw(y, y)) / 2`` is used, so that it can
    serve clustering and silhouette scoring.  With ``squared`` the
    Euclidean/DTW values are returned squared; divergences are already on
    the squared-cost scale and are returned unchanged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if cfg.metric == "euclidean":
        if X.shape[0] * Y.shape[0] * X.shape[1] <= 5_000_000:
            d2 = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=2)
        else:
            # memory-lean expansion for large pairwise blocks
            d2 = (np.sum(X ** 2, axis=1)[:, None] + np.sum(Y ** 2, axis=1)[None, :]
                  - 2.0 * X @ Y.T)
            np.maximum(d2, 0.0, out=d2)
        return d2 if squared else np.sqrt(d2)
    ii, jj = np.meshgrid(np.arange(len(X)), np.arange(len(Y)), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    if cfg.metric == "dtw":
        d2 = _dtw_cost_batch(X[ii], Y[jj]).reshape(len(X), len(Y))
        return d2 if squared else np.sqrt(d2)
    g = cfg.gamma
    cross = _softdtw_batch(X[ii], Y[jj], g).reshape(len(X), len(Y))
    sx = _softdtw_batch(X, X, g)
    sy = _softdtw_batch(Y, Y, g)
    return np.maximum(cross - 0.5 * (sx[:, None] + sy[None, :]), 0.0)


def pairwise_dissimilarity(X, cfg: DistanceConfig = EUCLIDEAN):
    X = np.asarray(X, dtype=float)
    if cfg.metric == "euclidean":
        D = cross_dissimilarity(X, X, cfg)
    else:
        # symmetric: evaluate the upper triangle only
        n = len(X)
        iu, ju = np.triu_indices(n, k=1)
        D = np.zeros((n, n))
        if len(iu):
            if cfg.metric == "dtw":
                vals = np.sqrt(_dtw_cost_batch(X[iu], X[ju]))
            else:
                g = cfg.gamma
                s = _softdtw_batch(X, X, g)
                vals = np.maximum(_softdtw_batch(X[iu], X[ju], g) - 0.5 * (s[iu] + s[ju]), 0.0)
            D[iu, ju] = vals
            D[ju, iu] = vals
    np.fill_diagonal(D, 0.0)
    return D


@dataclass
class ClusterModel:
    k: int
    metric: DistanceConfig
    seed: int
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    silhouette: Optional[float] = None
    n_iter: int = 0
    converged: bool = True
    inertia_history: list = field(default_factory=list)

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=self.k)

    @property
    def assignments(self):
        return {i: int(lab) for i, lab in enumerate(self.labels)}

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.argmin(cross_dissimilarity(X, self.centroids, self.metric, squared=True), axis=1)

    def to_dict(self, origins=None, datasets=None):
        rows = list(range(len(self.labels))) if origins is None else [
            o.isoformat() if hasattr(o, "isoformat") else o for o in origins]
        assign = []
        for i, (r, lab) in enumerate(zip(rows, self.labels.tolist())):
            entry = {"origin": r, "label": lab}
            if datasets is not None:
                entry["dataset"] = datasets[i]
            assign.append(entry)
        return {
            "k": self.k,
            "metric": self.metric.as_dict(),
            "seed": self.seed,
            "centroids": self.centroids.tolist(),
            "sizes": self.sizes.tolist(),
            "inertia": self.inertia,
            "silhouette": self.silhouette,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "assignments": assign,
        }


def write_model_json(model: ClusterModel, path, origins=None, datasets=None):
    with open(path, "w") as fh:
        json.dump(model.to_dict(origins, datasets), fh, indent=2)
        fh.write("\n")


def _closest(X, C, cfg):
    d2 = cross_dissimilarity(X, C, cfg, squared=True)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(X)), labels]


def kmeans_plusplus(X, k, cfg: DistanceConfig, rng) -> np.ndarray:
    """Greedy k-means++: sample several candidates per step, keep the best."""
    n = len(X)
    n_trials = 2 + int(math.log(k))
    centers = [int(rng.integers(n))]
    closest = cross_dissimilarity(X, X[centers], cfg, squared=True)[:, 0]
    for _ in range(1, k):
        pot = closest.sum()
        if pot <= 0:
            # remaining rows coincide with chosen centers
            pool = [i for i in range(n) if i not in centers]
            centers.append(int(rng.choice(pool)))
            continue
        cum = np.cumsum(closest)
        cand = np.searchsorted(cum, rng.random(n_trials) * pot, side="right")
        cand = np.minimum(cand, n - 1)
        d_cand = cross_dissimilarity(X[cand], X, cfg, squared=True)
        d_cand = np.minimum(d_cand, closest[None, :])
        best = int(np.argmin(d_cand.sum(axis=1)))
        centers.append(int(cand[best]))
        closest = d_cand[best]
    return X[centers].copy()


def _repair_empty(X, labels, C, d_own, k):
    """Give each empty cluster the farthest member of the currently largest one."""
    labels = labels.copy()
    for empty in np.flatnonzero(np.bincount(labels, minlength=k) == 0):
        sizes = np.bincount(labels, minlength=k)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        far = members[int(np.argmax(d_own[members]))]
        labels[far] = empty
        C[empty] = X[far]
        d_own[far] = 0.0
    return labels


def kmeans(rows, k: int, cfg: DistanceConfig = EUCLIDEAN, seed: int = 0,
           max_iter: int = MAX_ITER, compute_silhouette: bool = True,
           D: Optional[np.ndarray] = None) -> ClusterModel:
    """One seeded k-means run: k-means++ seeding then Lloyd iterations.

    Centroids are coordinate-wise means of members for every metric.
    ``D`` optionally supplies the precomputed pairwise dissimilarity matrix
    used for the silhouette.
    """
    X = check_array(rows, ensure_min_samples=1)
    n = len(X)
    if k < 1:
        raise ValueError("k must be at least 1")
    n_distinct = len(np.unique(X, axis=0))
    if k > n_distinct:
        raise TooFewRows(f"k={k} exceeds the {n_distinct} distinct rows")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, k, cfg, rng)
    labels, d_own = _closest(X, C, cfg)
    labels = _repair_empty(X, labels, C, d_own, k)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        C = np.vstack([X[labels == j].mean(axis=0) for j in range(k)])
        new_labels, d_own = _closest(X, C, cfg)
        inertia = float(d_own.sum())
        if cfg.metric == "euclidean" and history:
            assert inertia <= history[-1] * (1 + 1e-12) + 1e-12, "Lloyd step increased inertia"
        history.append(inertia)
        new_labels = _repair_empty(X, new_labels, C, d_own, k)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
    if not converged:
        logger.warning("k-means (k=%d, seed=%d) stopped at the %d-iteration cap", k, seed, max_iter)
    C = np.vstack([X[labels == j].mean(axis=0) for j in range(k)])
    d2 = cross_dissimilarity(X, C, cfg, squared=True)
    inertia = float(d2[np.arange(n), labels].sum())
    model = ClusterModel(k, cfg, seed, C, labels, inertia, n_iter=it, converged=converged,
                         inertia_history=history)
    if compute_silhouette and k >= 2:
        model.silhouette = silhouette(X, model, D=D)
    return model


def silhouette_samples(D, labels) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    labels = np.asarray(labels)
    k = labels.max() + 1
    n = len(labels)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    sizes = onehot.sum(axis=0)
    sums = D @ onehot
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / np.where(sizes > 0, sizes, 1)[None, :]
    mean_other[np.arange(n), labels] = np.inf
    mean_other[:, sizes == 0] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own > 1, s, 0.0)


def silhouette(rows, model: ClusterModel, D: Optional[np.ndarray] = None) -> float:
    """Mean silhouette of all rows under the model's metric."""
    if model.k < 2 or len(np.unique(model.labels)) < 2:
        raise SingleCluster("silhouette needs at least two non-empty clusters")
    if D is None:
        D = pairwise_dissimilarity(rows, model.metric)
    return float(np.mean(silhouette_samples(D, model.labels)))


@dataclass
class SelectionResult:
    k_best: int
    model: ClusterModel
    curve: list  # (k, silhouette, inertia)


def best_of_seeds(X, k, cfg, seeds, D=None, max_iter=MAX_ITER) -> ClusterModel:
    best = None
    for s in seeds:
        m = kmeans(X, k, cfg, s, max_iter=max_iter, compute_silhouette=False)
        if best is None or m.inertia < best.inertia:
            best = m
    if k >= 2:
        best.silhouette = silhouette(X, best, D=D)
    return best


def select_k(rows, k_min: int = 2, k_max: int = 20, cfg: DistanceConfig = EUCLIDEAN,
             seeds: Sequence[int] = tuple(range(10)), max_iter: int = MAX_ITER) -> SelectionResult:
    """Pick the k with the highest silhouette; ties go to the smaller k."""
    X = check_array(rows)
    if k_min < 2:
        raise ValueError("silhouette-based selection needs k_min >= 2")
    n_distinct = len(np.unique(X, axis=0))
    if n_distinct < 2:
        raise TooFewRows("need at least two distinct rows")
    if k_max > n_distinct:
        logger.warning("k_max=%d reduced to the %d distinct rows", k_max, n_distinct)
        k_max = n_distinct
    if k_min > k_max:
        raise TooFewRows(f"k range [{k_min}, {k_max}] is empty")
    D = pairwise_dissimilarity(X, cfg)
    curve, best_k, best_model = [], None, None
    for k in range(k_min, k_max + 1):
        m = best_of_seeds(X, k, cfg, seeds, D=D, max_iter=max_iter)
        curve.append((k, m.silhouette, m.inertia))
        if best_model is None or m.silhouette > best_model.silhouette:
            best_k, best_model = k, m
    return SelectionResult(best_k, best_model, curve)


def write_curve_csv(curve, path):
    with open(path, "w") as fh:
        fh.write("k,silhouette,inertia\n")
        for k, s, i in curve:
            fh.write(f"{k},{s!r},{i!r}\n")


class WorkloadKMeans(ClusterMixin, TransformerMixin, BaseEstimator):
    """Scikit-learn style K-Means with pluggable time-series dissimilarity.

    ``n_clusters="auto"`` selects k in ``k_range`` by silhouette.

    Attributes set by ``fit``: ``cluster_centers_``, ``labels_``,
    ``inertia_``, ``silhouette_``, ``n_clusters_``, ``model_`` and, in auto mode,
    ``silhouette_curve_``.
    """

    def __init__(self, n_clusters=3, metric="euclidean", gamma=None, n_init=10,
                 max_iter=MAX_ITER, random_state=0, k_range=(2, 20)):
        self.n_clusters = n_clusters
        self.metric = metric
        self.gamma = gamma
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state
        self.k_range = k_range

    def _seeds(self):
        base = 0 if self.random_state is None else int(self.random_state)
        return [base + i for i in range(self.n_init)]

    def fit(self, X, y=None):
        X = check_array(X)
        cfg = DistanceConfig(self.metric, self.gamma)
        if self.n_clusters == "auto":
            res = select_k(X, self.k_range[0], self.k_range[1], cfg, self._seeds(), self.max_iter)
            self.model_ = res.model
            self.silhouette_curve_ = res.curve
        else:
            D = pairwise_dissimilarity(X, cfg) if self.n_clusters >= 2 else None
            self.model_ = best_of_seeds(X, int(self.n_clusters), cfg, self._seeds(), D=D,
                                        max_iter=self.max_iter)
        self.cluster_centers_ = self.model_.centroids
        self.labels_ = self.model_.labels
        self.inertia_ = self.model_.inertia
        self.silhouette_ = self.model_.silhouette
        self.n_clusters_ = self.model_.k
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_array(X))

    def transform(self, X):
        check_is_fitted(self, "model_")
        return cross_dissimilarity(check_array(X), self.cluster_centers_, self.model_.metric)
