import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

from oracles import dtw_brute, silhouette_direct
from webworkload.clustering import (DistanceConfig, WorkloadKMeans, best_of_seeds,
                                    cross_dissimilarity, distance, dtw, kmeans,
                                    pairwise_dissimilarity, select_k, silhouette, soft_dtw,
                                    write_model_json)
from webworkload.exceptions import LengthMismatch, SingleCluster, TooFewRows

FOUR = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])


def test_four_point_example():
    m = kmeans(FOUR, 2, seed=0)
    assert m.inertia == pytest.approx(1.0, abs=1e-12)
    assert m.labels[0] == m.labels[1] != m.labels[2] == m.labels[3]
    assert m.silhouette == pytest.approx(silhouette_score(FOUR, m.labels), abs=1e-12)
    assert m.silhouette == pytest.approx(0.90025, abs=1e-5)


def test_lloyd_monotone_history():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 5))
    m = kmeans(X, 4, seed=1)
    h = m.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))
    assert m.n_iter <= 300


def test_no_empty_clusters_with_duplicates():
    X = np.array([[0.0]] * 10 + [[1.0]] * 2 + [[5.0]])
    m = kmeans(X, 3, seed=0)
    assert (m.sizes > 0).all()
    with pytest.raises(TooFewRows):
        kmeans(X, 4, seed=0)


def test_silhouette_direct_and_single_cluster():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(12, 3))
    m = kmeans(X, 3, seed=0)
    assert silhouette(X, m) == pytest.approx(silhouette_direct(X.tolist(), m.labels.tolist()),
                                             abs=1e-12)
    with pytest.raises(SingleCluster):
        silhouette(X, kmeans(X, 1, seed=0, compute_silhouette=False))


def test_select_k_blobs(tmp_path):
    rng = np.random.default_rng(0)
    centers = np.array([[0, 0], [8, 0], [0, 8]])
    X = np.vstack([c + rng.normal(scale=0.5, size=(20, 2)) for c in centers])
    res = select_k(X, 2, 6, seeds=range(3))
    assert res.k_best == 3
    assert [k for k, *_ in res.curve] == [2, 3, 4, 5, 6]
    p = tmp_path / "c.json"
    write_model_json(res.model, p)
    d = json.loads(p.read_text())
    assert d["k"] == 3 and sum(d["sizes"]) == 60


def test_select_k_tie_prefers_smaller():
    # two identical pairs: k=2 is perfect, larger k cannot beat silhouette 1
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    assert select_k(X, 2, 3, seeds=range(2)).k_best == 2


def test_best_of_seeds_not_worse_than_any_seed():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    best = best_of_seeds(X, 3, DistanceConfig(), range(5))
    for s in range(5):
        assert best.inertia <= kmeans(X, 3, seed=s, compute_silhouette=False).inertia + 1e-12


small = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=5)


@settings(max_examples=60, deadline=None)
@given(small, small)
def test_dtw_matches_enumeration(a, b):
    assert dtw(a, b) == pytest.approx(dtw_brute(a, b), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(small)
def test_dtw_identity_and_symmetry(a):
    assert dtw(a, a) == 0.0
    b = a[::-1]
    assert dtw(a, b) == pytest.approx(dtw(b, a), abs=1e-12)
    assert dtw(a, b) <= np.sqrt(np.sum((np.array(a) - np.array(b)) ** 2)) + 1e-12


def test_dtw_warps_unequal_lengths():
    assert dtw([0, 1, 1], [0, 1]) == 0.0


def test_softdtw_tends_to_dtw():
    a, b = [0.0, 1.0, 3.0], [0.0, 2.0, 2.0, 3.0]
    assert soft_dtw(a, b, gamma=1e-4) == pytest.approx(dtw(a, b) ** 2, abs=1e-3)
    assert soft_dtw(a, b, gamma=1.0) < dtw(a, b) ** 2


def test_distance_config():
    assert DistanceConfig("softdtw").gamma == 1.0
    with pytest.raises(ValueError):
        DistanceConfig("euclidean", gamma=1.0)
    with pytest.raises(ValueError):
        DistanceConfig("cosine")
    with pytest.raises(LengthMismatch):
        distance([1, 2], [1, 2, 3])


def test_softdtw_divergence_nonnegative_zero_diagonal():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(6, 5))
    D = pairwise_dissimilarity(X, DistanceConfig("softdtw", 0.5))
    assert np.allclose(np.diag(D), 0) and (D >= -1e-12).all()
    assert np.allclose(D, D.T)


def test_cross_dissimilarity_euclidean():
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(7, 3)), rng.normal(size=(4, 3))
    want = np.linalg.norm(X[:, None] - Y[None], axis=2)
    assert np.allclose(cross_dissimilarity(X, Y), want, atol=1e-12)


@pytest.mark.parametrize("metric", ["dtw", "softdtw"])
def test_elastic_kmeans_runs(metric):
    rng = np.random.default_rng(0)
    base = [np.sin(np.linspace(0, 3, 8)), np.cos(np.linspace(0, 3, 8))]
    X = np.vstack([b + rng.normal(scale=0.05, size=(6, 8)) for b in base])
    m = kmeans(X, 2, DistanceConfig(metric), seed=0)
    assert sorted(m.sizes.tolist()) == [6, 6]


def test_estimator_api():
    est = WorkloadKMeans(n_clusters=2, n_init=3, random_state=0)
    assert est.get_params()["n_clusters"] == 2
    labels = est.fit_predict(FOUR)
    assert labels[0] != labels[2]
    assert est.transform(FOUR).shape == (4, 2)
    auto = WorkloadKMeans(n_clusters="auto", n_init=2, k_range=(2, 3)).fit(FOUR)
    assert auto.n_clusters_ == 2
    with pytest.raises(ValueError):
        WorkloadKMeans().fit(np.array([[np.inf, 0.0]]))
