import json
import warnings
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import normal_equations_fit
from webworkload.clustering import ClusterModel, DistanceConfig
from webworkload.exceptions import NoOverlap, RankDeficient, UnknownLabel, UnknownPattern
from webworkload.patterns import (DAILY_GRID, WEEKLY_GRID, PatternLibrary, PolynomialModel,
                                  PolynomialPatternRegressor, association_table, centroid_of,
                                  fit_centroids, fit_polynomial, levenberg_marquardt,
                                  nearest_builtin, size_ranked_names, time_dependence)

# frozen reference values for the built-in library
FROZEN = {
    "D1": (-0.001, 0.029, -0.221, -0.728),
    "D2": (0.000, 0.011, -0.214, 0.648),
    "D3": (-0.001, 0.031, -0.166, -0.708),
    "W1": (0.041, -0.516, 1.299),
    "W2": (0.005, 0.087, -0.535),
    "W3": (-0.079, 0.352, 0.251),
}


def test_builtin_coefficients_frozen():
    lib = PatternLibrary()
    assert lib.names() == list(FROZEN)
    for name, coefs in FROZEN.items():
        assert lib.get(name).coefficients == coefs


def test_exact_quadratic_recovered():
    t = np.arange(1, 8, dtype=float)
    m = fit_polynomial(2 * t ** 2 - 3 * t + 1, 2, t)
    assert np.allclose(m.coefficients, (2, -3, 1), atol=1e-9)
    assert m.rmse < 1e-9


@pytest.mark.parametrize("name", ["D1", "D2", "D3"])
def test_builtin_daily_refit(name):
    y = PatternLibrary().get(name)(DAILY_GRID)
    assert np.allclose(fit_polynomial(y, 3).coefficients, FROZEN[name], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2 ** 31))
def test_lm_matches_rational_normal_equations(degree, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(degree + 2, 31))
    t = np.sort(rng.choice(np.arange(0, 40), size=n, replace=False)).astype(float)
    y = rng.normal(size=n).round(6)
    fit = fit_polynomial(y, degree, t)
    want = normal_equations_fit(t.tolist(), y.tolist(), degree)
    assert np.allclose(fit.coefficients, want, atol=1e-6, rtol=0)


def test_lm_lambda_schedule_converges():
    J = np.vander(np.arange(5.0), 3)
    res = levenberg_marquardt(J, J @ np.array([1.0, -2.0, 0.5]))
    assert res.converged and res.n_iter <= 200
    assert np.allclose(res.coefficients, [1.0, -2.0, 0.5], atol=1e-9)


def test_fit_input_errors():
    with pytest.raises(ValueError):
        fit_polynomial([1.0, 2.0, 3.0], 3)
    with pytest.raises(RankDeficient):
        fit_polynomial([1.0, 2, 3, 4, 5], 3, [0, 0, 1, 1, 2])


def test_out_of_domain_warns():
    p = PatternLibrary().get("W1")
    with pytest.warns(UserWarning):
        p(8.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p(7.5)


def test_model_serialization_and_library(tmp_path):
    m = PolynomialModel(2, (1, 2, 3), (1, 8), 0.5)
    assert PolynomialModel.from_dict(json.loads(json.dumps(m.to_dict()))) == m
    with pytest.raises(ValueError):
        PolynomialModel(4, (1, 2, 3, 4, 5))
    lib = PatternLibrary()
    with pytest.raises(UnknownPattern):
        lib.get("D9")
    with pytest.raises(ValueError):
        lib.add("D1", m)
    path = tmp_path / "extra.json"
    path.write_text(json.dumps([{"name": "X1", "degree": 2, "coefficients": [0, 0, 1],
                                 "domain": [1, 8]}]))
    lib.load_json(path)
    assert "X1" in lib and len(json.loads(lib.to_json())) == 7


def test_regressor_estimator():
    t = WEEKLY_GRID.reshape(-1, 1)
    y = 0.5 * WEEKLY_GRID ** 2 - WEEKLY_GRID
    est = PolynomialPatternRegressor(degree=2).fit(t, y)
    assert np.allclose(est.coef_, [0.5, -1, 0], atol=1e-9)
    assert np.allclose(est.predict(t), y)
    assert est.get_params() == {"degree": 2, "domain": None}


def _model(centroids, labels):
    c = np.asarray(centroids, dtype=float)
    return ClusterModel(len(c), DistanceConfig(), 0, c, np.asarray(labels), 0.0)


def test_centroid_helpers():
    lib = PatternLibrary()
    cents = [lib.get(n)(DAILY_GRID) for n in ("D2", "D1")]
    model = _model(cents, [0, 1, 1, 1])
    fits = fit_centroids(model, "daily")
    assert [nearest_builtin(f) for f in fits] == ["D2", "D1"]
    assert size_ranked_names(model, "D") == {1: "D1", 0: "D2"}
    with pytest.raises(UnknownLabel):
        centroid_of(model, 2)


MON = date(2024, 1, 1)


def test_association_table():
    days = [("a", MON + timedelta(days=i), 0 if i < 5 else 1) for i in range(7)]
    days += [("b", MON + timedelta(days=i), 0) for i in range(7)]
    days += [("a", MON + timedelta(days=20), 1)]  # week not clustered
    weeks = [("a", MON, 0), ("b", MON, 1)]
    t = association_table(days, weeks, {0: "D1", 1: "D2"}, {0: "W1", 1: "W2"})
    assert t.n_days == 14 and t.n_datasets == 2
    assert t.cell("W1", "D1") == pytest.approx(100 * 5 / 14)
    assert t.cell("W2", "D1") == pytest.approx(50.0)
    assert t.grand_total == pytest.approx(100.0)
    assert t.dataset_counts.tolist() == [[1, 1], [1, 0]]
    with pytest.raises(NoOverlap):
        association_table(days, [("c", MON, 0)])


def test_time_dependence():
    origins = [MON + timedelta(days=i) for i in range(7)]
    labels = [0] * 5 + [1] * 2
    d = time_dependence(origins, labels)
    assert d == {0: {"weekday": 100.0, "weekend": 0.0}, 1: {"weekday": 0.0, "weekend": 100.0}}
    s = time_dependence([date(2024, 1, 5), date(2024, 7, 5)], [0, 0], "season")
    assert s[0]["winter"] == 50.0 and s[0]["summer"] == 50.0
    q = time_dependence([date(2024, 4, 5)], [0], "season", "quarter")
    assert q[0]["Q2"] == 100.0
