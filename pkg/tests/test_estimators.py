import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hmtl.core import HierarchicalDataset, Hyperparams, InvalidInputError, rmse
from hmtl.driver import DriverConfig, fit_hmtl
from hmtl.estimators import (
    BestESMRegressor,
    HMTLRegressor,
    MMARegressor,
    MSSLRegressor,
    OLSRegressor,
    S2M2RRegressor,
    check_hierarchical_X,
    check_hierarchical_Xy,
    hierarchical_rmse,
)

from oracles import random_tasks


def _nested(seed=0, T=2, m=3, d=4, n=15):
    rng = np.random.default_rng(seed)
    data = HierarchicalDataset(tuple(tuple(random_tasks(rng, m, d, n)) for _ in range(T)))
    return data, [[s.X for s in st] for st in data], [[s.y for s in st] for st in data]


def test_params_and_clone():
    est = HMTLRegressor(lambda1=0.003, random_state=5)
    params = est.get_params()
    assert params["lambda1"] == 0.003 and params["random_state"] == 5
    twin = clone(est)
    assert twin.get_params() == params
    assert "lambda2" not in MSSLRegressor().get_params()
    assert clone(S2M2RRegressor(lambda_=3.0, grid=(1, 3))).get_params()["grid"] == (1, 3)


def test_fit_matches_driver():
    data, X, y = _nested()
    est = HMTLRegressor(lambda0=0.2, lambda1=0.01, lambda2=0.05, random_state=3).fit(X, y)
    model = fit_hmtl(data, Hyperparams(0.2, 0.01, 0.05), DriverConfig(rng_seed=3))
    np.testing.assert_array_equal(est.coef_, np.stack(model.thetas))
    np.testing.assert_array_equal(est.precision_, np.stack(model.omegas))
    assert est.report_.converged


def test_dataset_accepted_in_place_of_arrays():
    data, X, y = _nested(seed=1)
    a = HMTLRegressor().fit(X, y)
    b = HMTLRegressor().fit(data)
    np.testing.assert_array_equal(a.coef_, b.coef_)


def test_mssl_is_hmtl_without_group_term():
    _, X, y = _nested(seed=2, T=3)
    a = MSSLRegressor(lambda1=0.02, random_state=4).fit(X, y)
    b = HMTLRegressor(lambda1=0.02, lambda2=0.0, random_state=4).fit(X, y)
    np.testing.assert_allclose(a.coef_, b.coef_, atol=1e-8)
    np.testing.assert_allclose(a.precision_, b.precision_, atol=1e-8)


def test_predict_and_score():
    _, X, y = _nested(seed=3)
    est = OLSRegressor().fit(X, y)
    pred = est.predict(X)
    assert len(pred) == 2 and pred[1][2].shape == (15,)
    np.testing.assert_allclose(pred[0][1], X[0][1] @ est.coef_[0, :, 1])
    expected = -np.mean([[rmse(p, o) for p, o in zip(ps, os)] for ps, os in zip(pred, y)])
    assert est.score(X, y) == pytest.approx(expected)
    assert hierarchical_rmse(pred, y).shape == (2, 3)


def test_baseline_estimators():
    _, X, y = _nested(seed=4, m=4)
    np.testing.assert_array_equal(MMARegressor().fit(X, y).predict(X)[0][0], X[0][0].mean(axis=1))
    best = BestESMRegressor().fit(X, y)
    assert best.best_index_.shape == (2, 4)
    k = best.best_index_[1, 2]
    np.testing.assert_array_equal(best.predict(X)[1][2], X[1][2][:, k])
    s = S2M2RRegressor(lambda_=0.0, grid=(2, 2)).fit(X, y)
    np.testing.assert_allclose(s.coef_, OLSRegressor().fit(X, y).coef_, atol=1e-8)
    with pytest.raises(InvalidInputError):
        S2M2RRegressor(grid=(3, 3)).fit(X, y)


def test_not_fitted():
    _, X, _ = _nested()
    with pytest.raises(NotFittedError):
        HMTLRegressor().predict(X)


def test_predict_shape_mismatch():
    _, X, y = _nested()
    est = OLSRegressor().fit(X, y)
    with pytest.raises(InvalidInputError):
        est.predict(X[:1])
    with pytest.raises(InvalidInputError):
        est.predict([[x[:, :2] for x in st] for st in X])


def test_input_validation():
    with pytest.raises(InvalidInputError):
        check_hierarchical_X([])
    with pytest.raises(InvalidInputError):
        check_hierarchical_X([[np.ones(3)]])
    with pytest.raises(InvalidInputError):
        check_hierarchical_X([[np.ones((2, 2))], [np.ones((2, 2)), np.ones((2, 2))]])
    with pytest.raises(InvalidInputError):
        check_hierarchical_X([[np.full((2, 2), np.nan)]])
    with pytest.raises(InvalidInputError):
        check_hierarchical_Xy([[np.ones((2, 2))]], [[np.ones(2)], [np.ones(2)]])
    with pytest.raises(InvalidInputError):
        check_hierarchical_Xy([[np.ones((2, 2))]], [[np.ones(3)]])
    data = check_hierarchical_Xy([[np.eye(2)]], [[np.ones(2)]])
    assert (data.T, data.m, data.d) == (1, 1, 2)
