import numpy as np
import pytest
from sklearn.base import clone

from sparsetrack import DeltaRebalancer, SparseIndexTracker
from sparsetrack.diagnostics import te_raw

from conftest import sparse_index_problem

FAST = dict(sapg_iter=1500, sapg_burn=300, warmstart=200, mala_samples=3000, mala_burn=500)


def test_params_and_clone():
    est = SparseIndexTracker(k=3.0, pi_star=0.7)
    params = est.get_params()
    assert params["k"] == 3.0 and params["tau_c"] == 2e-3
    twin = clone(est)
    assert twin.get_params() == params
    assert twin is not est
    reb = DeltaRebalancer(pi_star=0.5)
    assert clone(reb).get_params()["pi_star"] == 0.5
    assert reb.gate_config().pi_star == 0.5


def test_unfitted_predict_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SparseIndexTracker().predict(np.zeros((2, 3)))


@pytest.fixture(scope="module")
def fitted():
    R, y, w, true = sparse_index_problem(seed=2, T=300, p=40, s=8)
    est = SparseIndexTracker(random_state=1, **FAST).fit(R, y)
    return est, R, y, true


def test_tracker_fit_attributes(fitted):
    est, R, y, true = fitted
    assert est.n_features_in_ == 40
    assert set(est.portfolios_) == {"pruned_proj", "refit_fista", "debias"}
    np.testing.assert_array_equal(est.coef_, est.portfolios_["refit_fista"].weights)
    assert est.coef_.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(est.coef_ >= 0)
    assert set(est.support_) <= set(np.flatnonzero(np.abs(est.w_map_) >= est.selection_.tau_post))
    assert est.theta_star_ > 0
    assert est.predict(R).shape == (300,)
    assert est.tracking_error(R, y) == pytest.approx(te_raw(y, R, est.coef_))
    assert len(set(true) & set(est.support_)) >= 7


def test_tracker_is_reproducible(fitted):
    est, R, y, _ = fitted
    again = SparseIndexTracker(random_state=1, **FAST).fit(R, y)
    np.testing.assert_array_equal(again.coef_, est.coef_)


def test_bad_portfolio_name():
    R, y, _, _ = sparse_index_problem(seed=3, T=200, p=20, s=5)
    with pytest.raises(ValueError):
        SparseIndexTracker(portfolio="nope", **FAST).fit(R, y)


@pytest.mark.filterwarnings("ignore::sparsetrack.exceptions.ClippingWarning")
def test_delta_rebalancer(fitted):
    est, R, y, _ = fitted
    reb = DeltaRebalancer(c_grid=(1, 30), sapg_iter=1200, sapg_burn=200, warmstart=200,
                          mala_samples=500, mala_burn=300, mala_thin=2)
    reb.fit(R, y, est.coef_)
    assert reb.c_star_ in (1.0, 30.0)
    assert reb.coef_.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(reb.coef_ >= 0)
    if not reb.decision_.acted:
        np.testing.assert_array_equal(reb.coef_, est.coef_)
    assert reb.predict(R).shape == (300,)
