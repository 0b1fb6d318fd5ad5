"""Estimator-API conventions: params, cloning, fitted state, errors."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from loopspam import states
from loopspam.counts import run_trials
from loopspam.loop import LoopConsistencyTest
from loopspam.polarimetry import EvePolicy
from loopspam.tomography import StateTomography, WernerStateFit

PI = np.pi
ALICE = [(0.0, 0.0), (PI / 4, PI / 8), (PI / 4, 0.0), (PI / 8, PI / 16)]
BOB = [(PI / 8, PI / 16), (-PI / 8, -PI / 16), (PI / 4, 0.0), (PI / 4, PI / 8)]


@pytest.fixture(scope="module")
def trial_set():
    rho = states.werner_like(0.928, 0.628)
    return run_trials(rho, ALICE, BOB, None, 20_000, 6, master_seed=101)


@pytest.fixture(scope="module")
def eve_trial_set():
    rho = states.werner_like(0.928, 0.628)
    eve = EvePolicy.max_correlation(ALICE, BOB)
    return run_trials(rho, ALICE, BOB, eve, 20_000, 6, master_seed=101)


def test_get_set_params_round_trip():
    est = LoopConsistencyTest(threshold=4.5, condition_cap=1e6)
    params = est.get_params()
    assert params == {"threshold": 4.5, "condition_cap": 1e6}
    est.set_params(threshold=2.0)
    assert est.threshold == 2.0

    tomo = StateTomography(alice_settings=ALICE, bob_settings=BOB, project=False)
    assert tomo.get_params()["project"] is False

    fitter = WernerStateFit(grid_size=51, refine_maxiter=50)
    assert fitter.get_params() == {"grid_size": 51, "refine_maxiter": 50}


def test_clone_preserves_params():
    est = clone(LoopConsistencyTest(threshold=5.0))
    assert est.threshold == 5.0
    tomo = clone(StateTomography(project=False))
    assert tomo.project is False


def test_not_fitted_errors():
    with pytest.raises(NotFittedError):
        LoopConsistencyTest().predict()
    with pytest.raises(NotFittedError):
        LoopConsistencyTest().decision_value()
    with pytest.raises(NotFittedError):
        StateTomography().summary()


def test_loop_estimator_fit_predict(trial_set, eve_trial_set):
    est = LoopConsistencyTest()
    assert est.fit(trial_set) is est
    assert est.verdict_ == "consistent"
    assert est.predict() == "consistent"
    assert est.decision_value() < est.threshold
    assert est.ratio_.shape == (3, 3)
    assert est.n_trials_ == 6

    eve_est = LoopConsistencyTest().fit(eve_trial_set)
    assert eve_est.detected_
    assert eve_est.predict() == "correlated_errors_detected"
    assert eve_est.worst_ratio_ > eve_est.threshold
    report = eve_est.to_report()
    assert report["verdict"] == "correlated_errors_detected"
    assert len(report["ratio"]) == 3


def test_state_tomography_fit(trial_set):
    tomo = StateTomography().fit(trial_set)
    assert tomo.rho_.shape == (4, 4)
    assert np.linalg.eigvalsh(tomo.rho_).min() > -1e-12
    summary = tomo.summary()
    for key in ("rho", "rho_raw", "purity", "negativity", "horodecki_m", "s_max", "werner_fit"):
        assert key in summary

    raw = StateTomography(project=False).fit(trial_set)
    np.testing.assert_allclose(raw.rho_, raw.rho_raw_, atol=0)


def test_state_tomography_on_plain_records(trial_set):
    records = trial_set.pooled_records()
    with pytest.raises(ValueError, match="settings"):
        StateTomography().fit(records)
    tomo = StateTomography(alice_settings=ALICE, bob_settings=BOB).fit(records)
    assert abs(np.trace(tomo.rho_).real - 1) < 1e-12


def test_werner_state_fit_estimator():
    est = WernerStateFit()
    fitted = est.fit(states.werner_like(0.9, 0.7))
    assert fitted is est
    assert abs(est.p_s_ - 0.9) < 1e-3
    assert abs(est.p_w_ - 0.7) < 1e-3
    assert est.fidelity_ >= 1 - 1e-6
    assert not est.degenerate_
    assert est.result_.p_s == est.p_s_
