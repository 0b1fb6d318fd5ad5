"""Tests for state tomography, physicality projection, fits and CHSH."""

import numpy as np
import pytest

from loopspam import states
from loopspam.counts import run_trials
from loopspam.tomography import (
    TomographyInput,
    chsh_s,
    fit_werner,
    project_physical,
    qst_linear,
    s_max_from_m,
)

PI = np.pi
ALICE = [(0.0, 0.0), (PI / 4, PI / 8), (PI / 4, 0.0), (PI / 8, PI / 16)]
BOB = [(PI / 8, PI / 16), (-PI / 8, -PI / 16), (PI / 4, 0.0), (PI / 4, PI / 8)]


def _random_density(rng):
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def test_qst_linear_exact_round_trip_werner():
    rho = states.werner_like(0.9, 0.7)
    tin = TomographyInput.exact(rho, ALICE, BOB)
    rec = qst_linear(tin)
    assert np.linalg.norm(rec - rho) < 1e-10


def test_qst_linear_exact_round_trip_bell():
    rho = states.bell_phi_plus()
    rec = qst_linear(TomographyInput.exact(rho, ALICE, BOB))
    assert np.linalg.norm(rec - rho) < 1e-10


def test_qst_linear_exact_round_trip_random_states():
    rng = np.random.default_rng(41)
    for _ in range(20):
        rho = _random_density(rng)
        rec = qst_linear(TomographyInput.exact(rho, ALICE, BOB))
        assert np.linalg.norm(rec - rho) < 1e-10


def test_qst_linear_rank_deficient_side_named():
    planar = [(0.0, 0.0), (PI / 4, PI / 8), (PI / 8, PI / 16), (PI / 16, PI / 32)]
    rho = states.werner_like(0.9, 0.7)
    with pytest.raises(ValueError, match="alice"):
        qst_linear(TomographyInput.exact(rho, planar, BOB))
    with pytest.raises(ValueError, match="bob"):
        qst_linear(TomographyInput.exact(rho, ALICE, planar))


def test_qst_from_sampled_counts():
    rho = states.werner_like(0.928, 0.628)
    ts = run_trials(rho, ALICE, BOB, None, 100_000, 1, master_seed=9)
    tin = TomographyInput.from_trial_set(ts)
    rec = project_physical(qst_linear(tin))
    err = np.linalg.norm(rec - rho)
    assert err < 0.05  # statistical scaling ~1/sqrt(n_total)


def test_tomography_input_from_records_missing_pair():
    rho = states.werner_like(0.9, 0.7)
    ts = run_trials(rho, ALICE, BOB, None, 1000, 1, master_seed=10)
    records = dict(ts.trials[0])
    del records[(1, 2)]
    with pytest.raises(ValueError, match=r"\(i=1, j=2\)"):
        TomographyInput.from_records(records, ALICE, BOB)


def _simplex_oracle(w):
    # Exhaustive water-filling: try every cut-off k, keep the valid one.
    u = np.sort(w)[::-1]
    best = None
    for k in range(1, len(w) + 1):
        tau = (u[:k].sum() - 1.0) / k
        candidate = np.clip(w - tau, 0.0, None)
        kept = candidate > 0
        if abs(candidate.sum() - 1.0) < 1e-12 and kept.sum() == k:
            best = candidate
    return best


def test_project_physical_matches_waterfilling_oracle():
    raw = np.diag([1.1, 0.1, -0.1, -0.1]).astype(complex)
    proj = project_physical(raw)
    w = np.linalg.eigvalsh(proj)
    assert w.min() > -1e-14
    assert abs(np.trace(proj).real - 1.0) < 1e-12
    oracle = _simplex_oracle(np.array([1.1, 0.1, -0.1, -0.1]))
    np.testing.assert_allclose(np.sort(w), np.sort(oracle), atol=1e-12)


def test_project_physical_keeps_physical_input():
    rho = states.werner_like(0.8, 0.6)
    np.testing.assert_allclose(project_physical(rho), rho, atol=1e-12)


def test_project_physical_idempotent():
    rng = np.random.default_rng(42)
    herm = rng.normal(size=(4, 4))
    herm = (herm + herm.T) / 2
    herm = herm / np.trace(herm)
    once = project_physical(herm)
    twice = project_physical(once)
    np.testing.assert_allclose(once, twice, atol=1e-12)


def test_project_physical_is_a_projection():
    # Never increases Frobenius distance to physical targets.
    rng = np.random.default_rng(43)
    herm = rng.normal(size=(4, 4))
    herm = (herm + herm.T) / 2
    herm = herm / np.trace(herm)
    proj = project_physical(herm)
    for _ in range(20):
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        target = g @ g.conj().T
        target /= np.trace(target).real
        assert np.linalg.norm(proj - target) <= np.linalg.norm(herm - target) + 1e-12


def test_fit_werner_self_fit():
    fit = fit_werner(states.werner_like(0.9, 0.7))
    assert abs(fit.p_s - 0.9) < 1e-3
    assert abs(fit.p_w - 0.7) < 1e-3
    assert fit.fidelity >= 1 - 1e-6
    assert not fit.degenerate


def test_fit_werner_recovers_parameters_on_grid():
    rng = np.random.default_rng(44)
    for _ in range(6):
        p_s = float(rng.uniform(0.1, 1.0))
        p_w = float(rng.uniform(0.2, 1.0))
        fit = fit_werner(states.werner_like(p_s, p_w))
        assert abs(fit.p_s - p_s) < 1e-3
        assert abs(fit.p_w - p_w) < 1e-3
        assert fit.fidelity >= 1 - 1e-6


def test_fit_werner_degenerate_boundary():
    # At p_w = 0 the family collapses to the maximally mixed state and p_s
    # drops out; the fit must flag that instead of reporting an arbitrary p_s.
    fit = fit_werner(states.werner_like(0.77, 0.0))
    assert fit.degenerate
    assert fit.p_w == 0.0
    assert fit.p_s == 0.0
    assert fit.fidelity >= 1 - 1e-6


def test_fit_werner_result_is_jsonable():
    obj = fit_werner(states.werner_like(0.5, 0.5)).to_jsonable()
    assert set(obj) == {"p_s", "p_w", "fidelity", "degenerate"}


def test_chsh_s_values():
    from loopspam.loop import exact_expectation_matrix

    e = exact_expectation_matrix(states.bell_phi_plus(), ALICE[:2], BOB[:2])
    assert abs(chsh_s(e[0, 0], e[0, 1], e[1, 0], e[1, 1]) - 2 * np.sqrt(2)) < 1e-9
    assert chsh_s(0, 0, 0, 0) == 0.0
    e = exact_expectation_matrix(states.werner_like(0.928, 0.628), ALICE[:2], BOB[:2])
    s = chsh_s(e[0, 0], e[0, 1], e[1, 0], e[1, 1])
    assert abs(s - np.sqrt(2) * 0.628 * (1 + 0.928)) < 1e-9


def test_chsh_s_rejects_out_of_range():
    with pytest.raises(ValueError):
        chsh_s(1.5, 0, 0, 0)


def test_s_max_from_m():
    assert abs(s_max_from_m(2.0) - 2 * np.sqrt(2)) < 1e-12
    assert round(s_max_from_m(0.749), 3) == 1.731
    assert round(s_max_from_m(1.726), 3) == 2.628
    with pytest.raises(ValueError):
        s_max_from_m(-0.1)


def test_marginals_recovered():
    # A state with nonzero local Bloch vectors round-trips those too.
    rho = 0.7 * states.werner_like(0.9, 0.7) + 0.3 * np.diag([0.7, 0.1, 0.1, 0.1]).astype(complex)
    rho = (rho + rho.conj().T) / 2
    rho /= np.trace(rho).real
    rec = qst_linear(TomographyInput.exact(rho, ALICE, BOB))
    m_a, m_b = states.local_bloch_vectors(rec)
    m_a0, m_b0 = states.local_bloch_vectors(rho)
    np.testing.assert_allclose(m_a, m_a0, atol=1e-10)
    np.testing.assert_allclose(m_b, m_b0, atol=1e-10)
