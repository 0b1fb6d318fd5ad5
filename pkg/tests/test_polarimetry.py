"""Tests for Jones calculus, measurement operators and the Eve policy."""

import numpy as np
import pytest

from loopspam import states
from loopspam.loop import exact_expectation_matrix
from loopspam.polarimetry import (
    EVE_MODES,
    EvePolicy,
    apply_eve,
    canonical_setting,
    hwp_jones,
    joint_expectation,
    joint_probabilities,
    measurement_operator,
    observable_matrix,
    qwp_jones,
    settings_equal,
)

PI = np.pi

# The four Alice and Bob setting lists used through the tests.
ALICE = [(0.0, 0.0), (PI / 4, PI / 8), (PI / 4, 0.0), (PI / 8, PI / 16)]
BOB = [(PI / 8, PI / 16), (-PI / 8, -PI / 16), (PI / 4, 0.0), (PI / 4, PI / 8)]


def test_hwp_special_angles():
    np.testing.assert_allclose(hwp_jones(0.0), np.diag([1.0, -1.0]), atol=1e-14)
    np.testing.assert_allclose(hwp_jones(PI / 4), np.array([[0, 1], [1, 0]]), atol=1e-14)


def test_qwp_special_angles():
    np.testing.assert_allclose(qwp_jones(0.0), np.diag([1.0, 1.0j]), atol=1e-14)
    # At pi/4 the QWP maps H to a circular state: equal-magnitude components.
    out = qwp_jones(PI / 4) @ np.array([1.0, 0.0])
    assert abs(abs(out[0]) - abs(out[1])) < 1e-12
    assert abs(abs(out[0]) - 1 / np.sqrt(2)) < 1e-12


def test_waveplates_are_unitary():
    rng = np.random.default_rng(21)
    for theta in rng.uniform(-2 * PI, 2 * PI, size=20):
        for w in (hwp_jones(theta), qwp_jones(theta)):
            np.testing.assert_allclose(w @ w.conj().T, np.eye(2), atol=1e-14)


def test_measurement_operator_canonical_settings():
    isq = 1 / np.sqrt(2)
    np.testing.assert_allclose(measurement_operator((0.0, 0.0)), [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(measurement_operator((PI / 4, PI / 8)), [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(measurement_operator((PI / 4, 0.0)), [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(measurement_operator((PI / 8, PI / 16)), [isq, 0, isq], atol=1e-12)
    np.testing.assert_allclose(
        measurement_operator((-PI / 8, -PI / 16)), [-isq, 0, isq], atol=1e-12
    )
    np.testing.assert_allclose(measurement_operator((-PI / 4, -PI / 8)), [-1, 0, 0], atol=1e-12)


def test_measurement_operator_unit_norm():
    rng = np.random.default_rng(22)
    for _ in range(50):
        q, h = rng.uniform(-PI, PI, size=2)
        assert abs(np.linalg.norm(measurement_operator((q, h))) - 1) < 1e-12


def test_half_turn_of_either_plate_preserves_the_observable():
    # HWP(h + pi/2) = -HWP(h) and QWP(q + pi) = QWP(q) up to phase, and a
    # global phase cancels in W* sigma_z W, so the Bloch vector is unchanged.
    rng = np.random.default_rng(23)
    for _ in range(20):
        q, h = rng.uniform(-PI, PI, size=2)
        a = measurement_operator((q, h))
        np.testing.assert_allclose(measurement_operator((q, h + PI / 2)), a, atol=1e-12)
        np.testing.assert_allclose(measurement_operator((q + PI, h)), a, atol=1e-12)


def test_observable_matrix_is_traceless_involution():
    a = observable_matrix(measurement_operator((0.3, 0.7)))
    assert abs(np.trace(a)) < 1e-12
    np.testing.assert_allclose(a @ a, np.eye(2), atol=1e-12)


def test_joint_expectation_known_values():
    bell = states.bell_phi_plus()
    assert abs(joint_expectation(bell, (0.0, 0.0), (0.0, 0.0)) - 1.0) < 1e-12
    assert abs(joint_expectation(np.eye(4) / 4, (0.3, 0.9), (1.1, -0.4))) < 1e-12
    value = joint_expectation(states.werner_like(0.928, 0.628), (0.0, 0.0), (PI / 8, PI / 16))
    assert abs(value - 0.628 / np.sqrt(2)) < 1e-12
    assert abs(value - 0.44406) < 5e-6


def test_joint_expectation_is_bilinear_in_bloch_vectors():
    rng = np.random.default_rng(24)
    for _ in range(100):
        rho = states.werner_like(rng.uniform(), rng.uniform())
        t = states.correlation_matrix(rho)
        a_setting = tuple(rng.uniform(-PI, PI, size=2))
        b_setting = tuple(rng.uniform(-PI, PI, size=2))
        a = measurement_operator(a_setting)
        b = measurement_operator(b_setting)
        direct = joint_expectation(rho, a_setting, b_setting)
        assert abs(direct - a @ t @ b) < 1e-10


def test_joint_probabilities_known_values():
    bell = states.bell_phi_plus()
    np.testing.assert_allclose(
        joint_probabilities(bell, (0.0, 0.0), (0.0, 0.0)), [0.5, 0, 0, 0.5], atol=1e-12
    )
    np.testing.assert_allclose(
        joint_probabilities(np.eye(4) / 4, (0.5, 0.2), (1.0, 0.8)), [0.25] * 4, atol=1e-12
    )


def test_joint_probabilities_recombine_to_expectation():
    rng = np.random.default_rng(25)
    for _ in range(50):
        rho = states.werner_like(rng.uniform(), rng.uniform())
        a = tuple(rng.uniform(-PI, PI, size=2))
        b = tuple(rng.uniform(-PI, PI, size=2))
        p = joint_probabilities(rho, a, b)
        assert min(p) >= 0.0
        assert abs(sum(p) - 1.0) < 1e-12
        e = p[0] - p[1] - p[2] + p[3]
        assert abs(e - joint_expectation(rho, a, b)) < 1e-12


def test_convention_lock_chsh_on_bell_state():
    # The arbiter for every Jones-calculus convention in the package: the
    # canonical CHSH quadruple on the Bell state must reach 2*sqrt(2).
    bell = states.bell_phi_plus()
    a = [ALICE[0], ALICE[1]]
    b = [BOB[0], BOB[1]]
    s = (
        joint_expectation(bell, a[0], b[0])
        + joint_expectation(bell, a[0], b[1])
        + joint_expectation(bell, a[1], b[0])
        - joint_expectation(bell, a[1], b[1])
    )
    assert abs(s - 2 * np.sqrt(2)) < 1e-9


def test_canonical_setting_and_equality():
    assert settings_equal((0.0, 0.0), (PI, PI))
    assert settings_equal((PI / 4, PI / 8), (PI / 4 - PI, PI / 8 + PI))
    assert not settings_equal((0.0, 0.0), (0.0, 0.1))
    q, h = canonical_setting((PI + 0.25, -PI + 0.5))
    assert 0 <= q < PI and 0 <= h < PI


def test_apply_eve_off_is_identity():
    policy = EvePolicy.off(4, 4)
    assert apply_eve(policy, 2, 3, (0.1, 0.2)) == (0.1, 0.2)
    assert apply_eve(None, 0, 0, (0.1, 0.2)) == (0.1, 0.2)


def test_apply_eve_paper_table_entries():
    policy = EvePolicy.paper_table(ALICE, BOB)
    # Alice on the x-type setting: Bob's minus-diagonal becomes -x.
    assert settings_equal(apply_eve(policy, 1, 1, BOB[1]), (-PI / 4, -PI / 8))
    # Alice on the x-type setting: Bob's plus-diagonal becomes +x.
    assert settings_equal(apply_eve(policy, 1, 0, BOB[0]), (PI / 4, PI / 8))
    # Alice on the z-type setting: Bob's minus-diagonal becomes z.
    assert settings_equal(apply_eve(policy, 0, 1, BOB[1]), (0.0, 0.0))
    # Unlisted pairs untouched.
    assert apply_eve(policy, 2, 2, BOB[2]) == BOB[2]
    # paper_table does NOT remap Bob's plus-diagonal when Alice is on z.
    assert apply_eve(policy, 0, 0, BOB[0]) == BOB[0]


def test_apply_eve_max_correlation_extra_entry():
    policy = EvePolicy.max_correlation(ALICE, BOB)
    assert settings_equal(apply_eve(policy, 0, 0, BOB[0]), (0.0, 0.0))


def test_apply_eve_rejects_unknown_index():
    policy = EvePolicy.paper_table(ALICE, BOB)
    with pytest.raises(ValueError):
        apply_eve(policy, 4, 0, BOB[0])
    with pytest.raises(ValueError):
        apply_eve(policy, 0, -1, BOB[0])


def test_eve_policy_validation():
    assert EVE_MODES == ("off", "paper_table", "max_correlation")
    with pytest.raises(ValueError):
        EvePolicy("bogus", 4, 4)
    with pytest.raises(ValueError):
        EvePolicy("off", 4, 4, {(0, 0): (0.0, 0.0)})
    with pytest.raises(ValueError):
        # Canonical settings absent from the declared lists.
        EvePolicy.paper_table([(0.3, 0.4)] * 4, BOB)


def test_eve_policy_with_remaps():
    policy = EvePolicy.paper_table(ALICE, BOB).with_remaps(
        [{"alice_index": 2, "bob_index": 2, "new_setting": [0.0, 0.0]}]
    )
    assert apply_eve(policy, 2, 2, BOB[2]) == (0.0, 0.0)
    with pytest.raises(ValueError):
        policy.with_remaps([{"alice_index": 0}])


def test_eve_off_matches_no_policy_bit_for_bit():
    rho = states.werner_like(0.9, 0.8)
    e_none = exact_expectation_matrix(rho, ALICE, BOB, eve=None)
    e_off = exact_expectation_matrix(rho, ALICE, BOB, eve=EvePolicy.off(4, 4))
    assert (e_none == e_off).all()
