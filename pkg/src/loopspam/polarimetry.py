"""Jones calculus for the waveplate analyzers, and the eavesdropper model.

Conventions (these three choices jointly fix every sign in the package;
the lock test asserting S = 2*sqrt(2) on the Bell state guards them):

* HWP(theta) = [[cos 2t, sin 2t], [sin 2t, -cos 2t]], global phase dropped.
* QWP(theta) = R(theta) diag(1, i) R(-theta), R = real rotation.
* Beam order is QWP first, then HWP, then the polarizer, so the analyzed
  observable for a setting (q, h) is A = W^dag sigma_z W with
  W = HWP(h) @ QWP(q). The transmitted (H) detector carries outcome +1.

A setting's observable is returned as its real Bloch 3-vector a, with
A = a . sigma; the pair of detectors is unbiased, so |a| = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi

import numpy as np

from .states import PAULIS, SIGMA_Z
from .validation import as_density_matrix, as_setting, as_setting_list, check_finite_angle, check_index

Setting = tuple[float, float]


def hwp_jones(theta) -> np.ndarray:
    """Jones matrix of a half-wave plate with fast axis at ``theta``."""
    theta = check_finite_angle(theta)
    c, s = np.cos(2.0 * theta), np.sin(2.0 * theta)
    return np.array([[c, s], [s, -c]], dtype=complex)


def qwp_jones(theta) -> np.ndarray:
    """Jones matrix of a quarter-wave plate with fast axis at ``theta``."""
    theta = check_finite_angle(theta)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]], dtype=complex)
    return rot @ np.diag([1.0, 1.0j]) @ rot.T


def measurement_operator(setting) -> np.ndarray:
    """Bloch vector of the +/-1 observable analyzed by a (q, h) setting."""
    q, h = as_setting(setting)
    w = hwp_jones(h) @ qwp_jones(q)
    obs = w.conj().T @ SIGMA_Z @ w
    return np.array([np.trace(obs @ s).real / 2.0 for s in PAULIS])


def observable_matrix(bloch) -> np.ndarray:
    """2x2 Hermitian observable a . sigma for a Bloch vector a."""
    bloch = np.asarray(bloch, dtype=float)
    return sum(b * s for b, s in zip(bloch, PAULIS))


def joint_expectation(rho, a, b) -> float:
    """Tr[rho (A x B)] for the observables of Alice's setting ``a`` and
    Bob's setting ``b``; always in [-1, 1]."""
    rho = as_density_matrix(rho)
    op = np.kron(
        observable_matrix(measurement_operator(a)),
        observable_matrix(measurement_operator(b)),
    )
    return float(np.trace(rho @ op).real)


def joint_probabilities(rho, a, b) -> tuple[float, float, float, float]:
    """Born probabilities (pAB, pAB', pA'B, pA'B') of the four coincidence
    outcomes, from the projector pairs (1 +/- A)/2 and (1 +/- B)/2.

    Nonnegative and summing to one; they recombine to ``joint_expectation``
    through the +1/-1 outcome assignment.
    """
    rho = as_density_matrix(rho)
    eye = np.eye(2, dtype=complex)
    op_a = observable_matrix(measurement_operator(a))
    op_b = observable_matrix(measurement_operator(b))
    proj_a = ((eye + op_a) / 2.0, (eye - op_a) / 2.0)
    proj_b = ((eye + op_b) / 2.0, (eye - op_b) / 2.0)
    probs = []
    for pa in proj_a:
        for pb in proj_b:
            p = np.trace(rho @ np.kron(pa, pb)).real
            probs.append(float(max(p, 0.0)))  # clip eigensolver rounding
    return tuple(probs)


def canonical_setting(setting) -> Setting:
    """Reduce both angles modulo pi (the Jones matrices' exact period)."""
    q, h = as_setting(setting)
    return (q % pi, h % pi)


def settings_equal(s1, s2, atol: float = 1e-9) -> bool:
    """Compare two settings modulo the waveplates' pi periodicity."""
    c1, c2 = canonical_setting(s1), canonical_setting(s2)
    return all(
        min(abs(a - b), pi - abs(a - b)) <= atol for a, b in zip(c1, c2)
    )


# --- Eavesdropper -----------------------------------------------------------
#
# Eve knows both parties' setting choices in advance and rotates Bob's
# photons so that, for selected (Alice index, Bob index) pairs, Bob's
# analyzer effectively runs at a different setting. She is modeled as pure
# setting substitution: no extra optical element, no randomness.

EVE_MODES = ("off", "paper_table", "max_correlation")

_A_Z = (0.0, 0.0)
_A_X = (pi / 4, pi / 8)
_B_PLUS = (pi / 8, pi / 16)
_B_MINUS = (-pi / 8, -pi / 16)


@dataclass(frozen=True)
class EvePolicy:
    """Setting-substitution attack table.

    ``table`` maps (alice_index, bob_index) to the replacement setting for
    Bob; unlisted pairs are untouched. ``n_alice``/``n_bob`` declare the
    valid index ranges. Mode ``off`` must carry an empty table.
    """

    mode: str
    n_alice: int
    n_bob: int
    table: dict[tuple[int, int], Setting] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in EVE_MODES:
            raise ValueError(f"eve mode must be one of {EVE_MODES}, got {self.mode!r}")
        if self.mode == "off" and self.table:
            raise ValueError("eve mode 'off' does not accept remap entries")
        for (i, j), s in self.table.items():
            check_index(i, self.n_alice, "remap alice_index")
            check_index(j, self.n_bob, "remap bob_index")
            as_setting(s, "remap new_setting")

    @classmethod
    def off(cls, n_alice: int = 4, n_bob: int = 4) -> "EvePolicy":
        return cls("off", n_alice, n_bob)

    @classmethod
    def paper_table(cls, alice_settings, bob_settings) -> "EvePolicy":
        """The three-entry remap list: with Alice on the z-type setting
        (0, 0), Bob's (-pi/8, -pi/16) becomes (0, 0); with Alice on the
        x-type setting (pi/4, pi/8), Bob's (pi/8, pi/16) becomes
        (pi/4, pi/8) and (-pi/8, -pi/16) becomes (-pi/4, -pi/8)."""
        table = cls._canonical_table(alice_settings, bob_settings, extended=False)
        return cls("paper_table", len(alice_settings), len(bob_settings), table)

    @classmethod
    def max_correlation(cls, alice_settings, bob_settings) -> "EvePolicy":
        """``paper_table`` plus the remap of Bob's (pi/8, pi/16) to (0, 0)
        when Alice is on (0, 0), which maximizes the apparent CHSH value
        (all four correlators reach the state's diagonal extremes)."""
        table = cls._canonical_table(alice_settings, bob_settings, extended=True)
        return cls("max_correlation", len(alice_settings), len(bob_settings), table)

    @staticmethod
    def _canonical_table(alice_settings, bob_settings, extended: bool):
        alice_settings = as_setting_list(alice_settings, "alice_settings")
        bob_settings = as_setting_list(bob_settings, "bob_settings")

        def locate(settings, target, side):
            for k, s in enumerate(settings):
                if settings_equal(s, target):
                    return k
            raise ValueError(
                f"built-in eve table needs {side} setting {target} declared, "
                f"but it is not in the {side} setting list"
            )

        ia_z = locate(alice_settings, _A_Z, "alice")
        ia_x = locate(alice_settings, _A_X, "alice")
        jb_plus = locate(bob_settings, _B_PLUS, "bob")
        jb_minus = locate(bob_settings, _B_MINUS, "bob")
        table = {
            (ia_z, jb_minus): (0.0, 0.0),
            (ia_x, jb_plus): (pi / 4, pi / 8),
            (ia_x, jb_minus): (-pi / 4, -pi / 8),
        }
        if extended:
            table[(ia_z, jb_plus)] = (0.0, 0.0)
        return table

    def with_remaps(self, remaps) -> "EvePolicy":
        """Return a copy whose table is extended/overridden by explicit
        ``{alice_index, bob_index, new_setting}`` entries."""
        table = dict(self.table)
        for k, entry in enumerate(remaps):
            try:
                i = entry["alice_index"]
                j = entry["bob_index"]
                s = entry["new_setting"]
            except (TypeError, KeyError):
                raise ValueError(
                    f"remap[{k}] must carry alice_index, bob_index and new_setting"
                ) from None
            table[(int(i), int(j))] = as_setting(s, f"remap[{k}].new_setting")
        return EvePolicy(self.mode, self.n_alice, self.n_bob, table)


def apply_eve(policy: EvePolicy | None, alice_idx: int, bob_idx: int, bob_setting) -> Setting:
    """Bob's effective setting for a given setting pair under ``policy``.

    ``None`` and mode ``off`` leave the setting untouched. Indices outside
    the policy's declared ranges are rejected.
    """
    bob_setting = as_setting(bob_setting, "bob_setting")
    if policy is None:
        return bob_setting
    alice_idx = check_index(alice_idx, policy.n_alice, "alice_idx")
    bob_idx = check_index(bob_idx, policy.n_bob, "bob_idx")
    return policy.table.get((alice_idx, bob_idx), bob_setting)
