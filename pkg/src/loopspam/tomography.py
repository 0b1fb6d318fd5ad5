"""State estimation from coincidence counts, and CHSH extraction.

The tomography route is linear inversion: the Pauli expansion

    rho = (1/4) sum_{mu,nu} r[mu,nu] sigma_mu x sigma_nu

has 15 free parameters (two local Bloch vectors and the 3x3 correlation
block), recovered by least squares from the measured joint expectations
and the per-side marginals, then projected onto the physical (PSD, unit
trace) cone by eigenvalue simplex projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import states
from .counts import TrialSet, estimate_alice_marginal, estimate_bob_marginal, estimate_expectation
from .polarimetry import measurement_operator
from .validation import as_density_matrix, as_setting_list

_EYE2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class TomographyInput:
    """Joint expectations plus per-side marginals, with their settings.

    ``e[i, j]`` is the joint expectation for Alice setting ``i`` and Bob
    setting ``j``; ``alice_marginals[i]`` estimates <A_i x 1> pooled over
    all of Bob's settings (the same records, no extra data), and
    symmetrically for Bob.
    """

    e: np.ndarray
    alice_marginals: np.ndarray
    bob_marginals: np.ndarray
    alice_settings: tuple[tuple[float, float], ...]
    bob_settings: tuple[tuple[float, float], ...]

    @classmethod
    def from_records(cls, records, alice_settings, bob_settings) -> "TomographyInput":
        """Build from a mapping (i, j) -> CoincidenceRecord covering the grid."""
        alice_settings = as_setting_list(alice_settings, "alice_settings")
        bob_settings = as_setting_list(bob_settings, "bob_settings")
        na, nb = len(alice_settings), len(bob_settings)
        e = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                try:
                    e[i, j] = estimate_expectation(records[(i, j)])
                except KeyError:
                    raise ValueError(f"records are missing the pair (i={i}, j={j})") from None
        # Marginals pool the integer counts across the other side's settings
        # before dividing, so each side uses all of its data once.
        am = np.empty(na)
        for i in range(na):
            num = sum(
                records[(i, j)].n_ab + records[(i, j)].n_abp
                - records[(i, j)].n_apb - records[(i, j)].n_apbp
                for j in range(nb)
            )
            den = sum(records[(i, j)].total for j in range(nb))
            am[i] = num / den
        bm = np.empty(nb)
        for j in range(nb):
            num = sum(
                records[(i, j)].n_ab - records[(i, j)].n_abp
                + records[(i, j)].n_apb - records[(i, j)].n_apbp
                for i in range(na)
            )
            den = sum(records[(i, j)].total for i in range(na))
            bm[j] = num / den
        return cls(e, am, bm, alice_settings, bob_settings)

    @classmethod
    def from_trial_set(cls, trial_set: TrialSet) -> "TomographyInput":
        """Pool a trial set's counts and build the tomography input."""
        return cls.from_records(
            trial_set.pooled_records(), trial_set.alice_settings, trial_set.bob_settings
        )

    @classmethod
    def exact(cls, rho, alice_settings, bob_settings) -> "TomographyInput":
        """Noise-free input evaluated directly from the state."""
        rho = as_density_matrix(rho)
        alice_settings = as_setting_list(alice_settings, "alice_settings")
        bob_settings = as_setting_list(bob_settings, "bob_settings")
        t = states.correlation_matrix(rho)
        m_a, m_b = states.local_bloch_vectors(rho)
        a_vecs = np.array([measurement_operator(s) for s in alice_settings])
        b_vecs = np.array([measurement_operator(s) for s in bob_settings])
        return cls(a_vecs @ t @ b_vecs.T, a_vecs @ m_a, b_vecs @ m_b, alice_settings, bob_settings)


def qst_linear(tin: TomographyInput) -> np.ndarray:
    """Least-squares linear inversion; Hermitian and unit trace by
    construction, but possibly unphysical (not PSD).

    Raises if either side's setting Bloch vectors do not span 3-space,
    naming the deficient side.
    """
    a_vecs = np.array([measurement_operator(s) for s in tin.alice_settings])
    b_vecs = np.array([measurement_operator(s) for s in tin.bob_settings])
    for side, vecs in (("alice", a_vecs), ("bob", b_vecs)):
        if np.linalg.matrix_rank(vecs, tol=1e-10) < 3:
            raise ValueError(
                f"{side} settings are rank-deficient: their Bloch vectors do not "
                f"span 3-space, so the state is not identifiable from this side"
            )
    # Correlation block: E[i, j] = a_i^T T b_j, one row kron(a_i, b_j) per pair.
    design = np.einsum("ik,jl->ijkl", a_vecs, b_vecs).reshape(-1, 9)
    t_flat, *_ = np.linalg.lstsq(design, np.asarray(tin.e, dtype=float).ravel(), rcond=None)
    m_a, *_ = np.linalg.lstsq(a_vecs, np.asarray(tin.alice_marginals, dtype=float), rcond=None)
    m_b, *_ = np.linalg.lstsq(b_vecs, np.asarray(tin.bob_marginals, dtype=float), rcond=None)
    t = t_flat.reshape(3, 3)

    rho = np.eye(4, dtype=complex)
    for k, sk in enumerate(states.PAULIS):
        rho += m_a[k] * np.kron(sk, _EYE2)
        rho += m_b[k] * np.kron(_EYE2, sk)
        for l, sl in enumerate(states.PAULIS):
            rho += t[k, l] * np.kron(sk, sl)
    return rho / 4.0


def _project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(w) + 1)
    valid = u - (css - 1.0) / ks > 0.0
    k = int(ks[valid][-1])
    tau = (css[k - 1] - 1.0) / k
    return np.clip(w - tau, 0.0, None)


def project_physical(rho_raw) -> np.ndarray:
    """Closest PSD unit-trace matrix in Frobenius norm.

    The input must already be Hermitian with unit trace; the projection
    acts on its spectrum only and is idempotent.
    """
    rho_raw = as_density_matrix(rho_raw, "rho_raw", require_psd=False)
    w, v = np.linalg.eigh(rho_raw)
    w = _project_simplex(w)
    return (v * w) @ v.conj().T


# --- Werner-model fit -------------------------------------------------------

@dataclass(frozen=True)
class WernerFit:
    """Best fidelity fit of the two-parameter Werner-like family.

    ``degenerate`` flags a boundary optimum with p_w = 0, where the model
    no longer depends on p_s (p_s is reported as 0 by convention there).
    """

    p_s: float
    p_w: float
    fidelity: float
    degenerate: bool

    def to_jsonable(self) -> dict:
        return {
            "p_s": self.p_s,
            "p_w": self.p_w,
            "fidelity": self.fidelity,
            "degenerate": self.degenerate,
        }


def _werner_batch(p_s: np.ndarray, p_w: np.ndarray) -> np.ndarray:
    """Stack of werner_like(p_s, p_w) matrices for parameter arrays."""
    n = p_s.shape[0]
    out = np.zeros((n, 4, 4), dtype=complex)
    hi = p_w / 2.0 + (1.0 - p_w) / 4.0
    lo = (1.0 - p_w) / 4.0
    corner = p_s * p_w / 2.0
    out[:, 0, 0] = out[:, 3, 3] = hi
    out[:, 1, 1] = out[:, 2, 2] = lo
    out[:, 0, 3] = out[:, 3, 0] = corner
    return out


def _fidelity_batch(sqrt_rho: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    inner = np.einsum("ab,nbc,cd->nad", sqrt_rho, sigmas, sqrt_rho)
    inner = (inner + np.conj(np.transpose(inner, (0, 2, 1)))) / 2.0
    w = np.linalg.eigvalsh(inner)
    return np.sqrt(np.clip(w, 0.0, None)).sum(axis=1) ** 2


DEGENERATE_PW_TOL = 1e-6


def fit_werner(rho, grid_size: int = 101, refine_maxiter: int = 200) -> WernerFit:
    """Fit (p_s, p_w) by maximizing fidelity with the Werner-like family.

    Deterministic: a ``grid_size x grid_size`` scan over [0, 1]^2 (ties
    resolve toward smaller p_s, then smaller p_w) seeds a bounded
    Nelder-Mead refinement with a fixed iteration budget.
    """
    rho = as_density_matrix(rho)
    sqrt_rho = states._sqrtm_psd(rho)

    axis = np.linspace(0.0, 1.0, grid_size)
    ps_grid, pw_grid = np.meshgrid(axis, axis, indexing="ij")
    ps_flat, pw_flat = ps_grid.ravel(), pw_grid.ravel()
    fvals = _fidelity_batch(sqrt_rho, _werner_batch(ps_flat, pw_flat))
    best = int(np.argmax(fvals))  # first max = smallest p_s, then p_w
    p0 = np.array([ps_flat[best], pw_flat[best]])

    def objective(x):
        x = np.clip(x, 0.0, 1.0)
        return -float(_fidelity_batch(sqrt_rho, _werner_batch(x[:1] * 1.0, x[1:2] * 1.0))[0])

    res = minimize(
        objective,
        p0,
        method="Nelder-Mead",
        bounds=[(0.0, 1.0), (0.0, 1.0)],
        options={"maxiter": refine_maxiter, "xatol": 1e-10, "fatol": 1e-14},
    )
    candidates = [(float(-res.fun), np.clip(res.x, 0.0, 1.0)), (float(fvals[best]), p0)]
    f_opt, x_opt = max(candidates, key=lambda c: c[0])
    p_s, p_w = float(x_opt[0]), float(x_opt[1])
    degenerate = p_w <= DEGENERATE_PW_TOL
    if degenerate:
        p_s, p_w = 0.0, 0.0
        f_opt = float(states.fidelity(rho, states.werner_like(0.0, 0.0)))
    return WernerFit(p_s=p_s, p_w=p_w, fidelity=min(f_opt, 1.0), degenerate=degenerate)


# --- CHSH -------------------------------------------------------------------

def chsh_s(e11, e12, e21, e22) -> float:
    """CHSH combination E11 + E12 + E21 - E22 of four joint expectations."""
    vals = [float(v) for v in (e11, e12, e21, e22)]
    for v in vals:
        if abs(v) > 1.0 + 1e-9:
            raise ValueError(f"expectation values must lie in [-1, 1], got {v!r}")
    return vals[0] + vals[1] + vals[2] - vals[3]


def s_max_from_m(m) -> float:
    """Largest CHSH value reachable from a state with Horodecki parameter m."""
    m = float(m)
    if m < 0.0:
        raise ValueError(f"m must be nonnegative, got {m!r}")
    return 2.0 * np.sqrt(m)


# --- Estimators -------------------------------------------------------------

class StateTomography(BaseEstimator):
    """Linear-inversion state estimator over a waveplate settings grid.

    Parameters
    ----------
    alice_settings, bob_settings : sequences of (q, h) pairs or None
        Required when fitting on a plain records mapping; ignored (taken
        from the data) when fitting on a TrialSet or TomographyInput.
    project : bool
        Project the linear-inversion estimate onto the physical cone.

    Attributes (after ``fit``)
    --------------------------
    input_ : TomographyInput
    rho_raw_ : linear-inversion estimate (may be unphysical)
    rho_ : the physical estimate (equals rho_raw_ when project=False)
    raw_min_eigenvalue_ : smallest eigenvalue of rho_raw_
    """

    def __init__(self, alice_settings=None, bob_settings=None, project: bool = True):
        self.alice_settings = alice_settings
        self.bob_settings = bob_settings
        self.project = project

    def fit(self, X, y=None):
        if isinstance(X, TomographyInput):
            tin = X
        elif isinstance(X, TrialSet):
            tin = TomographyInput.from_trial_set(X)
        else:
            if self.alice_settings is None or self.bob_settings is None:
                raise ValueError(
                    "fitting on a records mapping requires alice_settings and bob_settings"
                )
            tin = TomographyInput.from_records(X, self.alice_settings, self.bob_settings)
        self.input_ = tin
        self.rho_raw_ = qst_linear(tin)
        self.raw_min_eigenvalue_ = float(np.linalg.eigvalsh(self.rho_raw_).min())
        self.rho_ = project_physical(self.rho_raw_) if self.project else self.rho_raw_
        return self

    def _check_fitted(self):
        if not hasattr(self, "rho_"):
            raise NotFittedError("this StateTomography instance is not fitted yet")

    def summary(self, include_werner_fit: bool = True) -> dict:
        """Diagnostics of the fitted state (purity, entanglement, CHSH reach)."""
        self._check_fitted()
        rho = as_density_matrix(self.rho_, require_psd=True)
        m = states.horodecki_m(rho)
        out = {
            "rho_raw": states.to_jsonable(self.rho_raw_),
            "rho": states.to_jsonable(rho),
            "raw_min_eigenvalue": self.raw_min_eigenvalue_,
            "purity": states.purity(rho),
            "negativity": states.negativity(rho),
            "horodecki_m": m,
            "s_max": s_max_from_m(m),
        }
        if include_werner_fit:
            out["werner_fit"] = fit_werner(rho).to_jsonable()
        return out


class WernerStateFit(BaseEstimator):
    """Estimator wrapper around :func:`fit_werner`.

    Attributes (after ``fit``): ``p_s_``, ``p_w_``, ``fidelity_``,
    ``degenerate_`` and the full ``result_``.
    """

    def __init__(self, grid_size: int = 101, refine_maxiter: int = 200):
        self.grid_size = grid_size
        self.refine_maxiter = refine_maxiter

    def fit(self, X, y=None):
        result = fit_werner(X, grid_size=self.grid_size, refine_maxiter=self.refine_maxiter)
        self.result_ = result
        self.p_s_ = result.p_s
        self.p_w_ = result.p_w
        self.fidelity_ = result.fidelity
        self.degenerate_ = result.degenerate
        return self
