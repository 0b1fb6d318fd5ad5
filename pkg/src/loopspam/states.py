"""Two-qubit polarization states and their entanglement diagnostics.

Density matrices are plain 4x4 complex ndarrays over the product basis
|HH>, |HV>, |VH>, |VV> (first factor = Alice). Pauli indices are ordered
(x, y, z) everywhere.
"""

from __future__ import annotations

import numpy as np

from .validation import as_density_matrix, check_probability

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)

_SQRT2 = np.sqrt(2.0)


def bell_phi_plus() -> np.ndarray:
    """Projector onto (|HH> + |VV>)/sqrt(2)."""
    ket = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / _SQRT2
    return np.outer(ket, ket.conj())


def source_state(p_s) -> np.ndarray:
    """Partially dephased Bell state: the ideal pair with probability ``p_s``,
    otherwise an equal incoherent mixture of |HH> and |VV>."""
    p_s = check_probability(p_s, "p_s")
    rho = p_s * bell_phi_plus()
    rho[0, 0] += (1.0 - p_s) / 2.0
    rho[3, 3] += (1.0 - p_s) / 2.0
    return rho


def werner_like(p_s, p_w) -> np.ndarray:
    """Werner-like state: ``source_state(p_s)`` diluted with unpolarized
    background, ``p_w * rho_s + (1 - p_w)/4 * I``."""
    p_w = check_probability(p_w, "p_w")
    return p_w * source_state(p_s) + (1.0 - p_w) / 4.0 * np.eye(4, dtype=complex)


def purity(rho) -> float:
    """Tr(rho^2); 1 for pure states, 1/4 for the maximally mixed state."""
    rho = as_density_matrix(rho)
    return float(np.trace(rho @ rho).real)


def correlation_matrix(rho) -> np.ndarray:
    """3x3 matrix of Pauli-Pauli expectations T[i,j] = Tr[rho (sigma_i x sigma_j)]."""
    rho = as_density_matrix(rho)
    t = np.empty((3, 3))
    for i, si in enumerate(PAULIS):
        for j, sj in enumerate(PAULIS):
            t[i, j] = np.trace(rho @ np.kron(si, sj)).real
    return t


def local_bloch_vectors(rho) -> tuple[np.ndarray, np.ndarray]:
    """Single-qubit Bloch vectors of the two reduced states (Alice, Bob)."""
    rho = as_density_matrix(rho)
    eye = np.eye(2, dtype=complex)
    m_a = np.array([np.trace(rho @ np.kron(s, eye)).real for s in PAULIS])
    m_b = np.array([np.trace(rho @ np.kron(eye, s)).real for s in PAULIS])
    return m_a, m_b


def horodecki_m(rho) -> float:
    """Horodecki CHSH criterion parameter M(rho).

    M is the sum of the two largest eigenvalues of U = T^t T, where T is
    the Pauli correlation matrix. The largest CHSH value reachable with
    ideal measurements is 2*sqrt(M), so rho can violate the inequality iff
    M > 1. M lies in [0, 2].
    """
    t = correlation_matrix(rho)
    u = np.linalg.eigvalsh(t.T @ t)  # ascending, all >= 0 up to rounding
    return float(u[-1] + u[-2])


def m_werner(p_s, p_w) -> float:
    """Closed form of ``horodecki_m`` on ``werner_like(p_s, p_w)``:
    p_w^2 + p_s^2 p_w^2."""
    p_s = check_probability(p_s, "p_s")
    p_w = check_probability(p_w, "p_w")
    return p_w**2 + p_s**2 * p_w**2


def partial_transpose(rho) -> np.ndarray:
    """Transpose on the second (Bob) qubit's indices."""
    rho = np.asarray(rho, dtype=complex)
    return rho.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)


def negativity(rho) -> float:
    """Entanglement negativity: 2 * sum of |negative eigenvalues| of the
    partial transpose. 0 for separable two-qubit states, 1 for Bell states."""
    rho = as_density_matrix(rho)
    eigs = np.linalg.eigvalsh(partial_transpose(rho))
    return float(2.0 * np.clip(-eigs, 0.0, None).sum())


def negativity_lower_bound(s) -> float:
    """Bound on the negativity implied by a measured CHSH value: S/sqrt(2) - 1.

    May be negative (no information); callers interpret max(0, bound).
    """
    s = float(s)
    if s < 0.0:
        raise ValueError(f"s must be nonnegative, got {s!r}")
    return s / _SQRT2 - 1.0


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition; clips rounding noise."""
    w, v = np.linalg.eigh(mat)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.conj().T


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity F(rho, sigma) = [Tr sqrt(sqrt(rho) sigma sqrt(rho))]^2.

    Squared convention: F in [0, 1], F = 1 iff the states coincide, and for
    a pure rho it reduces to the overlap <psi|sigma|psi>. Symmetric in its
    arguments. Rejects non-PSD input.
    """
    rho = as_density_matrix(rho, "rho")
    sigma = as_density_matrix(sigma, "sigma")
    sr = _sqrtm_psd(rho)
    inner = sr @ sigma @ sr
    w = np.linalg.eigvalsh((inner + inner.conj().T) / 2.0)
    root_sum = np.sqrt(np.clip(w, 0.0, None)).sum()
    return float(min(root_sum**2, 1.0))


def to_jsonable(rho) -> list:
    """Serialize a density matrix to nested lists of [re, im] pairs."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {rho.shape}")
    return [[[float(z.real), float(z.imag)] for z in row] for row in rho]


def from_jsonable(obj, require_psd: bool = True) -> np.ndarray:
    """Rebuild a density matrix from the ``to_jsonable`` representation."""
    arr = np.asarray(obj, dtype=float)
    if arr.shape != (4, 4, 2):
        raise ValueError(
            f"expected a 4x4 array of [re, im] pairs, got shape {arr.shape}"
        )
    return as_density_matrix(arr[..., 0] + 1j * arr[..., 1], require_psd=require_psd)
