"""Input validation helpers shared across the package.

All checks raise ``ValueError`` with a message naming the offending
argument, so estimator ``fit`` methods and the CLI can surface field-level
diagnostics without extra wrapping.
"""

from __future__ import annotations

import math

import numpy as np

HERMITICITY_ATOL = 1e-12
TRACE_ATOL = 1e-12
PSD_EIG_FLOOR = -1e-10
BLOCH_NORM_ATOL = 1e-12


def check_probability(p, name: str = "p") -> float:
    """Validate a probability in the closed unit interval and return it as float."""
    p = float(p)
    if not math.isfinite(p) or p < 0.0 or p > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def check_finite_angle(theta, name: str = "angle") -> float:
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"{name} must be a finite angle in radians, got {theta!r}")
    return theta


def as_setting(setting, name: str = "setting") -> tuple[float, float]:
    """Coerce a waveplate setting to a ``(q, h)`` pair of finite angles in radians."""
    try:
        q, h = setting
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a (q, h) angle pair, got {setting!r}") from None
    return (check_finite_angle(q, f"{name}.q"), check_finite_angle(h, f"{name}.h"))


def as_setting_list(settings, name: str = "settings") -> tuple[tuple[float, float], ...]:
    out = tuple(as_setting(s, f"{name}[{k}]") for k, s in enumerate(settings))
    if not out:
        raise ValueError(f"{name} must not be empty")
    return out


def as_density_matrix(rho, name: str = "rho", require_psd: bool = True) -> np.ndarray:
    """Validate a two-qubit density matrix and return it as a complex ndarray.

    Checks shape (4x4), Hermiticity and unit trace to 1e-12, and, unless
    ``require_psd`` is False (analysis inputs such as raw tomography output
    may carry small negative eigenvalues), positivity down to an eigenvalue
    floor of -1e-10.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"{name} must be a 4x4 matrix, got shape {rho.shape}")
    if not np.all(np.isfinite(rho.view(float))):
        raise ValueError(f"{name} contains non-finite entries")
    herm_err = np.abs(rho - rho.conj().T).max()
    if herm_err > HERMITICITY_ATOL:
        raise ValueError(f"{name} is not Hermitian (max deviation {herm_err:.3e})")
    trace_err = abs(rho.trace() - 1.0)
    if trace_err > TRACE_ATOL:
        raise ValueError(f"{name} does not have unit trace (deviation {trace_err:.3e})")
    if require_psd:
        lo = float(np.linalg.eigvalsh(rho).min())
        if lo < PSD_EIG_FLOOR:
            raise ValueError(
                f"{name} is not positive semidefinite (min eigenvalue {lo:.3e})"
            )
    return rho


def check_bloch_vector(vec, name: str = "bloch") -> np.ndarray:
    """Validate a unit-norm real Bloch 3-vector."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (3,):
        raise ValueError(f"{name} must be a real 3-vector, got shape {vec.shape}")
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > BLOCH_NORM_ATOL:
        raise ValueError(f"{name} must have unit norm, got |{name}| = {norm!r}")
    return vec


def check_index(idx, n: int, name: str) -> int:
    idx = int(idx)
    if not 0 <= idx < n:
        raise ValueError(f"{name} must be in [0, {n}), got {idx}")
    return idx
