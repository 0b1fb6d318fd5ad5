"""The loop consistency test: partial determinant of the expectation matrix.

With n = 3 free parameters per polarization measurement, a 6x6 grid of
joint expectations E[i, j] partitions into 3x3 corners

    E = [[A, B],
         [C, D]]

and the data admits a single state plus one fixed observable per setting
(no correlated errors) if and only if the partial determinant
A^-1 B D^-1 C equals the identity. Nothing about the state or the
observables needs to be known or estimated. Four settings per side
suffice: the 4x4 measured matrix is embedded into 6x6 by copying rows and
columns 2 and 3 (1-based) to positions 5 and 6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .counts import CoincidenceRecord, TrialSet, estimate_expectation
from .polarimetry import EvePolicy, apply_eve, joint_expectation
from .validation import as_density_matrix, as_setting_list

#: Row/column provenance of the 4 -> 6 embedding: output row k is a copy of
#: input row EMBED_INDEX[k] (same for columns).
EMBED_INDEX = (0, 1, 2, 3, 1, 2)

DEFAULT_CONDITION_CAP = 1e8
DEFAULT_THRESHOLD = 3.0


class ConditioningError(ValueError):
    """A corner of the expectation matrix is too ill-conditioned to invert."""

    def __init__(self, corner: str, cond: float, cap: float):
        self.corner = corner
        self.cond = cond
        self.cap = cap
        super().__init__(
            f"corner {corner} is ill-conditioned (condition number {cond:.3e} "
            f"exceeds the cap {cap:.1e}); the first three settings on each "
            f"side must be linearly independent as Bloch vectors (e.g. add a "
            f"circular-polarization setting to a purely planar CHSH set)"
        )


def build_expectation_matrix(trial, n_alice: int, n_bob: int) -> np.ndarray:
    """Per-pair expectation estimates of one trial as an (n_alice, n_bob) array.

    ``trial`` maps (i, j) to a :class:`CoincidenceRecord`. A missing pair
    raises with its indices named.
    """
    e = np.empty((n_alice, n_bob))
    for i in range(n_alice):
        for j in range(n_bob):
            try:
                rec = trial[(i, j)]
            except KeyError:
                raise ValueError(f"trial is missing the record for (i={i}, j={j})") from None
            e[i, j] = estimate_expectation(rec)
    return e


def exact_expectation_matrix(rho, alice_settings, bob_settings, eve: EvePolicy | None = None) -> np.ndarray:
    """Noise-free expectation matrix: E[i, j] = Tr[rho (A_i x B_j)], with
    Bob's settings passed through the eavesdropper policy."""
    rho = as_density_matrix(rho)
    alice_settings = as_setting_list(alice_settings, "alice_settings")
    bob_settings = as_setting_list(bob_settings, "bob_settings")
    e = np.empty((len(alice_settings), len(bob_settings)))
    for i, a in enumerate(alice_settings):
        for j, b in enumerate(bob_settings):
            e[i, j] = joint_expectation(rho, a, apply_eve(eve, i, j, b))
    return e


def embed_overlapping(e4) -> np.ndarray:
    """Embed a measured 4x4 expectation matrix into the 6x6 overlap form."""
    e4 = np.asarray(e4, dtype=float)
    if e4.shape != (4, 4):
        raise ValueError(f"expected a 4x4 expectation matrix, got shape {e4.shape}")
    idx = np.array(EMBED_INDEX)
    return e4[np.ix_(idx, idx)]


def corners(e6) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Partition a 6x6 expectation matrix into its 3x3 corners (A, B, C, D)."""
    e6 = np.asarray(e6, dtype=float)
    if e6.shape != (6, 6):
        raise ValueError(f"expected a 6x6 expectation matrix, got shape {e6.shape}")
    return e6[:3, :3], e6[:3, 3:], e6[3:, :3], e6[3:, 3:]


def _inv3(m: np.ndarray) -> np.ndarray:
    """Closed-form adjugate inverse of a 3x3 matrix, deterministic across
    platforms; falls back to LAPACK if the residual is poor."""
    det = (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )
    adj = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != j]
            c = [k for k in range(3) if k != i]
            minor = m[r[0], c[0]] * m[r[1], c[1]] - m[r[0], c[1]] * m[r[1], c[0]]
            adj[i, j] = ((-1) ** (i + j)) * minor
    inv = adj / det
    if np.abs(inv @ m - np.eye(3)).max() > 1e-8:
        inv = np.linalg.inv(m)
    return inv


def partial_determinant(e6, condition_cap: float = DEFAULT_CONDITION_CAP) -> np.ndarray:
    """A^-1 B D^-1 C of the 6x6 expectation matrix.

    Raises :class:`ConditioningError` naming the corner when A or D has a
    2-norm condition number above ``condition_cap``.
    """
    a, b, c, d = corners(e6)
    for name, corner in (("A", a), ("D", d)):
        cond = float(np.linalg.cond(corner))
        if not np.isfinite(cond) or cond > condition_cap:
            raise ConditioningError(name, cond, condition_cap)
    return _inv3(a) @ b @ _inv3(d) @ c


def _deltas_from_trials(trials, condition_cap: float) -> np.ndarray:
    """Stack of per-trial partial-determinant deviations Delta - I."""
    deltas = []
    eye = np.eye(3)
    for e in trials:
        e = np.asarray(e, dtype=float)
        if e.shape == (4, 4):
            e = embed_overlapping(e)
        elif e.shape != (6, 6):
            raise ValueError(
                f"expectation matrices must be 4x4 or 6x6, got shape {e.shape}"
            )
        deltas.append(partial_determinant(e, condition_cap) - eye)
    if len(deltas) < 2:
        raise ValueError("need at least 2 trials to form statistics")
    return np.array(deltas)


def expectation_matrices(trial_set: TrialSet) -> np.ndarray:
    """Per-trial expectation matrices of a trial set, stacked."""
    return np.array(
        [
            build_expectation_matrix(t, trial_set.n_alice, trial_set.n_bob)
            for t in trial_set.trials
        ]
    )


@dataclass(frozen=True)
class PartialDeterminantStats:
    """Elementwise trial statistics of Delta - I.

    ``ratio`` is |mean| / std; cells whose sample std collapsed to zero are
    degenerate (copied data, not a zero-variance measurement) and get a
    ratio of 0 or inf depending on the mean, with ``degenerate`` set.
    """

    mean: np.ndarray
    std: np.ndarray
    ratio: np.ndarray
    n_trials: int
    degenerate: bool

    def to_jsonable(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "ratio": self.ratio.tolist(),
            "n_trials": self.n_trials,
            "degenerate": self.degenerate,
        }


def delta_statistics(trials, condition_cap: float = DEFAULT_CONDITION_CAP) -> PartialDeterminantStats:
    """Mean, sample std and |mean|/std of Delta - I over trials.

    ``trials`` is a :class:`TrialSet` or an iterable of per-trial 4x4 or
    6x6 expectation matrices. A trial whose corners fail the conditioning
    gate aborts the whole computation with that trial's diagnostic.
    """
    if isinstance(trials, TrialSet):
        trials = expectation_matrices(trials)
    deltas = _deltas_from_trials(trials, condition_cap)
    mean = deltas.mean(axis=0)
    std = deltas.std(axis=0, ddof=1)
    zero_std = std == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(mean) / std
    ratio[zero_std] = np.where(np.abs(mean[zero_std]) > 0.0, np.inf, 0.0)
    return PartialDeterminantStats(
        mean=mean,
        std=std,
        ratio=ratio,
        n_trials=len(deltas),
        degenerate=bool(zero_std.any()),
    )


VERDICT_CONSISTENT = "consistent"
VERDICT_DETECTED = "correlated_errors_detected"


@dataclass(frozen=True)
class Verdict:
    verdict: str
    detected: bool
    threshold: float
    worst_entry: tuple[int, int]
    worst_ratio: float

    def to_jsonable(self) -> dict:
        return {
            "verdict": self.verdict,
            "detected": self.detected,
            "threshold": self.threshold,
            "worst_entry": list(self.worst_entry),
            "worst_ratio": self.worst_ratio,
        }


def verdict(stats: PartialDeterminantStats, threshold: float = DEFAULT_THRESHOLD) -> Verdict:
    """Detection decision: correlated errors iff any ratio entry exceeds
    ``threshold``. Ties resolve to the first worst cell in row-major order."""
    flat = np.nan_to_num(stats.ratio, nan=0.0, posinf=np.inf)
    worst = int(np.argmax(flat))
    wi, wj = divmod(worst, stats.ratio.shape[1])
    worst_ratio = float(stats.ratio[wi, wj])
    detected = bool(worst_ratio > threshold)
    return Verdict(
        verdict=VERDICT_DETECTED if detected else VERDICT_CONSISTENT,
        detected=detected,
        threshold=float(threshold),
        worst_entry=(wi, wj),
        worst_ratio=worst_ratio,
    )


def write_stats_csv(stats: PartialDeterminantStats, path) -> None:
    """Flat (row, col, mean, std, ratio) table for heatmap plotting."""
    with open(path, "w", newline="") as fh:
        fh.write("row,col,mean,std,ratio\n")
        for i in range(3):
            for j in range(3):
                fh.write(
                    f"{i},{j},{float(stats.mean[i, j])!r},"
                    f"{float(stats.std[i, j])!r},{float(stats.ratio[i, j])!r}\n"
                )


class LoopConsistencyTest(BaseEstimator):
    """Detector for correlated state-preparation-and-measurement errors.

    Fit on repeated expectation measurements; the per-trial partial
    determinants are aggregated into mean/std/ratio matrices and a verdict.

    Parameters
    ----------
    threshold : float
        Detection threshold on |mean|/std of Delta - I entries.
    condition_cap : float
        Maximum accepted condition number for the inverted corners.

    Attributes (after ``fit``)
    --------------------------
    delta_mean_, delta_std_, ratio_ : (3, 3) ndarrays
    n_trials_ : int
    verdict_ : str, ``"consistent"`` or ``"correlated_errors_detected"``
    detected_ : bool
    worst_entry_, worst_ratio_ : location and value of the largest ratio
    degenerate_ : bool, True when some cell had zero sample std
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, condition_cap: float = DEFAULT_CONDITION_CAP):
        self.threshold = threshold
        self.condition_cap = condition_cap

    def fit(self, X, y=None):
        """Fit on a :class:`TrialSet` or a stack of per-trial expectation
        matrices (n_trials, 4, 4) or (n_trials, 6, 6)."""
        stats = delta_statistics(X, condition_cap=self.condition_cap)
        v = verdict(stats, threshold=self.threshold)
        self.stats_ = stats
        self.delta_mean_ = stats.mean
        self.delta_std_ = stats.std
        self.ratio_ = stats.ratio
        self.n_trials_ = stats.n_trials
        self.degenerate_ = stats.degenerate
        self.verdict_ = v.verdict
        self.detected_ = v.detected
        self.worst_entry_ = v.worst_entry
        self.worst_ratio_ = v.worst_ratio
        return self

    def _check_fitted(self):
        if not hasattr(self, "stats_"):
            raise NotFittedError("this LoopConsistencyTest instance is not fitted yet")

    def predict(self, X=None) -> str:
        """Verdict string for the fitted data (``X`` is ignored if given)."""
        if X is not None:
            self.fit(X)
        self._check_fitted()
        return self.verdict_

    def decision_value(self) -> float:
        """Largest |mean|/std ratio; detection means it exceeds the threshold."""
        self._check_fitted()
        return self.worst_ratio_

    def to_report(self) -> dict:
        self._check_fitted()
        report = self.stats_.to_jsonable()
        report.update(
            verdict(self.stats_, threshold=self.threshold).to_jsonable()
        )
        return report
