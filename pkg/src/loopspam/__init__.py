"""loopspam: loop SPAM tomography on simulated polarization-entangled pairs.

Simulates two-photon coincidence experiments (Werner-like states, waveplate
measurement settings, optional eavesdropper) and detects correlated
state-preparation-and-measurement errors through the partial determinant of
the joint expectation matrix — without trusting either the source or the
detectors individually. Also provides linear-inversion state tomography,
Werner-model fitting and CHSH extraction, plus a CLI scenario runner
(``loopspam --help``).
"""

from .counts import (
    CoincidenceRecord,
    SchemaError,
    TrialSet,
    estimate_alice_marginal,
    estimate_bob_marginal,
    estimate_expectation,
    estimate_probability,
    run_trials,
    simulate_pair,
    trial_rng,
)
from .loop import (
    ConditioningError,
    LoopConsistencyTest,
    PartialDeterminantStats,
    Verdict,
    build_expectation_matrix,
    corners,
    delta_statistics,
    embed_overlapping,
    exact_expectation_matrix,
    expectation_matrices,
    partial_determinant,
    verdict,
)
from .polarimetry import (
    EVE_MODES,
    EvePolicy,
    apply_eve,
    hwp_jones,
    joint_expectation,
    joint_probabilities,
    measurement_operator,
    observable_matrix,
    qwp_jones,
)
from .states import (
    bell_phi_plus,
    correlation_matrix,
    fidelity,
    horodecki_m,
    local_bloch_vectors,
    m_werner,
    negativity,
    negativity_lower_bound,
    partial_transpose,
    purity,
    source_state,
    werner_like,
)
from .tomography import (
    StateTomography,
    TomographyInput,
    WernerFit,
    WernerStateFit,
    chsh_s,
    fit_werner,
    project_physical,
    qst_linear,
    s_max_from_m,
)

__version__ = "0.1.0"

__all__ = [
    "CoincidenceRecord",
    "ConditioningError",
    "EVE_MODES",
    "EvePolicy",
    "LoopConsistencyTest",
    "PartialDeterminantStats",
    "SchemaError",
    "StateTomography",
    "TomographyInput",
    "TrialSet",
    "Verdict",
    "WernerFit",
    "WernerStateFit",
    "apply_eve",
    "bell_phi_plus",
    "build_expectation_matrix",
    "chsh_s",
    "corners",
    "correlation_matrix",
    "delta_statistics",
    "embed_overlapping",
    "estimate_alice_marginal",
    "estimate_bob_marginal",
    "estimate_expectation",
    "estimate_probability",
    "exact_expectation_matrix",
    "expectation_matrices",
    "fidelity",
    "fit_werner",
    "horodecki_m",
    "hwp_jones",
    "joint_expectation",
    "joint_probabilities",
    "local_bloch_vectors",
    "m_werner",
    "measurement_operator",
    "negativity",
    "negativity_lower_bound",
    "observable_matrix",
    "partial_determinant",
    "partial_transpose",
    "project_physical",
    "purity",
    "qst_linear",
    "qwp_jones",
    "run_trials",
    "s_max_from_m",
    "simulate_pair",
    "source_state",
    "trial_rng",
    "verdict",
    "werner_like",
]
