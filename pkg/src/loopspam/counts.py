"""Coincidence-count simulation and the count-based estimators.

Sampling model: for one setting pair the four coincidence cells are a
single multinomial draw of ``n_total`` events over the exact Born
probabilities, so the estimators below condition on the total count.

Seed lineage: trial ``t`` of a run with master seed ``m`` draws from
``numpy.random.default_rng(numpy.random.SeedSequence(m, spawn_key=(t,)))``.
SeedSequence's mixing is part of numpy's stability guarantee, so runs
reproduce bit-for-bit across platforms, and distinct trials get
statistically independent streams that do not depend on execution order.
Within a trial, pairs are drawn in row-major (i, then j) order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .polarimetry import EvePolicy, apply_eve, joint_probabilities
from .validation import as_density_matrix, as_setting_list

CSV_HEADER = ("trial", "i", "j", "n_ab", "n_abp", "n_apb", "n_apbp")


class SchemaError(ValueError):
    """A counts file violates the expected schema; message carries the line."""


@dataclass(frozen=True)
class CoincidenceRecord:
    """The four joint detection counts for one setting pair.

    Primes mark the -1 detectors: ``n_abp`` counts (A, B') coincidences.
    """

    n_ab: int
    n_abp: int
    n_apb: int
    n_apbp: int

    def __post_init__(self):
        for name in ("n_ab", "n_abp", "n_apb", "n_apbp"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.n_ab + self.n_abp + self.n_apb + self.n_apbp

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n_ab, self.n_abp, self.n_apb, self.n_apbp)


def _require_total(rec: CoincidenceRecord) -> int:
    if rec.total == 0:
        raise ValueError("coincidence record has zero total count; cannot estimate")
    return rec.total


def estimate_probability(rec: CoincidenceRecord) -> float:
    """P(A, B) estimate: n_ab over the total coincidence count."""
    return rec.n_ab / _require_total(rec)


def estimate_expectation(rec: CoincidenceRecord) -> float:
    """Joint +/-1 expectation estimate:
    (n_ab - n_ab' - n_a'b + n_a'b') / total."""
    return (rec.n_ab - rec.n_abp - rec.n_apb + rec.n_apbp) / _require_total(rec)


def estimate_alice_marginal(rec: CoincidenceRecord) -> float:
    """<A x 1> estimate from one record: (n_ab + n_ab' - n_a'b - n_a'b')/total."""
    return (rec.n_ab + rec.n_abp - rec.n_apb - rec.n_apbp) / _require_total(rec)


def estimate_bob_marginal(rec: CoincidenceRecord) -> float:
    """<1 x B> estimate from one record."""
    return (rec.n_ab - rec.n_abp + rec.n_apb - rec.n_apbp) / _require_total(rec)


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """The private random stream of one trial (see module docstring)."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index),))
    return np.random.default_rng(seq)


def trial_seed_words(master_seed: int, trial_index: int) -> list[int]:
    """Fingerprint of a trial's seed: the first four 32-bit SeedSequence words."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index),))
    return [int(w) for w in seq.generate_state(4)]


def simulate_pair(rho, a, b, n_total: int, rng: np.random.Generator) -> CoincidenceRecord:
    """One multinomial draw of ``n_total`` coincidences for a setting pair."""
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    p = np.array(joint_probabilities(rho, a, b))
    counts = rng.multinomial(int(n_total), p / p.sum())
    return CoincidenceRecord(*(int(c) for c in counts))


@dataclass(frozen=True)
class TrialSet:
    """Repeated coincidence measurements over a full settings grid.

    ``trials[t][(i, j)]`` is the record for Alice setting ``i`` and Bob
    setting ``j`` in trial ``t``. Every trial covers the same grid.
    """

    alice_settings: tuple[tuple[float, float], ...]
    bob_settings: tuple[tuple[float, float], ...]
    trials: tuple[dict[tuple[int, int], CoincidenceRecord], ...]
    master_seed: int | None = None
    n_total: int | None = None
    trial_seeds: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "alice_settings", as_setting_list(self.alice_settings, "alice_settings"))
        object.__setattr__(self, "bob_settings", as_setting_list(self.bob_settings, "bob_settings"))
        grid = {(i, j) for i in range(self.n_alice) for j in range(self.n_bob)}
        for t, records in enumerate(self.trials):
            missing = grid - set(records)
            if missing:
                i, j = sorted(missing)[0]
                raise ValueError(f"trial {t} is missing the record for (i={i}, j={j})")
            extra = set(records) - grid
            if extra:
                raise ValueError(f"trial {t} has records outside the settings grid: {sorted(extra)[:3]}")

    @property
    def n_alice(self) -> int:
        return len(self.alice_settings)

    @property
    def n_bob(self) -> int:
        return len(self.bob_settings)

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    def pooled_records(self) -> dict[tuple[int, int], CoincidenceRecord]:
        """Sum counts over trials, one record per setting pair."""
        pooled = {}
        for i in range(self.n_alice):
            for j in range(self.n_bob):
                cells = np.array([t[(i, j)].as_tuple() for t in self.trials], dtype=np.int64)
                pooled[(i, j)] = CoincidenceRecord(*(int(c) for c in cells.sum(axis=0)))
        return pooled

    # -- serialization -------------------------------------------------------

    def write_csv(self, path) -> None:
        """Counts table with columns trial,i,j,n_ab,n_abp,n_apb,n_apbp."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for t, records in enumerate(self.trials):
                for i in range(self.n_alice):
                    for j in range(self.n_bob):
                        writer.writerow((t, i, j) + records[(i, j)].as_tuple())

    @classmethod
    def read_csv(cls, path, alice_settings, bob_settings) -> "TrialSet":
        """Load a counts CSV; the settings lists come from the caller.

        Raises :class:`SchemaError` with the offending line number for
        malformed rows, and a ValueError naming the first missing
        (trial, i, j) cell for incomplete grids.
        """
        alice_settings = as_setting_list(alice_settings, "alice_settings")
        bob_settings = as_setting_list(bob_settings, "bob_settings")
        rows: dict[int, dict[tuple[int, int], CoincidenceRecord]] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != list(CSV_HEADER):
                raise SchemaError(
                    f"{path}: line 1: expected header {','.join(CSV_HEADER)}"
                )
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 7:
                    raise SchemaError(f"{path}: line {lineno}: expected 7 columns, got {len(row)}")
                try:
                    t, i, j, *cells = (int(x) for x in row)
                except ValueError:
                    raise SchemaError(f"{path}: line {lineno}: non-integer field") from None
                if min(cells) < 0 or t < 0:
                    raise SchemaError(f"{path}: line {lineno}: negative count or trial index")
                if not (0 <= i < len(alice_settings) and 0 <= j < len(bob_settings)):
                    raise SchemaError(
                        f"{path}: line {lineno}: setting indices (i={i}, j={j}) outside "
                        f"the {len(alice_settings)}x{len(bob_settings)} grid"
                    )
                if (i, j) in rows.setdefault(t, {}):
                    raise SchemaError(f"{path}: line {lineno}: duplicate cell (trial={t}, i={i}, j={j})")
                rows[t][(i, j)] = CoincidenceRecord(*cells)
        if not rows:
            raise SchemaError(f"{path}: no data rows")
        trial_ids = sorted(rows)
        for t in trial_ids:
            for i in range(len(alice_settings)):
                for j in range(len(bob_settings)):
                    if (i, j) not in rows[t]:
                        raise ValueError(
                            f"{path}: missing record for (trial={t}, i={i}, j={j})"
                        )
        return cls(
            alice_settings=alice_settings,
            bob_settings=bob_settings,
            trials=tuple(rows[t] for t in trial_ids),
        )

    def to_jsonable(self) -> dict:
        return {
            "alice_settings": [list(s) for s in self.alice_settings],
            "bob_settings": [list(s) for s in self.bob_settings],
            "master_seed": self.master_seed,
            "n_total": self.n_total,
            "trial_seeds": [
                {"trial": t, "spawn_key": [t], "state_words": list(words)}
                for t, words in enumerate(self.trial_seeds)
            ],
            "trials": [
                {
                    "trial": t,
                    "records": [
                        {"i": i, "j": j, **dict(zip(CSV_HEADER[3:], records[(i, j)].as_tuple()))}
                        for i in range(self.n_alice)
                        for j in range(self.n_bob)
                    ],
                }
                for t, records in enumerate(self.trials)
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_jsonable(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_jsonable(cls, obj) -> "TrialSet":
        try:
            alice = obj["alice_settings"]
            bob = obj["bob_settings"]
            trials_obj = obj["trials"]
        except (TypeError, KeyError) as exc:
            raise SchemaError(f"counts JSON missing field: {exc}") from None
        trials = []
        for entry in trials_obj:
            records = {}
            for rec in entry["records"]:
                records[(int(rec["i"]), int(rec["j"]))] = CoincidenceRecord(
                    int(rec["n_ab"]), int(rec["n_abp"]), int(rec["n_apb"]), int(rec["n_apbp"])
                )
            trials.append(records)
        seeds = tuple(
            tuple(s["state_words"]) for s in obj.get("trial_seeds", [])
        )
        return cls(
            alice_settings=tuple(tuple(s) for s in alice),
            bob_settings=tuple(tuple(s) for s in bob),
            trials=tuple(trials),
            master_seed=obj.get("master_seed"),
            n_total=obj.get("n_total"),
            trial_seeds=seeds,
        )

    @classmethod
    def read_json(cls, path) -> "TrialSet":
        with open(path) as fh:
            return cls.from_jsonable(json.load(fh))


def run_trials(
    rho,
    alice_settings,
    bob_settings,
    eve: EvePolicy | None,
    n_total: int,
    n_trials: int,
    master_seed: int,
) -> TrialSet:
    """Simulate ``n_trials`` passes over the full settings grid.

    Bob's setting for each pair goes through ``apply_eve`` before the Born
    probabilities are evaluated. Each trial draws from its own derived
    stream, so the result is reproducible and order-independent.
    """
    rho = as_density_matrix(rho)
    alice_settings = as_setting_list(alice_settings, "alice_settings")
    bob_settings = as_setting_list(bob_settings, "bob_settings")
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")

    # Probabilities depend only on the setting pair; evaluate the grid once.
    probs = {}
    for i, a in enumerate(alice_settings):
        for j, b in enumerate(bob_settings):
            b_eff = apply_eve(eve, i, j, b)
            p = np.array(joint_probabilities(rho, a, b_eff))
            probs[(i, j)] = p / p.sum()

    trials = []
    seeds = []
    for t in range(n_trials):
        rng = trial_rng(master_seed, t)
        seeds.append(tuple(trial_seed_words(master_seed, t)))
        records = {}
        for i in range(len(alice_settings)):
            for j in range(len(bob_settings)):
                counts = rng.multinomial(int(n_total), probs[(i, j)])
                records[(i, j)] = CoincidenceRecord(*(int(c) for c in counts))
        trials.append(records)
    return TrialSet(
        alice_settings=alice_settings,
        bob_settings=bob_settings,
        trials=tuple(trials),
        master_seed=int(master_seed),
        n_total=int(n_total),
        trial_seeds=tuple(seeds),
    )
