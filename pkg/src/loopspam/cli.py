"""Scenario runner and analysis commands.

Subcommands
-----------
``simulate <scenario>``
    Run a scenario (bundled name or JSON config file): simulate counts,
    run the loop consistency test, extract CHSH and tomograph the state.
    Writes ``counts.csv``, ``report.json`` and ``delta_stats.csv``.
``analyze <counts.csv> --settings <file>``
    The identical analysis pipeline on an existing counts file (no
    simulation stage); same outputs minus the counts file.
``plotdata <report.json>``
    Re-emit a report's loop statistics as three flat (row, col, value)
    CSV grids for external plotting.
``qst <counts.csv> --settings <file>``
    State tomography only; writes ``qst_report.json``.

Exit codes: 0 = consistent (or no detection question asked),
2 = correlated errors detected, 1 = operational error (bad usage,
unreadable input, schema or validation failure). The output directory
is, in decreasing precedence: ``--outdir``, the ``LOOPSPAM_OUTDIR``
environment variable, the config's ``outputs`` field, the current
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from importlib.resources import files as resource_files
from pathlib import Path

import numpy as np

from . import states
from .counts import SchemaError, TrialSet, run_trials, trial_seed_words
from .loop import (
    DEFAULT_CONDITION_CAP,
    DEFAULT_THRESHOLD,
    ConditioningError,
    LoopConsistencyTest,
    PartialDeterminantStats,
    expectation_matrices,
    write_stats_csv,
)
from .polarimetry import EVE_MODES, EvePolicy, measurement_operator
from .tomography import StateTomography, chsh_s
from .validation import as_setting_list, check_probability

OUTDIR_ENV = "LOOPSPAM_OUTDIR"

#: Minimum settings per side for each analysis stage.
MIN_SETTINGS_CHSH = 2
MIN_SETTINGS_LOOP = 4

_ALLOWED_CONFIG_KEYS = {
    "state",
    "alice_settings",
    "bob_settings",
    "eve",
    "n_total",
    "n_trials",
    "master_seed",
    "threshold",
    "outputs",
}


class ConfigError(ValueError):
    """Scenario config validation failure, message prefixed by field path."""


def _eve_mode_name(raw: str) -> str:
    mode = str(raw).replace("-", "_")
    if mode not in EVE_MODES:
        raise ConfigError(
            f"eve.mode: must be one of {', '.join(EVE_MODES)} "
            f"(hyphens accepted), got {raw!r}"
        )
    return mode


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: state, settings grid, eavesdropper, run sizes."""

    rho: np.ndarray
    state_spec: dict
    alice_settings: tuple[tuple[float, float], ...]
    bob_settings: tuple[tuple[float, float], ...]
    eve: EvePolicy | None
    eve_spec: dict
    n_total: int
    n_trials: int
    master_seed: int
    threshold: float
    outputs: str

    @classmethod
    def from_jsonable(cls, obj) -> "ScenarioConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config: top level must be a JSON object")
        unknown = sorted(set(obj) - _ALLOWED_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        for key in ("state", "alice_settings", "bob_settings", "n_total", "n_trials", "master_seed"):
            if key not in obj:
                raise ConfigError(f"{key}: required key is missing")

        state = obj["state"]
        if not isinstance(state, dict):
            raise ConfigError("state: must be an object")
        if "density" in state:
            try:
                rho = states.from_jsonable(state["density"])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"state.density: {exc}") from None
            state_spec = {"density": states.to_jsonable(rho)}
        elif "p_s" in state or "p_w" in state:
            try:
                p_s = check_probability(state.get("p_s", 0.0), "state.p_s")
                p_w = check_probability(state.get("p_w", 1.0), "state.p_w")
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            rho = states.werner_like(p_s, p_w)
            state_spec = {"p_s": p_s, "p_w": p_w}
        else:
            raise ConfigError("state: needs either {p_s, p_w} or {density}")

        def settings_of(key):
            try:
                lst = as_setting_list(obj[key], key)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
            if len(lst) not in (2, 4, 6):
                raise ConfigError(f"{key}: length must be 2, 4 or 6, got {len(lst)}")
            return lst

        alice_settings = settings_of("alice_settings")
        bob_settings = settings_of("bob_settings")

        eve_raw = obj.get("eve", "off")
        if isinstance(eve_raw, str):
            eve_raw = {"mode": eve_raw}
        if not isinstance(eve_raw, dict):
            raise ConfigError("eve: must be a mode string or an object")
        unknown = sorted(set(eve_raw) - {"mode", "remaps"})
        if unknown:
            raise ConfigError(f"eve: unknown keys {unknown}")
        mode = _eve_mode_name(eve_raw.get("mode", "off"))
        try:
            if mode == "off":
                policy = None
            elif mode == "paper_table":
                policy = EvePolicy.paper_table(alice_settings, bob_settings)
            else:
                policy = EvePolicy.max_correlation(alice_settings, bob_settings)
            remaps = eve_raw.get("remaps", [])
            if remaps:
                if policy is None:
                    policy = EvePolicy("paper_table", len(alice_settings), len(bob_settings))
                policy = policy.with_remaps(remaps)
        except ValueError as exc:
            raise ConfigError(f"eve: {exc}") from None
        eve_spec = {"mode": mode}
        if eve_raw.get("remaps"):
            eve_spec["remaps"] = eve_raw["remaps"]

        def positive_int(key, minimum=1):
            v = obj[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
                raise ConfigError(f"{key}: must be an integer, got {v!r}")
            v = int(v)
            if v < minimum:
                raise ConfigError(f"{key}: must be >= {minimum}, got {v}")
            return v

        n_total = positive_int("n_total")
        n_trials = positive_int("n_trials")
        master_seed = positive_int("master_seed", minimum=0)

        threshold = obj.get("threshold", DEFAULT_THRESHOLD)
        if isinstance(threshold, bool) or not isinstance(threshold, (int, float)) or threshold <= 0:
            raise ConfigError(f"threshold: must be a positive number, got {threshold!r}")

        outputs = obj.get("outputs", ".")
        if not isinstance(outputs, str) or not outputs:
            raise ConfigError(f"outputs: must be a non-empty path string, got {outputs!r}")

        return cls(
            rho=rho,
            state_spec=state_spec,
            alice_settings=alice_settings,
            bob_settings=bob_settings,
            eve=policy,
            eve_spec=eve_spec,
            n_total=n_total,
            n_trials=n_trials,
            master_seed=master_seed,
            threshold=float(threshold),
            outputs=outputs,
        )

    def echo(self) -> dict:
        """JSON form of the validated config, for the report."""
        return {
            "state": self.state_spec,
            "alice_settings": [list(s) for s in self.alice_settings],
            "bob_settings": [list(s) for s in self.bob_settings],
            "eve": self.eve_spec,
            "n_total": self.n_total,
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "threshold": self.threshold,
            "outputs": self.outputs,
        }


def bundled_scenarios() -> list[str]:
    """Names (without extension) of the scenario configs shipped in the package."""
    root = resource_files("loopspam.scenarios")
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_scenario(source: str) -> tuple[ScenarioConfig, str]:
    """Load a scenario from a filesystem path or a bundled scenario name."""
    path = Path(source)
    if path.is_file():
        text, name = path.read_text(), path.stem
    else:
        name = source[: -len(".cfg")] if source.endswith(".cfg") else source
        res = resource_files("loopspam.scenarios").joinpath(name + ".cfg")
        if not res.is_file():
            raise ConfigError(
                f"config: {source!r} is neither a readable file nor a bundled "
                f"scenario (bundled: {', '.join(bundled_scenarios())})"
            )
        text = res.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {source}: not valid JSON ({exc})") from None
    return ScenarioConfig.from_jsonable(obj), name


def load_settings_file(path: str) -> tuple[tuple, tuple, float]:
    """Settings lists (and optional threshold) for analyze/qst.

    Accepts a full scenario config or a bare
    ``{"alice_settings": ..., "bob_settings": ...}`` object.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"settings: cannot read {path!r} ({exc})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"settings: {path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError("settings: top level must be a JSON object")
    for key in ("alice_settings", "bob_settings"):
        if key not in obj:
            raise ConfigError(f"settings: {key} is missing")
    try:
        alice = as_setting_list(obj["alice_settings"], "alice_settings")
        bob = as_setting_list(obj["bob_settings"], "bob_settings")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"settings: {exc}") from None
    threshold = obj.get("threshold", DEFAULT_THRESHOLD)
    if isinstance(threshold, bool) or not isinstance(threshold, (int, float)) or threshold <= 0:
        raise ConfigError(f"settings: threshold must be a positive number, got {threshold!r}")
    return alice, bob, float(threshold)


# --- analysis pipeline (shared by simulate and analyze) ----------------------

def _spans_bloch_space(settings) -> bool:
    vecs = np.array([measurement_operator(s) for s in settings])
    return bool(np.linalg.matrix_rank(vecs, tol=1e-10) >= 3)


def analyze_trial_set(
    trial_set: TrialSet,
    threshold: float = DEFAULT_THRESHOLD,
    condition_cap: float = DEFAULT_CONDITION_CAP,
) -> dict:
    """The full analysis report for a trial set: loop test, CHSH, QST.

    Stages that the settings grid cannot support are reported as skipped
    with a reason instead of failing, so 2x2 CHSH-only scenarios and 4x4
    or 6x6 loop scenarios share one pipeline.
    """
    e_stack = expectation_matrices(trial_set)
    report: dict = {
        "n_alice": trial_set.n_alice,
        "n_bob": trial_set.n_bob,
        "n_trials": trial_set.n_trials,
        "e_matrices": e_stack.tolist(),
    }

    if trial_set.master_seed is not None:
        report["seed_lineage"] = {
            "master_seed": trial_set.master_seed,
            "scheme": "numpy SeedSequence(master_seed, spawn_key=(trial_index,))",
            "trial_state_words": [
                list(trial_seed_words(trial_set.master_seed, t))
                for t in range(trial_set.n_trials)
            ],
        }

    if trial_set.n_alice < MIN_SETTINGS_LOOP or trial_set.n_bob < MIN_SETTINGS_LOOP:
        report["loop"] = {
            "skipped": f"loop test needs >= {MIN_SETTINGS_LOOP} settings per side, "
            f"got {trial_set.n_alice}x{trial_set.n_bob}"
        }
    elif trial_set.n_trials < 2:
        report["loop"] = {"skipped": "loop statistics need >= 2 trials"}
    else:
        tester = LoopConsistencyTest(threshold=threshold, condition_cap=condition_cap)
        tester.fit(e_stack)
        report["loop"] = tester.to_report()

    if trial_set.n_alice < MIN_SETTINGS_CHSH or trial_set.n_bob < MIN_SETTINGS_CHSH:
        report["chsh"] = {
            "skipped": f"CHSH needs >= {MIN_SETTINGS_CHSH} settings per side, "
            f"got {trial_set.n_alice}x{trial_set.n_bob}"
        }
    else:
        per_trial = [chsh_s(e[0, 0], e[0, 1], e[1, 0], e[1, 1]) for e in e_stack]
        report["chsh"] = {
            "per_trial": per_trial,
            "mean": float(np.mean(per_trial)),
            "std": float(np.std(per_trial, ddof=1)) if len(per_trial) > 1 else None,
        }

    deficient = [
        side
        for side, settings in (
            ("alice", trial_set.alice_settings),
            ("bob", trial_set.bob_settings),
        )
        if not _spans_bloch_space(settings)
    ]
    if deficient:
        report["qst"] = {
            "skipped": f"{' and '.join(deficient)} settings do not span 3-space"
        }
    else:
        report["qst"] = StateTomography().fit(trial_set).summary()
    return report


def _loop_stats_from_report(report: dict) -> PartialDeterminantStats | None:
    loop = report.get("loop")
    if not isinstance(loop, dict) or "mean" not in loop:
        return None
    return PartialDeterminantStats(
        mean=np.array(loop["mean"], dtype=float),
        std=np.array(loop["std"], dtype=float),
        ratio=np.array(loop["ratio"], dtype=float),
        n_trials=int(loop["n_trials"]),
        degenerate=bool(loop["degenerate"]),
    )


def _exit_code(report: dict) -> int:
    loop = report.get("loop", {})
    return 2 if loop.get("detected") else 0


def _outdir(args, config_outputs: str | None = None) -> Path:
    if getattr(args, "outdir", None):
        chosen = args.outdir
    elif os.environ.get(OUTDIR_ENV):
        chosen = os.environ[OUTDIR_ENV]
    elif config_outputs:
        chosen = config_outputs
    else:
        chosen = "."
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_report(report: dict, outdir: Path) -> Path:
    path = outdir / "report.json"
    path.write_text(json.dumps(report, indent=2, allow_nan=False) + "\n")
    return path


def _finite_or_string(report: dict) -> dict:
    """JSON has no inf/nan; degenerate ratios are stringified in place."""

    def fix(value):
        if isinstance(value, float) and not np.isfinite(value):
            return repr(value)
        if isinstance(value, list):
            return [fix(v) for v in value]
        if isinstance(value, dict):
            return {k: fix(v) for k, v in value.items()}
        return value

    return fix(report)


def _print_summary(report: dict, out=None) -> None:
    if out is None:
        out = sys.stdout
    loop = report.get("loop", {})
    if "skipped" in loop:
        print(f"loop: skipped ({loop['skipped']})", file=out)
    else:
        print(
            f"loop: worst |mean|/std = {loop['worst_ratio']:.4g} at "
            f"({loop['worst_entry'][0]}, {loop['worst_entry'][1]}), "
            f"threshold {loop['threshold']:g} -> {loop['verdict']}",
            file=out,
        )
    chsh = report.get("chsh", {})
    if "skipped" in chsh:
        print(f"chsh: skipped ({chsh['skipped']})", file=out)
    elif chsh.get("std") is None:
        print(f"chsh: S = {chsh['mean']:.6g} (single trial, no spread)", file=out)
    else:
        print(f"chsh: S = {chsh['mean']:.6g} +/- {chsh['std']:.3g}", file=out)
    qst = report.get("qst", {})
    if "skipped" in qst:
        print(f"qst: skipped ({qst['skipped']})", file=out)
    else:
        fit = qst["werner_fit"]
        print(
            f"qst: purity={qst['purity']:.4g} negativity={qst['negativity']:.4g} "
            f"M={qst['horodecki_m']:.4g} S_max={qst['s_max']:.4g} "
            f"fit(p_s={fit['p_s']:.4g}, p_w={fit['p_w']:.4g}, F={fit['fidelity']:.6g})",
            file=out,
        )


# --- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    config, name = load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = int(args.seed)
    if args.trials is not None:
        overrides["n_trials"] = int(args.trials)
    if args.counts is not None:
        overrides["n_total"] = int(args.counts)
    if args.threshold is not None:
        overrides["threshold"] = float(args.threshold)
    if args.eve is not None:
        eve_echo = dict(config.eve_spec)
        eve_echo.pop("remaps", None)
        eve_echo["mode"] = _eve_mode_name(args.eve)
        mode = eve_echo["mode"]
        if mode == "off":
            policy = None
        elif mode == "paper_table":
            policy = EvePolicy.paper_table(config.alice_settings, config.bob_settings)
        else:
            policy = EvePolicy.max_correlation(config.alice_settings, config.bob_settings)
        overrides["eve"] = policy
        overrides["eve_spec"] = eve_echo
    if overrides:
        fields = {f: getattr(config, f) for f in config.__dataclass_fields__}
        fields.update(overrides)
        config = ScenarioConfig(**fields)

    outdir = _outdir(args, config.outputs)
    print(f"scenario: {name}")
    state_bits = ", ".join(f"{k}={v}" for k, v in config.state_spec.items() if k != "density")
    print(f"state: {state_bits or 'explicit density matrix'}; eve: {config.eve_spec['mode']}")
    print(
        f"trials: {config.n_trials} x {config.n_total} counts per setting pair "
        f"(master seed {config.master_seed})"
    )

    trial_set = run_trials(
        config.rho,
        config.alice_settings,
        config.bob_settings,
        config.eve,
        config.n_total,
        config.n_trials,
        config.master_seed,
    )
    counts_path = outdir / "counts.csv"
    trial_set.write_csv(counts_path)
    print(f"wrote {counts_path}")

    report = analyze_trial_set(trial_set, threshold=config.threshold)
    report = {"scenario": name, "config": config.echo(), **report}
    _print_summary(report)

    stats = _loop_stats_from_report(report)
    if stats is not None:
        stats_path = outdir / "delta_stats.csv"
        write_stats_csv(stats, stats_path)
        print(f"wrote {stats_path}")
    report_path = _write_report(_finite_or_string(report), outdir)
    print(f"wrote {report_path}")
    return _exit_code(report)


def cmd_analyze(args) -> int:
    alice, bob, file_threshold = load_settings_file(args.settings)
    threshold = float(args.threshold) if args.threshold is not None else file_threshold
    trial_set = TrialSet.read_csv(args.counts_csv, alice, bob)
    outdir = _outdir(args)

    report = analyze_trial_set(trial_set, threshold=threshold)
    report = {"source": Path(args.counts_csv).name, **report}
    _print_summary(report)

    stats = _loop_stats_from_report(report)
    if stats is not None:
        stats_path = outdir / "delta_stats.csv"
        write_stats_csv(stats, stats_path)
        print(f"wrote {stats_path}")
    report_path = _write_report(_finite_or_string(report), outdir)
    print(f"wrote {report_path}")
    return _exit_code(report)


def cmd_plotdata(args) -> int:
    path = Path(args.report)
    if not path.is_file():
        raise ConfigError(f"report: {args.report!r} is not a readable file")
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report: {args.report}: not valid JSON ({exc})") from None
    loop = report.get("loop") if isinstance(report, dict) else None
    if not isinstance(loop, dict) or "mean" not in loop:
        raise ConfigError(
            "report: no loop statistics present (was the scenario a 2x2 CHSH-only run?)"
        )
    outdir = _outdir(args)
    for key in ("mean", "std", "ratio"):
        grid = np.array(loop[key], dtype=float)
        out = outdir / f"delta_{key}.csv"
        with open(out, "w", newline="") as fh:
            fh.write("row,col,value\n")
            for i in range(grid.shape[0]):
                for j in range(grid.shape[1]):
                    fh.write(f"{i},{j},{float(grid[i, j])!r}\n")
        print(f"wrote {out}")
    return 0


def cmd_qst(args) -> int:
    alice, bob, _ = load_settings_file(args.settings)
    trial_set = TrialSet.read_csv(args.counts_csv, alice, bob)
    summary = StateTomography().fit(trial_set).summary()
    outdir = _outdir(args)
    path = outdir / "qst_report.json"
    path.write_text(json.dumps(summary, indent=2, allow_nan=False) + "\n")
    _print_summary({"loop": {"skipped": "qst only"}, "chsh": {"skipped": "qst only"}, "qst": summary})
    print(f"wrote {path}")
    return 0


# --- entry point ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors exit 1 (2 is reserved for detection)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="loopspam",
        description="Simulate and analyze loop SPAM-tomography experiments "
        "on polarization-entangled photon pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_outdir(p):
        p.add_argument("--outdir", help=f"output directory (or set ${OUTDIR_ENV})")

    p_sim = sub.add_parser("simulate", help="run a scenario config end to end")
    p_sim.add_argument("scenario", help="path to a config file, or a bundled scenario name")
    p_sim.add_argument("--seed", type=int, help="override master_seed")
    p_sim.add_argument("--trials", type=int, help="override n_trials")
    p_sim.add_argument("--counts", type=int, help="override n_total per setting pair")
    p_sim.add_argument(
        "--eve",
        choices=["off", "paper-table", "max-correlation"],
        help="override the eavesdropper mode",
    )
    p_sim.add_argument("--threshold", type=float, help="override the detection threshold")
    add_outdir(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_an = sub.add_parser("analyze", help="analyze an existing counts CSV")
    p_an.add_argument("counts_csv", help="counts file (trial,i,j,n_ab,n_abp,n_apb,n_apbp)")
    p_an.add_argument("--settings", required=True, help="JSON file with alice_settings/bob_settings")
    p_an.add_argument("--threshold", type=float, help="detection threshold (default 3)")
    add_outdir(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_pd = sub.add_parser("plotdata", help="emit loop statistics grids as flat CSVs")
    p_pd.add_argument("report", help="report.json from simulate/analyze")
    add_outdir(p_pd)
    p_pd.set_defaults(func=cmd_plotdata)

    p_qst = sub.add_parser("qst", help="state tomography from a counts CSV")
    p_qst.add_argument("counts_csv", help="counts file (trial,i,j,n_ab,n_abp,n_apb,n_apbp)")
    p_qst.add_argument("--settings", required=True, help="JSON file with alice_settings/bob_settings")
    add_outdir(p_qst)
    p_qst.set_defaults(func=cmd_qst)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, ConditioningError) as exc:
        print(f"loopspam: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"loopspam: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
