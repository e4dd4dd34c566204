"""End-to-end trial orchestration and error-probability statistics.

A trial samples a scene, synthesizes the channel, runs both recovery phases,
associates and trilaterates, then matches estimates to the true targets by
minimum-cost bipartite matching.  A target counts as an error when its
matched estimate lies more than 1 m from the truth; trials that fail anywhere
in the pipeline count every target as an error.

Trial seeds derive from ``(base_seed, k, trial_index)`` only, so the same
scenes and noise are replayed across transmit powers and association modes,
which makes power sweeps and mode comparisons paired.

Wall-clock is measured around the Phase-II solve alone and is kept in memory;
persisted files omit timing unless explicitly requested, so re-running an
experiment with the same base seed reproduces every output file byte for
byte.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import assoc
from .assoc import Association, NoiseModel
from .channel import IrsProfile, simulate_rx, synth_taps
from .errors import PipelineError
from .recovery import GroupLassoConfig, LassoConfig, RangeSets, recover_ranges
from .scene import (
    DEFAULT_PLACEMENT,
    PATH_BS_IRS_TARGET_BS,
    PATH_BS_TARGET_BS,
    Placement,
    RangeTruth,
    Scenario,
    SystemConfig,
    dbm_to_mw,
    delay_bin,
    distances,
    mw_to_dbm,
    sample_scenario,
)

ERROR_RADIUS_M = 1.0

TABLE_COLUMNS = (
    "K",
    "power_dbm",
    "mode",
    "n_trials",
    "error_prob",
    "mean_err_m",
    "p95_err_m",
    "mean_solve_s",
)


@dataclass
class TrialConfig:
    """Everything one trial needs besides its seed."""

    system: SystemConfig = field(default_factory=SystemConfig)
    placement: Placement = DEFAULT_PLACEMENT
    k_targets: int = 3
    mode: str = "pruned"
    tau_m: float = 1.5
    lasso: LassoConfig = field(default_factory=LassoConfig)
    group: GroupLassoConfig = field(default_factory=GroupLassoConfig)
    oracle_ranges: bool = False
    min_bin_separation: int = 1
    dump_prefix: str | None = None


@dataclass
class TrialResult:
    """Outcome of one trial; ``failure`` is set when the pipeline aborted."""

    seed: tuple[int, ...]
    k_targets: int
    mode: str
    scenario: Scenario | None = None
    positions: np.ndarray | None = None
    association: Association | None = None
    errors_m: np.ndarray | None = None
    error_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    solve_time_s: float | None = None
    n_candidates: int | None = None
    cost: float | None = None
    failure: str | None = None


@dataclass
class SweepGrid:
    k_values: tuple[int, ...] = (3,)
    power_dbm: tuple[float, ...] = (39.0,)
    modes: tuple[str, ...] = ("pruned",)
    n_trials: int = 1000


@dataclass
class RunConfig:
    """A full experiment: system + scene + solver settings and the sweep grid."""

    system: SystemConfig = field(default_factory=SystemConfig)
    placement: Placement = DEFAULT_PLACEMENT
    lasso: LassoConfig = field(default_factory=LassoConfig)
    group: GroupLassoConfig = field(default_factory=GroupLassoConfig)
    grid: SweepGrid = field(default_factory=SweepGrid)
    tau_m: float = 1.5
    base_seed: int = 0
    out_dir: str | None = None
    oracle_ranges: bool = False
    zero_noise: bool = False
    persist_timing: bool = False
    dump_channels: bool = False
    n_jobs: int = 1
    min_bin_separation: int = 1


@dataclass
class GridSummary:
    """Aggregates of one (K, power, mode) grid point."""

    k_targets: int
    power_dbm: float
    mode: str
    n_trials: int
    error_prob: float
    mean_err_m: float | None
    p95_err_m: float | None
    mean_solve_s: float | None
    n_failed: int


@dataclass
class ExperimentSummary:
    config_snapshot: dict
    base_seed: int
    rows: list[GridSummary]


def trial_seed(base_seed: int, k_targets: int, trial_index: int) -> tuple[int, int, int]:
    """Entropy tuple for one trial; independent of power and mode."""
    return (int(base_seed), int(k_targets), int(trial_index))


def oracle_range_sets(truth: RangeTruth, config: SystemConfig) -> RangeSets:
    """Quantized range sets straight from the true geometry (recovery skipped)."""
    w_rt = config.round_trip_bin_m
    w_ow = config.one_way_bin_m
    d_at = []
    d_aita = []
    for m in range(2):
        at_bins = np.unique(
            [delay_bin(d, PATH_BS_TARGET_BS, config) for d in truth.d_at[m]]
        )
        aita_bins = np.unique(
            [delay_bin(d, PATH_BS_IRS_TARGET_BS, config) for d in truth.d_aita[m]]
        )
        d_at.append((at_bins - 1) * w_rt + 0.5 * w_rt)
        d_aita.append((aita_bins - 1) * w_ow + 0.5 * w_ow)
    return RangeSets(d_at=(d_at[0], d_at[1]), d_aita=(d_aita[0], d_aita[1]))


def position_errors(estimated: np.ndarray, true_positions: np.ndarray) -> np.ndarray:
    """Per-true-target distance to its minimum-cost matched estimate.

    Estimate labels are arbitrary, so the pairing is the optimal bipartite
    matching on Euclidean distance; the returned vector is indexed by true
    target.
    """
    dist = np.linalg.norm(
        np.asarray(estimated)[:, None, :] - np.asarray(true_positions)[None, :, :], axis=2
    )
    rows, cols = linear_sum_assignment(dist)
    errors = np.empty(len(true_positions))
    errors[cols] = dist[rows, cols]
    return errors


def _dump_trial(prefix: str, taps, rx):
    base = Path(prefix)
    base.parent.mkdir(parents=True, exist_ok=True)
    np.save(f"{prefix}_ata.npy", taps.ata)
    np.save(f"{prefix}_aia_gains.npy", taps.aia_gains)
    np.save(f"{prefix}_aita_gains.npy", taps.aita_gains)
    for m in range(2):
        np.save(f"{prefix}_y_bs{m + 1}.npy", rx.y[m])


def run_trial(seed, config: TrialConfig) -> TrialResult:
    """One full pipeline pass; pipeline failures are recorded, not raised."""
    seed = tuple(int(s) for s in np.atleast_1d(seed))
    ss = np.random.SeedSequence(seed)
    s_scene, s_taps, s_irs, s_rx = ss.spawn(4)
    result = TrialResult(
        seed=seed,
        k_targets=config.k_targets,
        mode=config.mode,
        error_flags=np.ones(config.k_targets, dtype=bool),
    )
    try:
        scen = sample_scenario(
            s_scene,
            config.k_targets,
            placement=config.placement,
            config=config.system,
            min_bin_separation=config.min_bin_separation,
        )
        result.scenario = scen
        truth = distances(scen)

        if config.oracle_ranges:
            range_sets = oracle_range_sets(truth, config.system)
        else:
            taps = synth_taps(scen, config.system, s_taps)
            profile = IrsProfile.random(
                config.system.n_irs_elements, config.system.n_symbols, s_irs
            )
            rx = simulate_rx(taps, profile, config.system, s_rx)
            if config.dump_prefix:
                _dump_trial(config.dump_prefix, taps, rx)
            _, range_sets = recover_ranges(
                rx, truth.d_ai, config.system, config.lasso, config.group
            )

        n_detected = range_sets.common_size()
        if n_detected != config.k_targets:
            raise PipelineError(
                f"detected {n_detected} ranges per set, expected {config.k_targets}"
            )

        noise = NoiseModel.from_quantization(config.system, config.k_targets)
        t0 = time.perf_counter()
        loc = assoc.solve(
            range_sets,
            truth.d_ai,
            scen,
            noise,
            tau=config.tau_m,
            mode=config.mode,
        )
        result.solve_time_s = time.perf_counter() - t0

        true_pos = np.array([[p.x, p.y] for p in scen.targets])
        errors = position_errors(loc.positions, true_pos)

        result.positions = loc.positions
        result.association = loc.association
        result.errors_m = errors
        result.error_flags = errors > ERROR_RADIUS_M
        result.n_candidates = loc.n_candidates
        result.cost = loc.cost
    except PipelineError as exc:
        result.failure = f"{type(exc).__name__}: {exc}"
    return result


def error_probability(results: list[TrialResult]) -> float:
    """Fraction of targets flagged as localization errors, over all trials."""
    if not results:
        raise ValueError("error_probability needs at least one trial")
    flagged = sum(int(np.sum(r.error_flags)) for r in results)
    total = sum(r.k_targets for r in results)
    return flagged / total


# ---------------------------------------------------------------------------
# Experiment sweep, aggregation, and persistence
# ---------------------------------------------------------------------------


def _point_trial_config(run: RunConfig, k: int, power_dbm: float, mode: str) -> TrialConfig:
    system = replace(run.system, tx_power_mw=dbm_to_mw(power_dbm))
    if run.zero_noise:
        system = replace(system, noise_psd_mw_per_hz=0.0)
    return TrialConfig(
        system=system,
        placement=run.placement,
        k_targets=k,
        mode=mode,
        tau_m=run.tau_m,
        lasso=run.lasso,
        group=run.group,
        oracle_ranges=run.oracle_ranges,
        min_bin_separation=run.min_bin_separation,
    )


def _run_point(args):
    seed, cfg = args
    return run_trial(seed, cfg)


def run_point_trials(run: RunConfig, k: int, power_dbm: float, mode: str) -> list[TrialResult]:
    """All trials of one grid point, in deterministic trial order."""
    cfg = _point_trial_config(run, k, power_dbm, mode)
    jobs = []
    for idx in range(run.grid.n_trials):
        c = cfg
        if run.dump_channels and run.out_dir:
            prefix = str(
                Path(run.out_dir)
                / "channels"
                / f"k{k}_p{power_dbm:g}_{mode}_t{idx:05d}"
            )
            c = replace(cfg, dump_prefix=prefix)
        jobs.append((trial_seed(run.base_seed, k, idx), c))
    if run.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=run.n_jobs) as pool:
            return list(pool.map(_run_point, jobs, chunksize=8))
    return [_run_point(j) for j in jobs]


def flatten_record(
    trial: TrialResult, k: int, power_dbm: float, mode: str, include_timing: bool = True
) -> dict:
    """One JSON-ready dict per trial (line format of records.jsonl)."""
    scen = trial.scenario
    return {
        "K": k,
        "power_dbm": power_dbm,
        "mode": mode,
        "seed": list(trial.seed),
        "scenario": None
        if scen is None
        else {
            "bs": [[p.x, p.y] for p in scen.bs],
            "irs": [scen.irs.x, scen.irs.y],
            "targets": [[p.x, p.y] for p in scen.targets],
        },
        "positions": None if trial.positions is None else trial.positions.tolist(),
        "association": None
        if trial.association is None
        else {
            "lam": trial.association.lam.tolist(),
            "mu": trial.association.mu.tolist(),
        },
        "errors_m": None if trial.errors_m is None else trial.errors_m.tolist(),
        "error_flags": [bool(f) for f in trial.error_flags],
        "cost": trial.cost,
        "n_candidates": trial.n_candidates,
        "solve_time_s": trial.solve_time_s if include_timing else None,
        "failure": trial.failure,
    }


def summarize_records(records: list[dict]) -> list[GridSummary]:
    """Grid-point aggregates recomputed purely from flattened records."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["K"], rec["power_dbm"], rec["mode"]), []).append(rec)
    rows = []
    for (k, p, mode), recs in groups.items():
        flags = [f for r in recs for f in r["error_flags"]]
        errors = [e for r in recs if r["errors_m"] for e in r["errors_m"]]
        times = [r["solve_time_s"] for r in recs if r["solve_time_s"] is not None]
        rows.append(
            GridSummary(
                k_targets=k,
                power_dbm=p,
                mode=mode,
                n_trials=len(recs),
                error_prob=sum(flags) / len(flags),
                mean_err_m=float(np.mean(errors)) if errors else None,
                p95_err_m=float(np.percentile(errors, 95)) if errors else None,
                mean_solve_s=float(np.mean(times)) if times else None,
                n_failed=sum(1 for r in recs if r["failure"] is not None),
            )
        )
    return rows


def config_snapshot(run: RunConfig) -> dict:
    """Flat, JSON-ready view of the effective experiment configuration."""
    sysc = run.system
    return {
        "ofdm.n_subcarriers": sysc.n_subcarriers,
        "ofdm.subcarrier_spacing_hz": sysc.subcarrier_spacing_hz,
        "ofdm.n_symbols": sysc.n_symbols,
        "ofdm.allocation": sysc.allocation,
        "radio.tx_power_dbm": mw_to_dbm(sysc.tx_power_mw),
        "radio.noise_psd_dbm_hz": mw_to_dbm(sysc.noise_psd_mw_per_hz)
        if sysc.noise_psd_mw_per_hz > 0
        else None,
        "radio.carrier_freq_hz": sysc.carrier_freq_hz,
        "irs.n_elements": sysc.n_irs_elements,
        "channel.n_taps": sysc.n_taps,
        "channel.gain_ref": sysc.reference_gain,
        "scene.bs1": [run.placement.bs1.x, run.placement.bs1.y],
        "scene.bs2": [run.placement.bs2.x, run.placement.bs2.y],
        "scene.irs": [run.placement.irs.x, run.placement.irs.y],
        "scene.radius_m": run.placement.radius_m,
        "scene.min_bin_separation": run.min_bin_separation,
        "assoc.tau_m": run.tau_m,
        "sweep.k": list(run.grid.k_values),
        "sweep.power_dbm": list(run.grid.power_dbm),
        "sweep.modes": list(run.grid.modes),
        "sweep.n_trials": run.grid.n_trials,
        "run.base_seed": run.base_seed,
        "run.oracle_ranges": run.oracle_ranges,
        "run.zero_noise": run.zero_noise,
    }


def _strip_timing(rec: dict) -> dict:
    out = dict(rec)
    out["solve_time_s"] = None
    return out


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_table(rows: list[GridSummary]) -> str:
    lines = [",".join(TABLE_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                _fmt_cell(v)
                for v in (
                    r.k_targets,
                    r.power_dbm,
                    r.mode,
                    r.n_trials,
                    r.error_prob,
                    r.mean_err_m,
                    r.p95_err_m,
                    r.mean_solve_s,
                )
            )
        )
    return "\n".join(lines) + "\n"


def write_outputs(run: RunConfig, records: list[dict], out_dir: str | Path) -> None:
    """Write records.jsonl, summary.json, and table.csv deterministically."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    disk_records = records if run.persist_timing else [_strip_timing(r) for r in records]
    with open(out / "records.jsonl", "w") as fh:
        for rec in disk_records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    rows = summarize_records(disk_records)
    summary = {
        "config": config_snapshot(run),
        "base_seed": run.base_seed,
        "rows": [vars(r) for r in rows],
    }
    with open(out / "summary.json", "w") as fh:
        fh.write(json.dumps(summary, sort_keys=True, separators=(",", ":"), indent=1))
        fh.write("\n")
    with open(out / "table.csv", "w") as fh:
        fh.write(rows_to_table(rows))


def read_records(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_experiment(run: RunConfig) -> ExperimentSummary:
    """Execute the sweep grid, aggregate, and optionally persist record files.

    Fully reproducible from ``(grid, base_seed)``: trial seeds are derived,
    aggregation order is fixed, and persisted files carry no wall-clock
    unless ``persist_timing`` is set.
    """
    records: list[dict] = []
    for k in run.grid.k_values:
        for power_dbm in run.grid.power_dbm:
            for mode in run.grid.modes:
                trials = run_point_trials(run, k, power_dbm, mode)
                records.extend(
                    flatten_record(t, k, power_dbm, mode, include_timing=True)
                    for t in trials
                )
    rows = summarize_records(records)
    if run.out_dir:
        write_outputs(run, records, run.out_dir)
    return ExperimentSummary(
        config_snapshot=config_snapshot(run), base_seed=run.base_seed, rows=rows
    )
