"""Command-line interface.

Subcommands:

* ``simulate``     one (K, power, mode) configuration, N trials
* ``sweep``        full grid over K / power / mode
* ``oracle-check`` pruned-vs-exhaustive objective agreement on quantized
                   oracle ranges
* ``plot-data``    re-emit the flat csv table from stored records.jsonl

Configuration files are flat ``key = value`` text with dotted section keys
(``ofdm.n_subcarriers = 2048``); ``#`` starts an end-of-line comment.  Flags
override file values; the environment variable ``IRSLOC_SEED`` overrides the
file's base seed when ``--seed`` is absent.  Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import assoc, montecarlo
from .assoc import NoiseModel
from .errors import ConfigError, IrslocError
from .montecarlo import RunConfig, SweepGrid, oracle_range_sets, trial_seed
from .recovery import GroupLassoConfig, LassoConfig
from .scene import (
    Placement,
    Point2D,
    SystemConfig,
    dbm_to_mw,
    distances,
    mw_to_dbm,
    sample_scenario,
)

USAGE_EXIT = 2
RUNTIME_EXIT = 1


# ---------------------------------------------------------------------------
# Flat config parsing
# ---------------------------------------------------------------------------


def parse_flat_config(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def _get(values, key, cast, default):
    if key not in values or values[key] == "" or values[key].lower() == "auto":
        return default
    try:
        return cast(values[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {values[key]!r} ({exc})") from exc


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _point(s: str) -> Point2D:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {s!r}")
    return Point2D(float(parts[0]), float(parts[1]))


def _floats(s) -> tuple[float, ...]:
    if isinstance(s, (tuple, list)):
        return tuple(float(v) for v in s)
    return tuple(float(p) for p in s.split(","))


def _ints(s) -> tuple[int, ...]:
    if isinstance(s, int):
        return (s,)
    if isinstance(s, (tuple, list)):
        return tuple(int(v) for v in s)
    return tuple(int(p) for p in s.split(","))


def _modes(s: str) -> tuple[str, ...]:
    modes = tuple(p.strip() for p in s.split(","))
    if s == "both":
        return ("pruned", "exhaustive")
    for m in modes:
        if m not in ("pruned", "exhaustive"):
            raise ValueError(f"unknown mode {m!r}")
    return modes


def build_run_config(values: dict[str, str]) -> RunConfig:
    """Assemble and validate a RunConfig from flat key/value pairs."""
    custom = None
    allocation = _get(values, "ofdm.allocation", str, "interleaved")
    if "ofdm.n1" in values or "ofdm.n2" in values:
        allocation = "custom"
        custom = (
            _ints(values.get("ofdm.n1", "")),
            _ints(values.get("ofdm.n2", "")),
        )
    noise_dbm = _get(values, "radio.noise_psd_dbm_hz", float, -174.0)
    system = SystemConfig(
        n_subcarriers=_get(values, "ofdm.n_subcarriers", int, 2048),
        subcarrier_spacing_hz=_get(values, "ofdm.subcarrier_spacing_hz", float, 195312.5),
        n_symbols=_get(values, "ofdm.n_symbols", int, 7),
        tx_power_mw=dbm_to_mw(_get(values, "radio.tx_power_dbm", float, 39.0)),
        noise_psd_mw_per_hz=dbm_to_mw(noise_dbm),
        n_irs_elements=_get(values, "irs.n_elements", int, 1024),
        n_taps=_get(values, "channel.n_taps", int, 512),
        carrier_freq_hz=_get(values, "radio.carrier_freq_hz", float, 28e9),
        allocation=allocation,
        custom_allocation=custom,
        gain_ref=_get(values, "channel.gain_ref", float, None),
        gain_ref_snr_db=_get(values, "channel.ref_snr_db", float, 25.0),
        gain_ref_power_dbm=_get(values, "channel.ref_power_dbm", float, 39.0),
        gain_ref_distance_m=_get(values, "channel.ref_distance_m", float, 100.0),
        gain_ref_noise_psd_mw_per_hz=dbm_to_mw(
            _get(values, "channel.ref_noise_psd_dbm_hz", float, -174.0)
        ),
    )
    placement = Placement(
        bs1=_get(values, "scene.bs1", _point, Point2D(-100.0, 0.0)),
        bs2=_get(values, "scene.bs2", _point, Point2D(100.0, 0.0)),
        irs=_get(values, "scene.irs", _point, Point2D(0.0, 40.0)),
        radius_m=_get(values, "scene.radius_m", float, 50.0),
    )
    lasso = LassoConfig(
        rho=_get(values, "lasso.rho", float, None),
        delta=_get(values, "lasso.delta", float, None),
        rho_scale=_get(values, "lasso.rho_scale", float, 1.0),
        max_iters=_get(values, "lasso.max_iters", int, 4000),
        tol=_get(values, "lasso.tol", float, 1e-7),
    )
    group = GroupLassoConfig(
        beta=_get(values, "glasso.beta", float, None),
        delta=_get(values, "glasso.delta", float, None),
        beta_scale=_get(values, "glasso.beta_scale", float, 1.0),
        max_iters=_get(values, "glasso.max_iters", int, 4000),
        tol=_get(values, "glasso.tol", float, 1e-7),
    )
    grid = SweepGrid(
        k_values=_get(values, "sweep.k", _ints, (3,)),
        power_dbm=_get(values, "sweep.power_dbm", _floats, (mw_to_dbm(system.tx_power_mw),)),
        modes=_get(values, "sweep.modes", _modes, ("pruned",)),
        n_trials=_get(values, "sweep.n_trials", int, 1000),
    )
    env_seed = os.environ.get("IRSLOC_SEED")
    base_seed = _get(values, "run.base_seed", int, int(env_seed) if env_seed else 0)
    return RunConfig(
        system=system,
        placement=placement,
        lasso=lasso,
        group=group,
        grid=grid,
        tau_m=_get(values, "assoc.tau_m", float, 1.5),
        base_seed=base_seed,
        out_dir=_get(values, "run.out_dir", str, None),
        oracle_ranges=_get(values, "run.oracle_ranges", _bool, False),
        zero_noise=_get(values, "run.zero_noise", _bool, False),
        persist_timing=_get(values, "run.timing", _bool, False),
        dump_channels=_get(values, "run.dump_channels", _bool, False),
        n_jobs=_get(values, "run.jobs", int, 1),
        min_bin_separation=_get(values, "scene.min_bin_separation", int, 1),
    )


def serialize_run_config(run: RunConfig) -> str:
    """Effective configuration in the flat file format, keys sorted."""
    snap = montecarlo.config_snapshot(run)
    # out_dir is deliberately not echoed: the echo describes the experiment,
    # not where this copy of it landed.
    extra = {
        "run.timing": run.persist_timing,
        "run.jobs": run.n_jobs,
        "lasso.rho": run.lasso.rho,
        "lasso.delta": run.lasso.delta,
        "glasso.beta": run.group.beta,
        "glasso.delta": run.group.delta,
    }
    snap.update(extra)
    lines = []
    for key in sorted(snap):
        val = snap[key]
        if val is None:
            val = "auto"
        elif isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, (list, tuple)):
            val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def scenario_to_flat(scen) -> dict[str, str]:
    """Flat key/value view of a scenario (anchors plus targets)."""
    fmt = lambda p: f"{p.x!r},{p.y!r}"
    return {
        "scene.bs1": fmt(scen.bs[0]),
        "scene.bs2": fmt(scen.bs[1]),
        "scene.irs": fmt(scen.irs),
        "scene.targets": ";".join(fmt(p) for p in scen.targets),
    }


def scenario_from_flat(values: dict[str, str]):
    from .scene import Scenario

    targets = tuple(
        _point(part) for part in values.get("scene.targets", "").split(";") if part
    )
    return Scenario(
        bs=(_point(values["scene.bs1"]), _point(values["scene.bs2"])),
        irs=_point(values["scene.irs"]),
        targets=targets,
    )


def _load_config(arg: str | None) -> dict[str, str]:
    if arg is None or arg == "default":
        return {}
    path = Path(arg)
    if not path.exists():
        raise ConfigError(f"config file not found: {arg}")
    return parse_flat_config(path.read_text())


def _apply_overrides(run: RunConfig, args) -> RunConfig:
    grid = run.grid
    if getattr(args, "k", None):
        grid = replace(grid, k_values=_ints(args.k))
    if getattr(args, "power_dbm", None):
        grid = replace(grid, power_dbm=_floats(args.power_dbm))
    if getattr(args, "mode", None):
        grid = replace(grid, modes=_modes(args.mode))
    if getattr(args, "trials", None):
        grid = replace(grid, n_trials=args.trials)
    run = replace(run, grid=grid)
    if args.seed is not None:
        run = replace(run, base_seed=args.seed)
    if getattr(args, "out", None):
        run = replace(run, out_dir=args.out)
    if getattr(args, "timing", False):
        run = replace(run, persist_timing=True)
    if getattr(args, "oracle_ranges", False):
        run = replace(run, oracle_ranges=True)
    if getattr(args, "zero_noise", False):
        run = replace(run, zero_noise=True)
    if getattr(args, "dump_channels", False):
        run = replace(run, dump_channels=True)
    if getattr(args, "jobs", None):
        run = replace(run, n_jobs=args.jobs)
    if getattr(args, "tau", None) is not None:
        run = replace(run, tau_m=args.tau)
    return run


def _echo_config(run: RunConfig):
    if run.out_dir:
        out = Path(run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective_config.txt").write_text(serialize_run_config(run))


def _print_rows(rows):
    for r in rows:
        mean_err = "-" if r.mean_err_m is None else f"{r.mean_err_m:.4f} m"
        solve = "-" if r.mean_solve_s is None else f"{r.mean_solve_s * 1e3:.2f} ms"
        print(
            f"K={r.k_targets} power={r.power_dbm:g} dBm mode={r.mode}: "
            f"error_prob={r.error_prob:.4f} mean_err={mean_err} "
            f"mean_solve={solve} failed_trials={r.n_failed}/{r.n_trials}"
        )


def _cmd_simulate(args) -> int:
    run = _apply_overrides(build_run_config(_load_config(args.config)), args)
    grid = run.grid
    run = replace(
        run,
        grid=SweepGrid(
            k_values=grid.k_values[:1],
            power_dbm=grid.power_dbm[:1],
            modes=grid.modes[:1],
            n_trials=grid.n_trials,
        ),
    )
    _echo_config(run)
    summary = montecarlo.run_experiment(run)
    _print_rows(summary.rows)
    if run.out_dir:
        print(f"outputs written to {run.out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    run = _apply_overrides(build_run_config(_load_config(args.config)), args)
    _echo_config(run)
    summary = montecarlo.run_experiment(run)
    _print_rows(summary.rows)
    if run.out_dir:
        print(f"outputs written to {run.out_dir}")
    return 0


def _cmd_oracle_check(args) -> int:
    run = _apply_overrides(build_run_config(_load_config(args.config)), args)
    k = args.k
    agree = 0
    times = {"pruned": [], "exhaustive": []}
    for idx in range(args.trials):
        seed = trial_seed(run.base_seed, k, idx)
        scen = sample_scenario(
            np.random.SeedSequence(seed).spawn(1)[0],
            k,
            placement=run.placement,
            config=run.system,
            min_bin_separation=run.min_bin_separation,
        )
        truth = distances(scen)
        range_sets = oracle_range_sets(truth, run.system)
        noise = NoiseModel.from_quantization(run.system, k)
        costs = {}
        for mode in ("pruned", "exhaustive"):
            t0 = time.perf_counter()
            res = assoc.solve(
                range_sets, truth.d_ai, scen, noise, tau=run.tau_m, mode=mode
            )
            times[mode].append(time.perf_counter() - t0)
            costs[mode] = res.cost
        if abs(costs["pruned"] - costs["exhaustive"]) <= 1e-6:
            agree += 1
    rate = 100.0 * agree / args.trials
    print(
        f"oracle-check K={k}: agreement {agree}/{args.trials} ({rate:.1f}%), "
        f"mean solve pruned={np.mean(times['pruned']) * 1e3:.2f} ms "
        f"exhaustive={np.mean(times['exhaustive']) * 1e3:.2f} ms"
    )
    return 0


def _cmd_plot_data(args) -> int:
    records = montecarlo.read_records(args.records)
    table = montecarlo.rows_to_table(montecarlo.summarize_records(records))
    if args.out:
        Path(args.out).write_text(table)
        print(f"table written to {args.out}")
    else:
        sys.stdout.write(table)
    return 0


def _add_common(parser: argparse.ArgumentParser, with_grid: bool = True):
    parser.add_argument("--config", default=None, help="config file path or 'default'")
    parser.add_argument("--seed", type=int, default=None, help="base seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--trials", type=int, default=None, help="trials per grid point")
    parser.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
    parser.add_argument("--tau", type=float, default=None, help="association consistency threshold, m")
    if with_grid:
        parser.add_argument("--k", default=None, help="target counts, comma separated")
        parser.add_argument("--power-dbm", dest="power_dbm", default=None, help="transmit powers, dBm")
        parser.add_argument("--mode", default=None, help="pruned, exhaustive, or both")
        parser.add_argument("--timing", action="store_true", help="persist wall-clock in outputs")
        parser.add_argument("--oracle-ranges", action="store_true", dest="oracle_ranges",
                            help="skip recovery, use quantized true ranges")
        parser.add_argument("--zero-noise", action="store_true", dest="zero_noise",
                            help="disable receiver noise")
        parser.add_argument("--dump-channels", action="store_true", dest="dump_channels",
                            help="dump per-trial taps and receptions (debug)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irsloc",
        description="Device-free localization simulator: two base stations plus one passive reflecting surface.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one configuration")
    _add_common(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="run a K/power/mode grid")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_oracle = sub.add_parser(
        "oracle-check", help="audit pruned-vs-exhaustive objective agreement"
    )
    _add_common(p_oracle, with_grid=False)
    p_oracle.add_argument("--k", type=int, default=3, help="number of targets")
    p_oracle.set_defaults(func=_cmd_oracle_check, trials=None)

    p_plot = sub.add_parser("plot-data", help="re-emit the flat table from records")
    p_plot.add_argument("--records", required=True, help="path to records.jsonl")
    p_plot.add_argument("--out", default=None, help="output csv path (default stdout)")
    p_plot.set_defaults(func=_cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "trials", None) is None and args.command == "oracle-check":
        args.trials = 50
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except IrslocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
