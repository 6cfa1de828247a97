"""Command-line front end.

Each subcommand reads one TOML config (plus --seed/--out/--threads
overrides), performs its stage of the pipeline, and writes its artifacts
and a manifest into the output directory.  All randomness flows from the
master seed through named substreams, so identical config and seed give
byte-identical outputs at any thread count.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure.  Failures print a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import RunConfig, load_run_config
from .dsl import parse_model
from .epidemic import EpidemicParams
from .errors import ConfigError, DataError, NumericalError
from .evaluate import (
    daily_contact_pairs,
    exponential_fit,
    permutation_test,
    precision_recall,
)
from .experiments import (
    bootstrap_population_experiment,
    build_world,
    cross_validate,
)
from .infer import RatePriors, gibbs_learn, predict_forward, run_filter, smooth_backtrack
from .io import (
    HEALTH_HEADER,
    VISITS_HEADER,
    build_manifest,
    read_health_csv,
    read_reports_csv,
    read_scans_csv,
    read_visits_csv,
    write_count_prediction_csv,
    write_csv,
    write_health_csv,
    write_json,
    write_jsonl,
    write_manifest,
    write_marginals_csv,
    write_pr_curve_csv,
    write_r2_table_csv,
    write_rate_chain_csv,
    write_reports_csv,
    write_scans_csv,
    write_snapshots_jsonl,
    write_visits_csv,
    write_window_csv,
)
from .mobility import trace_from_visits
from .observe import ObservationLog, synthesize_observations
from .rng import substream
from .world import campus_world, epidemic_params_from_system, simulate_world


def _epidemic_params(config: RunConfig) -> EpidemicParams:
    """Rates from the reaction-model file when given, else the config table."""
    if config.model_file is None:
        return config.epidemic
    try:
        with open(config.model_file, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"{config.model_file}: cannot open: {exc}") from exc
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#") and "time-unit:" in stripped:
            unit = stripped.split("time-unit:", 1)[1].strip()
            if unit != "hours":
                raise ConfigError(
                    f"{config.model_file}: time-unit must be hours, got {unit!r}"
                )
            break
    try:
        system = parse_model(text)
    except DataError as exc:
        raise DataError(f"{config.model_file}: {exc}") from None
    return epidemic_params_from_system(system)


def _build_model(config: RunConfig):
    return campus_world(
        n_persons=config.n_persons,
        n_homes=config.n_homes,
        n_locations=config.n_locations,
        epidemic=_epidemic_params(config),
        volunteer_fraction=config.volunteer_fraction,
        discoverable_fraction=config.discoverable_fraction,
        n_initial_infectious=config.n_initial_infectious,
        tau=config.tau,
        scan_every=config.scan_every,
        noise=config.noise,
        rng=substream(config.seed, "world"),
    )


def _world_init_payload(model, config: RunConfig) -> dict:
    return {
        "n_persons": model.n_persons,
        "n_locations": model.n_locations,
        "tau": model.tau,
        "steps_per_day": model.steps_per_day,
        "n_steps": config.n_steps,
        "scan_every": model.scan_every,
        "epidemic": {
            "c1": model.epidemic.c1,
            "c2": model.epidemic.c2,
            "c3": model.epidemic.c3,
        },
        "volunteers": list(model.panel.volunteers),
        "discoverable": list(model.panel.discoverable),
        "init_healths": model.init_healths.tolist(),
        "init_locations": model.init_locations.tolist(),
    }


def cmd_simulate(config: RunConfig) -> tuple[list[str], int]:
    model = _build_model(config)
    n_steps = config.n_steps
    out = config.out_dir
    truth = simulate_world(model, n_steps, substream(config.seed, "truth"))
    if n_steps == 0:
        write_csv(os.path.join(out, "health.csv"), HEALTH_HEADER, [])
        write_csv(os.path.join(out, "visits.csv"), VISITS_HEADER, [])
        write_snapshots_jsonl(os.path.join(out, "snapshots.jsonl"), [])
    else:
        write_health_csv(os.path.join(out, "health.csv"), truth.healths_history)
        trace = truth.mobility_trace()
        write_visits_csv(os.path.join(out, "visits.csv"), trace.visits())
        write_snapshots_jsonl(
            os.path.join(out, "snapshots.jsonl"),
            ((t, trace.groups(t)) for t in range(n_steps + 1)),
        )
    write_json(os.path.join(out, "world_init.json"), _world_init_payload(model, config))
    return ["health.csv", "visits.csv", "snapshots.jsonl", "world_init.json"], n_steps


def _read_truth(config: RunConfig, model) -> tuple[np.ndarray, np.ndarray]:
    truth_dir = config.truth_dir or config.out_dir
    healths = read_health_csv(
        os.path.join(truth_dir, "health.csv"), n_steps=config.n_steps
    )
    if healths.shape[1] != model.n_persons:
        raise DataError(
            f"health trajectory covers {healths.shape[1]} persons, "
            f"config says {model.n_persons}"
        )
    visits = read_visits_csv(os.path.join(truth_dir, "visits.csv"))
    trace = trace_from_visits(visits, 0.0, config.tau, config.n_steps)
    if trace.n_persons != model.n_persons:
        raise DataError(
            f"visit log covers {trace.n_persons} persons, "
            f"config says {model.n_persons}"
        )
    return healths, trace.history


def cmd_synth_obs(config: RunConfig) -> tuple[list[str], int]:
    model = _build_model(config)
    out = config.out_dir
    if config.n_steps == 0:
        scans, reports = [], []
    else:
        healths, locations = _read_truth(config, model)
        obs = synthesize_observations(
            healths,
            locations,
            model.panel,
            model.noise,
            model.steps_per_day,
            substream(config.seed, "obs"),
            scan_every=model.scan_every,
        )
        scans, reports = obs.scans, obs.reports
    write_scans_csv(os.path.join(out, "scans.csv"), scans)
    write_reports_csv(os.path.join(out, "reports.csv"), reports)
    return ["scans.csv", "reports.csv"], config.n_steps


def _read_observations(config: RunConfig, model, n_steps: int) -> ObservationLog:
    obs_dir = config.obs_dir or config.out_dir
    scans = read_scans_csv(os.path.join(obs_dir, "scans.csv"))
    reports = read_reports_csv(os.path.join(obs_dir, "reports.csv"))
    try:
        return ObservationLog(
            n_steps=n_steps,
            steps_per_day=model.steps_per_day,
            scans=scans,
            reports=reports,
        )
    except ValueError as exc:
        raise DataError(f"observation log inconsistent with config: {exc}") from None


def _require_finite_evidence(log_marginal_likelihood: float) -> None:
    if not np.isfinite(log_marginal_likelihood):
        raise NumericalError(
            "particle filter degenerated: log marginal likelihood is -inf; "
            "increase particles or soften the noise model"
        )


def cmd_filter(config: RunConfig) -> tuple[list[str], int]:
    model = _build_model(config)
    obs = _read_observations(config, model, config.n_steps)
    result = run_filter(
        model, obs, config.n_particles, substream(config.seed, "filter")
    )
    _require_finite_evidence(result.log_marginal_likelihood)
    out = config.out_dir
    write_marginals_csv(os.path.join(out, "marginals.csv"), result.marginals)
    write_json(
        os.path.join(out, "filter_stats.json"),
        {
            "log_marginal_likelihood": result.log_marginal_likelihood,
            "n_degenerate_steps": result.n_degenerate_steps,
            "ess": result.ess.tolist(),
        },
    )
    return ["marginals.csv", "filter_stats.json"], config.n_steps


def cmd_smooth(config: RunConfig) -> tuple[list[str], int]:
    model = _build_model(config)
    obs = _read_observations(config, model, config.n_steps)
    result = run_filter(
        model,
        obs,
        config.n_particles,
        substream(config.seed, "filter"),
        keep_history=True,
    )
    _require_finite_evidence(result.log_marginal_likelihood)
    smoothed = smooth_backtrack(result)
    out = config.out_dir
    write_marginals_csv(os.path.join(out, "smoothed.csv"), smoothed.marginals())
    write_json(
        os.path.join(out, "filter_stats.json"),
        {
            "log_marginal_likelihood": result.log_marginal_likelihood,
            "n_degenerate_steps": result.n_degenerate_steps,
            "ess": result.ess.tolist(),
        },
    )
    return ["smoothed.csv", "filter_stats.json"], config.n_steps


def cmd_learn(config: RunConfig) -> tuple[list[str], int]:
    model = _build_model(config)
    obs = _read_observations(config, model, config.n_steps)
    result = gibbs_learn(
        model,
        obs,
        RatePriors(),
        config.sweeps,
        config.n_particles,
        substream(config.seed, "learn"),
        learn_mobility=config.learn_mobility,
    )
    out = config.out_dir
    write_rate_chain_csv(os.path.join(out, "rates.csv"), result.rate_samples)
    write_json(
        os.path.join(out, "learn_stats.json"),
        {
            "n_degenerate_steps": result.n_degenerate_steps,
            "log_marginal_likelihoods": result.log_marginal_likelihoods.tolist(),
        },
    )
    return ["rates.csv", "learn_stats.json"], config.n_steps * config.sweeps


def cmd_predict(config: RunConfig) -> tuple[list[str], int]:
    model = _build_model(config)
    spd = model.steps_per_day
    t0 = config.prediction_day * spd
    if t0 > config.n_steps:
        raise ConfigError(
            f"prediction_day {config.prediction_day} is past the "
            f"{config.days}-day observation span"
        )
    horizon_steps = config.horizon_days * spd
    full = _read_observations(config, model, config.n_steps)
    obs = ObservationLog(
        n_steps=t0,
        steps_per_day=spd,
        scans=[s for s in full.scans if s.t <= t0],
        reports=[r for r in full.reports if r.day * spd <= t0],
    )
    result = run_filter(
        model, obs, config.n_particles, substream(config.seed, "filter")
    )
    _require_finite_evidence(result.log_marginal_likelihood)
    pred = predict_forward(
        result.ensemble,
        model,
        horizon_steps,
        substream(config.seed, "predict"),
        n_runs=config.prediction_runs,
    )
    out = config.out_dir
    write_window_csv(os.path.join(out, "window.csv"), t0 + horizon_steps, pred.p_infected)
    write_count_prediction_csv(os.path.join(out, "counts.csv"), pred)
    return ["window.csv", "counts.csv"], t0 + horizon_steps


def _completed_episode_hours(healths_history: np.ndarray, tau: float) -> list[float]:
    """Durations of infectious episodes that both start and end inside
    the simulated span; episodes already open at t=0 are dropped."""
    out: list[float] = []
    for p in range(healths_history.shape[1]):
        col = healths_history[:, p].astype(np.int16)
        flips = np.diff(col)
        starts = np.flatnonzero(flips == 1) + 1
        ends = np.flatnonzero(flips == -1) + 1
        if col[0] == 1 and len(ends):
            ends = ends[1:]
        k = min(len(starts), len(ends))
        out.extend(((ends[:k] - starts[:k]) * tau).tolist())
    return out


def cmd_evaluate(config: RunConfig) -> tuple[list[str], int]:
    protocol = config.experiment_config()
    out = config.out_dir
    outputs: list[str] = []
    step_count = 0

    model = truth = obs = None
    if config.run_cross_validate or config.run_contact_test:
        model = build_world(protocol, substream(config.seed, "world"))
        truth = simulate_world(model, config.n_steps, substream(config.seed, "truth"))
        obs = synthesize_observations(
            truth.healths_history,
            truth.locations_history,
            model.panel,
            model.noise,
            model.steps_per_day,
            substream(config.seed, "obs"),
            scan_every=model.scan_every,
        )
        step_count += config.n_steps

    if config.run_cross_validate:
        cv = cross_validate(
            model, truth, obs, protocol, config.seed, n_jobs=config.threads
        )
        write_pr_curve_csv(
            os.path.join(out, "pr_scans_kept.csv"),
            precision_recall(cv.scores_scans_kept, cv.labels),
        )
        write_pr_curve_csv(
            os.path.join(out, "pr_scans_held.csv"),
            precision_recall(cv.scores_scans_held, cv.labels),
        )
        write_json(
            os.path.join(out, "cv_summary.json"),
            {
                "ap_scans_kept": cv.ap_scans_kept,
                "ap_scans_held": cv.ap_scans_held,
                "ap_in_sample": cv.ap_in_sample,
                "prevalence": cv.prevalence,
                "n_volunteers": len(cv.volunteers),
                "n_positive": int(cv.labels.sum()),
            },
        )
        outputs += ["pr_scans_kept.csv", "pr_scans_held.csv", "cv_summary.json"]

    if config.run_bootstrap:
        boot = bootstrap_population_experiment(
            protocol,
            volunteer_fractions=config.volunteer_fractions,
            n_replicates=config.n_replicates,
            seed=config.seed,
            n_jobs=config.threads,
        )
        write_r2_table_csv(os.path.join(out, "r2.csv"), boot.rows, protocol.n_persons)
        outputs.append("r2.csv")
        step_count += config.n_steps * config.n_replicates

    if config.run_contact_test:
        pairs = daily_contact_pairs(truth.locations_history, model.steps_per_day)
        labels = np.zeros((len(pairs), model.n_persons), dtype=bool)
        for report in obs.reports:
            # report for day d describes contact day index d - 1
            d = report.day - 1
            if 0 <= d < len(pairs) and report.self_sick:
                labels[d, report.person] = True
        records = []
        if labels.any():
            perm = permutation_test(
                pairs, labels, config.n_permutations, substream(config.seed, "permtest")
            )
            records.append(
                {
                    "name": "same_day_symptomatic_contact_pairs",
                    "statistic": perm.statistic,
                    "p_value": perm.p_value,
                    "n_permutations": perm.n_permutations,
                    "config_hash": config.config_hash(),
                }
            )
        durations = _completed_episode_hours(truth.healths_history, model.tau)
        if len(durations) >= 5:
            fit = exponential_fit(durations)
            records.append(
                {
                    "name": "infectious_duration_exponential",
                    "statistic": fit.ks_statistic,
                    "p_value": fit.ks_p_value,
                    "mean_hours": fit.mean,
                    "config_hash": config.config_hash(),
                }
            )
        write_jsonl(os.path.join(out, "tests.jsonl"), records)
        outputs.append("tests.jsonl")

    if not outputs:
        raise ConfigError(
            "evaluate has nothing to do: enable cross_validate, bootstrap, "
            "or contact_test in [evaluate]"
        )
    return outputs, step_count


_COMMANDS = {
    "simulate": cmd_simulate,
    "synth-obs": cmd_synth_obs,
    "filter": cmd_filter,
    "smooth": cmd_smooth,
    "learn": cmd_learn,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}

_HELP = {
    "simulate": "generate a ground-truth world: visits, health, snapshots",
    "synth-obs": "emit the scan/report observation log for a simulated world",
    "filter": "run the particle filter; write posterior marginals",
    "smooth": "run the filter plus backward smoothing",
    "learn": "sample rate constants by Gibbs sweeps; write the chain",
    "predict": "filter to a day, then project the prediction window forward",
    "evaluate": "run the cross-validation / population-prediction protocols",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epitrack",
        description="Partial-observation epidemic tracking on synthetic worlds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _HELP.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument(
            "--threads",
            type=int,
            default=0,
            help="worker pool size (default: machine parallelism); "
            "results are identical at any setting",
        )
    return parser


def _fail(code: int, exc: Exception) -> int:
    line = json.dumps(
        {
            "error": type(exc).__name__,
            "exit_code": code,
            "message": " ".join(str(exc).split()),
        },
        sort_keys=True,
    )
    print(line, file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
        config = load_run_config(args.config, args.seed, args.out, threads)
        os.makedirs(config.out_dir, exist_ok=True)
        outputs, step_count = _COMMANDS[args.command](config)
        manifest = build_manifest(
            command=args.command,
            config_hash=config.config_hash(),
            seed=config.seed,
            threads=config.threads,
            step_count=step_count,
            wall_seconds=time.perf_counter() - start,
            out_dir=config.out_dir,
            filenames=outputs,
        )
        write_manifest(os.path.join(config.out_dir, "manifest.json"), manifest)
        return 0
    except ConfigError as exc:
        return _fail(2, exc)
    except DataError as exc:
        return _fail(3, exc)
    except NumericalError as exc:
        return _fail(4, exc)


if __name__ == "__main__":
    raise SystemExit(main())
