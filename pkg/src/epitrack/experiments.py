"""Bootstrap population-prediction and cross-validation protocols.

Both protocols share one pipeline shape: simulate a ground-truth world,
synthesize partial observations, filter, and predict forward.  The
bootstrap experiment scores population-count predictions (R squared
against daily truth) at several volunteer-panel sizes; cross-validation
scores per-person infection predictions (average precision) for
held-out volunteers under two redaction modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .epidemic import EpidemicParams
from .errors import ConfigError
from .evaluate import precision_recall, r_squared, scaling_baseline
from .infer import filter_step, initial_ensemble, predict_forward, run_filter
from .observe import (
    EmissionNoise,
    ObservationLog,
    VolunteerPanel,
    synthesize_observations,
)
from .rng import substream
from .world import WorldModel, WorldTruth, campus_world, simulate_world


@dataclass(frozen=True)
class ExperimentConfig:
    """Protocol constants for the synthetic-world experiments."""

    n_persons: int = 300
    n_locations: int = 15
    n_homes: int = 8
    days: int = 90
    volunteer_fraction: float = 0.10
    discoverable_fraction: float = 0.40
    epidemic: EpidemicParams = field(
        default_factory=lambda: EpidemicParams(c1=6.5e-4, c2=1.0 / 72.0, c3=2e-5)
    )
    noise: EmissionNoise = field(default_factory=EmissionNoise)
    tau: float = 0.25
    n_initial_infectious: int = 8
    scan_every: int = 1
    n_particles: int = 200
    horizon_days: int = 14
    folds: int = 10
    prediction_runs: int = 100
    prediction_day: int = 40  # cross-validation filters up to this day
    systematic: bool = False  # systematic instead of multinomial selection

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")
        for name in ("volunteer_fraction", "discoverable_fraction"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.days < self.horizon_days + 1:
            raise ConfigError("need at least one full prediction window")
        if not (0 < self.prediction_day <= self.days - self.horizon_days):
            raise ConfigError("prediction_day leaves no room for the horizon")
        for name in ("n_persons", "n_particles", "prediction_runs", "horizon_days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def steps_per_day(self) -> int:
        return int(round(24.0 / self.tau))


def build_world(config: ExperimentConfig, rng: np.random.Generator) -> WorldModel:
    return campus_world(
        n_persons=config.n_persons,
        n_homes=config.n_homes,
        n_locations=config.n_locations,
        epidemic=config.epidemic,
        volunteer_fraction=config.volunteer_fraction,
        discoverable_fraction=config.discoverable_fraction,
        n_initial_infectious=config.n_initial_infectious,
        tau=config.tau,
        noise=config.noise,
        scan_every=config.scan_every,
        rng=rng,
    )


def daily_infectious_counts(
    healths_history: np.ndarray, steps_per_day: int
) -> np.ndarray:
    """End-of-day infectious counts; index 0 is the initial state."""
    n_steps = healths_history.shape[0] - 1
    n_days = n_steps // steps_per_day
    counts = np.empty(n_days + 1, dtype=np.int64)
    counts[0] = int((healths_history[0] == 1).sum())
    for d in range(1, n_days + 1):
        counts[d] = int((healths_history[d * steps_per_day] == 1).sum())
    return counts


def filter_with_daily_predictions(
    model: WorldModel,
    obs: ObservationLog,
    config: ExperimentConfig,
    seed: int,
    *stream_path: int | str,
) -> np.ndarray:
    """Filter through the log, predicting the window-end count daily.

    Returns predictions indexed by target day: prediction[d] is the
    posterior-mean infectious count at the end of day d, computed from
    observations up to day d - horizon.  Entries before the first
    reachable target day are NaN.
    """
    spd = config.steps_per_day
    horizon_steps = config.horizon_days * spd
    rng = substream(seed, *stream_path, "filter")
    ensemble = initial_ensemble(model, config.n_particles)
    n_days = obs.n_steps // spd
    predictions = np.full(n_days + 1, np.nan)

    def predict_from(day: int) -> None:
        out = predict_forward(
            ensemble,
            model,
            horizon_steps,
            substream(seed, *stream_path, "predict", day),
            n_runs=config.prediction_runs,
        )
        predictions[day + config.horizon_days] = out.mean_infectious[-1]

    if config.horizon_days <= n_days:
        predict_from(0)
    for t in range(1, obs.n_steps + 1):
        filter_step(ensemble, model, obs, rng, systematic=config.systematic)
        if t % spd == 0:
            day = t // spd
            if day + config.horizon_days <= n_days:
                predict_from(day)
    return predictions


@dataclass(frozen=True)
class BootstrapRow:
    method: str
    volunteer_fraction: float
    replicate: int
    r2: float


@dataclass
class BootstrapResult:
    rows: list[BootstrapRow]
    volunteer_fractions: tuple[float, ...]
    n_replicates: int

    def mean_r2(self, method: str, fraction: float | None = None) -> float:
        """Mean R squared for one method; fraction of 0.0 marks rows of
        panel-independent methods, None matches every panel size."""
        vals = [
            r.r2
            for r in self.rows
            if r.method == method
            and (fraction is None or r.volunteer_fraction == fraction)
        ]
        return float(np.mean(vals))


def _map_ordered(fn, args_list: list[tuple], n_jobs: int) -> list:
    """Run independent jobs serially or on a thread pool.

    Results come back in submission order whatever the completion order,
    so aggregation stays deterministic at any pool size.
    """
    if n_jobs <= 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(fn, *args) for args in args_list]
        return [f.result() for f in futures]


def _nested_panel(
    order: np.ndarray, n_persons: int, n_volunteers: int, n_discoverable: int
) -> VolunteerPanel:
    # volunteer panels at different sizes are prefixes of one shuffle,
    # so smaller panels are subsets of larger ones
    n_disc = max(n_discoverable, n_volunteers)
    return VolunteerPanel(
        n_persons=n_persons,
        volunteers=tuple(sorted(int(i) for i in order[:n_volunteers])),
        discoverable=tuple(sorted(int(i) for i in order[:n_disc])),
    )


def _bootstrap_replicate(
    config: ExperimentConfig,
    volunteer_fractions: tuple[float, ...],
    seed: int,
    rep: int,
) -> list[BootstrapRow]:
    spd = config.steps_per_day
    n_steps = config.days * spd
    horizon = config.horizon_days
    model = build_world(config, substream(seed, "world", rep))
    truth = simulate_world(model, n_steps, substream(seed, "truth", rep))
    counts = daily_infectious_counts(truth.healths_history, spd)
    y = counts[horizon:].astype(np.float64)
    order = substream(seed, "panel", rep).permutation(config.n_persons)
    n_disc = max(1, int(round(config.discoverable_fraction * config.n_persons)))
    persist = counts[: config.days - horizon + 1].astype(np.float64)
    rows = [BootstrapRow("persistence", 0.0, rep, r_squared(persist, y))]
    for level, fraction in enumerate(volunteer_fractions):
        n_vol = max(1, int(round(fraction * config.n_persons)))
        panel = _nested_panel(order, config.n_persons, n_vol, n_disc)
        level_model = replace(model, panel=panel)
        obs = synthesize_observations(
            truth.healths_history,
            truth.locations_history,
            panel,
            config.noise,
            spd,
            substream(seed, "obs", rep, level),
            scan_every=model.scan_every,
        )
        preds = filter_with_daily_predictions(
            level_model, obs, config, seed, "rep", rep, "level", level
        )
        rows.append(
            BootstrapRow("filter", fraction, rep, r_squared(preds[horizon:], y))
        )
        scaled = scaling_baseline(obs.reports, config.days + 1, config.n_persons)
        rows.append(
            BootstrapRow(
                "scaling",
                fraction,
                rep,
                r_squared(scaled[: config.days - horizon + 1], y),
            )
        )
    return rows


def bootstrap_population_experiment(
    config: ExperimentConfig,
    volunteer_fractions: tuple[float, ...] = (0.10, 0.05, 1.0 / 30.0, 0.01),
    n_replicates: int = 20,
    seed: int = 0,
    n_jobs: int = 1,
) -> BootstrapResult:
    """Two-week-ahead population prediction at several panel sizes.

    Each replicate simulates one ground-truth path, then replays it for
    every volunteer fraction: synthesize observations from that panel,
    filter, and predict the end-of-window infectious count from each
    day's posterior.  R squared is scored against the daily truth for
    the filter, the respondent-scaling baseline, and a persistence
    baseline (truth shifted by the horizon; not part of the reference
    pipeline).  Replicates are independent jobs; n_jobs > 1 runs them on
    a thread pool without changing any result.
    """
    if n_replicates < 1:
        raise ConfigError("need at least one replicate")
    chunks = _map_ordered(
        _bootstrap_replicate,
        [(config, tuple(volunteer_fractions), seed, rep) for rep in range(n_replicates)],
        n_jobs,
    )
    return BootstrapResult(
        rows=[row for chunk in chunks for row in chunk],
        volunteer_fractions=tuple(volunteer_fractions),
        n_replicates=n_replicates,
    )


def _fold_assignment(n: int, folds: int) -> np.ndarray:
    # round-robin keeps fold sizes within one of each other
    return np.arange(n) % folds


def _truncated_log(
    obs: ObservationLog, n_steps: int, steps_per_day: int, held: set[int],
    scans=None,
) -> ObservationLog:
    n_days = n_steps // steps_per_day
    if scans is None:
        scans = [s for s in obs.scans if s.t <= n_steps]
    return ObservationLog(
        n_steps=n_steps,
        steps_per_day=steps_per_day,
        scans=scans,
        reports=[
            r for r in obs.reports if r.day <= n_days and r.person not in held
        ],
    )


@dataclass
class CrossValidationResult:
    """Pooled held-out scores: every volunteer is scored exactly once,
    by the fold that held it out."""

    volunteers: tuple[int, ...]
    fold_of: np.ndarray
    labels: np.ndarray  # infectious at any step of the prediction window
    scores_scans_kept: np.ndarray  # reports held out, scans kept
    scores_scans_held: np.ndarray  # reports and own scan rows held out
    ap_scans_kept: float
    ap_scans_held: float
    ap_in_sample: float
    prevalence: float


def cross_validate(
    model: WorldModel,
    truth: WorldTruth,
    obs: ObservationLog,
    config: ExperimentConfig,
    seed: int,
    n_jobs: int = 1,
) -> CrossValidationResult:
    """Score held-out volunteers' infection risk under two redactions.

    Volunteers are split round-robin into folds.  For each fold the
    filter sees observations up to prediction_day with the held-out
    volunteers' reports removed; the second mode additionally rebuilds
    the scan stream as if only the kept volunteers carried scanners
    (held-out persons remain discoverable, so scans by kept volunteers
    still count them).  Scores are the forward-window infection
    probabilities; the label is ground-truth infection at any step of
    that window.  The same filter seed is reused for every fold and
    mode so score differences come from the data, not the particles.
    Folds are independent jobs; n_jobs > 1 maps them onto a thread pool
    without changing any score.
    """
    spd = model.steps_per_day
    t0 = config.prediction_day * spd
    horizon_steps = config.horizon_days * spd
    if t0 + horizon_steps > truth.n_steps:
        raise ConfigError("prediction window runs past the simulated horizon")
    volunteers = model.panel.volunteers
    fold_of = _fold_assignment(len(volunteers), config.folds)

    window = truth.healths_history[t0 + 1 : t0 + horizon_steps + 1]
    labels = (window == 1).any(axis=0)[list(volunteers)]

    def filter_and_score(log: ObservationLog) -> np.ndarray:
        result = run_filter(
            model, log, config.n_particles, substream(seed, "cvfilter")
        )
        out = predict_forward(
            result.ensemble, model, horizon_steps, substream(seed, "cvpredict")
        )
        return out.p_infected[list(volunteers)]

    in_sample = filter_and_score(_truncated_log(obs, t0, spd, set()))

    def run_fold(fold: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        held_idx = np.flatnonzero(fold_of == fold)
        held = {volunteers[i] for i in held_idx}
        kept_panel = VolunteerPanel(
            n_persons=model.panel.n_persons,
            volunteers=tuple(v for v in volunteers if v not in held),
            discoverable=model.panel.discoverable,
        )
        mode_a = _truncated_log(obs, t0, spd, held)
        kept = filter_and_score(mode_a)[held_idx]

        rebuilt = synthesize_observations(
            truth.healths_history[: t0 + 1],
            truth.locations_history[: t0 + 1],
            kept_panel,
            model.noise,
            spd,
            substream(seed, "cvscans", fold),
            scan_every=model.scan_every,
        )
        mode_b = _truncated_log(obs, t0, spd, held, scans=rebuilt.scans)
        return held_idx, kept, filter_and_score(mode_b)[held_idx]

    scores_kept = np.zeros(len(volunteers))
    scores_held = np.zeros(len(volunteers))
    for held_idx, kept, held_scores in _map_ordered(
        run_fold, [(fold,) for fold in range(config.folds)], n_jobs
    ):
        scores_kept[held_idx] = kept
        scores_held[held_idx] = held_scores

    return CrossValidationResult(
        volunteers=volunteers,
        fold_of=fold_of,
        labels=labels,
        scores_scans_kept=scores_kept,
        scores_scans_held=scores_held,
        ap_scans_kept=precision_recall(scores_kept, labels).average_precision,
        ap_scans_held=precision_recall(scores_held, labels).average_precision,
        ap_in_sample=precision_recall(in_sample, labels).average_precision,
        prevalence=float(labels.mean()),
    )
