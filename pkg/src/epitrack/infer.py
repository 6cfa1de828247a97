"""Particle filtering, smoothing, rate learning, and forward prediction.

The filter alternates mutation (one joint world step per particle via
the shared stepping kernel) with selection (resampling proportional to
the observation likelihood).  Ancestor indices are recorded so full
latent trajectories can be reconstructed by walking the genealogy
backward, and each particle carries its event counts and exposure
integrals so conjugate rate updates need no trajectory reconstruction
at all.

All weight arithmetic happens in log space; normalization uses the
log-sum-exp shift.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .epidemic import EpidemicParams
from .mobility import MobilityParams
from .observe import (
    ObservationLog,
    ScanObservation,
    SymptomReport,
    bluetooth_log_likelihood,
)
from .rng import substream
from .world import (
    EV_INFECT_CONTACT,
    EV_INFECT_OUTSIDE,
    EV_RECOVER,
    WorldModel,
    final_exposures,
    step_ensemble,
)


@dataclass
class Ensemble:
    """Particle population at one step.

    stats carries per-particle event counts and exposure integrals
    (columns: n1, n2, n3, g1, g2, g3), reindexed on every resample so
    each row always describes its particle's full lineage.
    """

    healths: np.ndarray  # (N, persons) int8
    locations: np.ndarray  # (N, persons) int16
    step: int
    stats: np.ndarray  # (N, 6) float64
    log_weights: np.ndarray  # (N,) float64, unnormalized

    @property
    def n_particles(self) -> int:
        return self.healths.shape[0]


def initial_ensemble(model: WorldModel, n_particles: int) -> Ensemble:
    if n_particles < 1:
        raise ValueError("need at least one particle")
    return Ensemble(
        healths=np.tile(model.init_healths, (n_particles, 1)),
        locations=np.tile(model.init_locations, (n_particles, 1)),
        step=0,
        stats=np.zeros((n_particles, 6)),
        log_weights=np.zeros(n_particles),
    )


def normalized_weights(log_weights: np.ndarray) -> np.ndarray:
    """exp-normalize; all-(-inf) input yields the zero vector."""
    m = log_weights.max()
    if m == -np.inf:
        return np.zeros_like(log_weights)
    w = np.exp(log_weights - m)
    return w / w.sum()


def effective_sample_size(log_weights: np.ndarray) -> float:
    w = normalized_weights(log_weights)
    s = float((w**2).sum())
    return 1.0 / s if s > 0.0 else 0.0


def observation_log_likelihoods(
    scans: list[ScanObservation],
    reports: list[SymptomReport],
    healths: np.ndarray,
    locations: np.ndarray,
    panel,
    noise,
) -> np.ndarray:
    """Per-particle joint log-likelihood of one step's observations.

    Vectorized twin of observe.observation_log_likelihood; agrees with
    it row by row.
    """
    n_particles, n_persons = healths.shape
    out = np.zeros(n_particles)
    x0 = n_persons
    y0 = panel.n_discoverable
    for scan in scans:
        x_loc = (locations == scan.location).sum(axis=1)
        out += bluetooth_log_likelihood(scan.count, x_loc, x0, y0)
    with np.errstate(divide="ignore"):
        for report in reports:
            p = report.person
            own_infectious = healths[:, p] == 1
            if report.self_sick:
                p_self = np.where(
                    own_infectious, noise.sensitivity, 1.0 - noise.specificity
                )
            else:
                p_self = np.where(
                    own_infectious, 1.0 - noise.sensitivity, noise.specificity
                )
            near = (healths == 1) & (locations == locations[:, p : p + 1])
            near[:, p] = False
            any_near = near.any(axis=1)
            if report.nearby_sick:
                p_nearby = np.where(any_near, noise.nearby_sensitivity, 0.0)
            else:
                p_nearby = np.where(any_near, 1.0 - noise.nearby_sensitivity, 1.0)
            out += np.log(p_self) + np.log(p_nearby)
    return out


def multinomial_ancestors(
    weights: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right").astype(np.int32)


def systematic_ancestors(
    weights: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    points = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, points, side="right").astype(np.int32)


@dataclass
class FilterStepInfo:
    """One step's selection bookkeeping.

    pre_healths / pre_locations reference the post-mutation,
    pre-selection state arrays (selection builds new arrays, so these
    stay intact until the next mutation).
    """

    ancestors: np.ndarray  # (N,) int32, identity when no resample fired
    weights: np.ndarray  # (N,) normalized post-scoring weights
    ess: float
    log_likelihood_increment: float
    resampled: bool
    degenerate: bool
    ev_person: np.ndarray  # (N,) int32
    ev_kind: np.ndarray  # (N,) int8
    pre_healths: np.ndarray  # (N, persons) int8
    pre_locations: np.ndarray  # (N, persons) int16


def filter_step(
    ensemble: Ensemble,
    model: WorldModel,
    obs_log: ObservationLog,
    rng: np.random.Generator,
    *,
    systematic: bool = False,
    ess_threshold: float | None = None,
) -> FilterStepInfo:
    """Advance the ensemble one step in place: mutate, score, select.

    Selection runs at every step that carries observations (optionally
    gated on effective sample size); steps without observations leave
    the particle order untouched.  If every particle scores -inf, the
    step is flagged degenerate and selection falls back to uniform
    resampling.
    """
    n = ensemble.n_particles
    t = ensemble.step + 1
    ev_person = np.empty(n, dtype=np.int32)
    ev_kind = np.empty(n, dtype=np.int8)
    scratch = np.zeros(model.n_locations, dtype=np.int64)
    step_ensemble(
        ensemble.healths,
        ensemble.locations,
        model,
        t,
        rng,
        ensemble.stats,
        ev_person,
        ev_kind,
        scratch,
    )
    ensemble.step = t
    pre_healths = ensemble.healths
    pre_locations = ensemble.locations

    scans = obs_log.scans_at(t)
    reports = obs_log.reports_at_step(t)
    identity = np.arange(n, dtype=np.int32)
    if not scans and not reports:
        weights = normalized_weights(ensemble.log_weights)
        s = float((weights**2).sum())
        return FilterStepInfo(
            ancestors=identity,
            weights=weights,
            ess=1.0 / s if s > 0.0 else 0.0,
            log_likelihood_increment=0.0,
            resampled=False,
            degenerate=False,
            ev_person=ev_person,
            ev_kind=ev_kind,
            pre_healths=pre_healths,
            pre_locations=pre_locations,
        )

    loglik = observation_log_likelihoods(
        scans, reports, ensemble.healths, ensemble.locations, model.panel, model.noise
    )
    before = logsumexp(ensemble.log_weights)
    ensemble.log_weights = ensemble.log_weights + loglik
    after = logsumexp(ensemble.log_weights)
    increment = float(after - before)

    weights = normalized_weights(ensemble.log_weights)
    s = float((weights**2).sum())
    ess = 1.0 / s if s > 0.0 else 0.0
    degenerate = bool(np.all(np.isneginf(ensemble.log_weights)))

    if degenerate:
        ancestors = rng.integers(0, n, size=n).astype(np.int32)
    elif ess_threshold is not None and ess >= ess_threshold:
        return FilterStepInfo(
            ancestors=identity,
            weights=weights,
            ess=ess,
            log_likelihood_increment=increment,
            resampled=False,
            degenerate=False,
            ev_person=ev_person,
            ev_kind=ev_kind,
            pre_healths=pre_healths,
            pre_locations=pre_locations,
        )
    elif systematic:
        ancestors = systematic_ancestors(weights, n, rng)
    else:
        ancestors = multinomial_ancestors(weights, n, rng)

    ensemble.healths = pre_healths[ancestors]
    ensemble.locations = pre_locations[ancestors]
    ensemble.stats = ensemble.stats[ancestors]
    ensemble.log_weights = np.zeros(n)
    return FilterStepInfo(
        ancestors=ancestors,
        weights=weights,
        ess=ess,
        log_likelihood_increment=increment,
        resampled=True,
        degenerate=degenerate,
        ev_person=ev_person,
        ev_kind=ev_kind,
        pre_healths=pre_healths,
        pre_locations=pre_locations,
    )


@dataclass
class FilterHistory:
    """Pre-selection states plus the selection maps, for back-tracing."""

    healths: np.ndarray  # (T + 1, N, persons) int8
    locations: np.ndarray  # (T + 1, N, persons) int16
    ancestors: np.ndarray  # (T, N) int32
    ev_person: np.ndarray  # (T, N) int32
    ev_kind: np.ndarray  # (T, N) int8


@dataclass
class FilterResult:
    marginals: np.ndarray  # (T + 1, persons) filtered P(infectious)
    mean_infectious: np.ndarray  # (T + 1,)
    ess: np.ndarray  # (T,)
    log_marginal_likelihood: float
    n_degenerate_steps: int
    ensemble: Ensemble  # final; stats include the terminal exposure
    history: FilterHistory | None = None


def run_filter(
    model: WorldModel,
    obs_log: ObservationLog,
    n_particles: int,
    seed: int | np.random.Generator,
    *,
    keep_history: bool = False,
    systematic: bool = False,
    ess_threshold: float | None = None,
) -> FilterResult:
    """Bootstrap filter over the whole observation log.

    The marginal-likelihood estimate is the product over steps of mean
    particle likelihoods.  Marginals at step t are weighted particle
    averages after scoring the step-t observations; on a degenerate
    step they fall back to the uniform post-resample average.
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "filter")
    n_steps = obs_log.n_steps
    n_persons = model.n_persons
    ensemble = initial_ensemble(model, n_particles)

    marginals = np.zeros((n_steps + 1, n_persons))
    marginals[0] = model.init_healths
    ess = np.zeros(n_steps)
    history = None
    if keep_history:
        history = FilterHistory(
            healths=np.empty((n_steps + 1, n_particles, n_persons), dtype=np.int8),
            locations=np.empty((n_steps + 1, n_particles, n_persons), dtype=np.int16),
            ancestors=np.empty((n_steps, n_particles), dtype=np.int32),
            ev_person=np.empty((n_steps, n_particles), dtype=np.int32),
            ev_kind=np.empty((n_steps, n_particles), dtype=np.int8),
        )
        history.healths[0] = ensemble.healths
        history.locations[0] = ensemble.locations

    log_z = 0.0
    n_degenerate = 0
    for t in range(1, n_steps + 1):
        info = filter_step(
            ensemble,
            model,
            obs_log,
            rng,
            systematic=systematic,
            ess_threshold=ess_threshold,
        )
        log_z += info.log_likelihood_increment
        ess[t - 1] = info.ess
        if info.degenerate:
            n_degenerate += 1
            marginals[t] = (ensemble.healths == 1).mean(axis=0)
        else:
            marginals[t] = info.weights @ (info.pre_healths == 1)
        if keep_history:
            history.healths[t] = info.pre_healths
            history.locations[t] = info.pre_locations
            history.ancestors[t - 1] = info.ancestors
            history.ev_person[t - 1] = info.ev_person
            history.ev_kind[t - 1] = info.ev_kind

    final_exposures(ensemble.healths, ensemble.locations, ensemble.stats)
    return FilterResult(
        marginals=marginals,
        mean_infectious=marginals.sum(axis=1),
        ess=ess,
        log_marginal_likelihood=log_z,
        n_degenerate_steps=n_degenerate,
        ensemble=ensemble,
        history=history,
    )


@dataclass
class TracedTrajectory:
    """One reconstructed latent path: states at every step plus the
    fired events as (step, person, kind)."""

    healths_history: np.ndarray  # (T + 1, persons) int8
    locations_history: np.ndarray  # (T + 1, persons) int16
    events: list[tuple[int, int, int]]


class SmoothResult:
    """Genealogy-smoothed trajectories, extracted lazily.

    indices[t, k] is the pre-selection particle index whose state at
    step t lies on terminal particle k's lineage.
    """

    def __init__(self, history: FilterHistory):
        self.history = history
        n_steps, n = history.ancestors.shape
        idx = np.empty((n_steps + 1, n), dtype=np.int32)
        if n_steps == 0:
            idx[0] = np.arange(n, dtype=np.int32)
        else:
            idx[n_steps] = history.ancestors[n_steps - 1]
            for t in range(n_steps, 1, -1):
                idx[t - 1] = history.ancestors[t - 2][idx[t]]
            idx[0] = idx[1]
        self.indices = idx

    @property
    def n_trajectories(self) -> int:
        return self.indices.shape[1]

    def trajectory(self, k: int) -> TracedTrajectory:
        h = self.history
        n_steps = h.ancestors.shape[0]
        rows = self.indices[:, k]
        healths = h.healths[np.arange(n_steps + 1), rows]
        locations = h.locations[np.arange(n_steps + 1), rows]
        events = []
        for t in range(1, n_steps + 1):
            j = rows[t]
            kind = int(h.ev_kind[t - 1, j])
            if kind != -1:
                events.append((t, int(h.ev_person[t - 1, j]), kind))
        return TracedTrajectory(
            healths_history=healths, locations_history=locations, events=events
        )

    def marginals(self) -> np.ndarray:
        """Smoothed per-person P(infectious) at every step."""
        h = self.history
        n_steps = h.ancestors.shape[0]
        out = np.empty((n_steps + 1, h.healths.shape[2]))
        for t in range(n_steps + 1):
            out[t] = (h.healths[t, self.indices[t]] == 1).mean(axis=0)
        return out


def smooth_backtrack(result: FilterResult) -> SmoothResult:
    """Reconstruct full latent trajectories by tracing ancestors back.

    Requires run_filter(..., keep_history=True).
    """
    if result.history is None:
        raise ValueError("smoothing needs a filter run with keep_history=True")
    return SmoothResult(result.history)


@dataclass(frozen=True)
class RatePrior:
    """Beta prior over (rate constant * tau)."""

    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0.0 and self.b > 0.0):
            raise ValueError("Beta hyper-parameters must be positive")


@dataclass(frozen=True)
class RatePriors:
    c1: RatePrior = RatePrior()
    c2: RatePrior = RatePrior()
    c3: RatePrior = RatePrior()
    mobility: RatePrior = RatePrior()


def trajectory_statistics(trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Event counts and exposure integrals of one latent path.

    Works on any object with healths_history, locations_history, and
    events.  Exposures sum the per-state enabling counts over every
    recorded state, both endpoints included.
    """
    h = trajectory.healths_history
    loc = trajectory.locations_history
    n_locations = int(loc.max(initial=0)) + 1
    counts = np.zeros(3)
    for _, _, kind in trajectory.events:
        if kind == EV_INFECT_CONTACT:
            counts[0] += 1
        elif kind == EV_RECOVER:
            counts[1] += 1
        elif kind == EV_INFECT_OUTSIDE:
            counts[2] += 1
    exposures = np.zeros(3)
    for t in range(h.shape[0]):
        infectious = h[t] == 1
        occupancy = np.bincount(loc[t][infectious], minlength=n_locations)
        exposures[0] += occupancy[loc[t][~infectious]].sum()
        exposures[1] += infectious.sum()
        exposures[2] += (~infectious).sum()
    return counts, exposures


def _draw_rate(
    count: float, exposure: float, prior: RatePrior, tau: float,
    rng: np.random.Generator,
) -> float:
    return float(rng.beta(prior.a + count, prior.b + exposure - count)) / tau


def sample_rate_constants(
    trajectory,
    priors: RatePriors,
    tau: float,
    rng: np.random.Generator,
) -> EpidemicParams:
    """Conjugate draw of (c1, c2, c3) given one latent trajectory.

    Each rate's scaled value c*tau gets Beta(a + events, b + exposure -
    events); events and exposures come from trajectory_statistics.
    """
    counts, exposures = trajectory_statistics(trajectory)
    return sample_rates_from_stats(np.concatenate([counts, exposures]), priors, tau, rng)


def sample_rates_from_stats(
    stats_row: np.ndarray,
    priors: RatePriors,
    tau: float,
    rng: np.random.Generator,
) -> EpidemicParams:
    """Same conjugate draw, from carried (n1, n2, n3, g1, g2, g3) stats."""
    n1, n2, n3, g1, g2, g3 = (float(v) for v in stats_row)
    return EpidemicParams(
        c1=_draw_rate(n1, g1, priors.c1, tau, rng),
        c2=_draw_rate(n2, g2, priors.c2, tau, rng),
        c3=_draw_rate(n3, g3, priors.c3, tau, rng),
    )


def sample_mobility_rates(
    trajectory,
    model: WorldModel,
    prior: RatePrior,
    rng: np.random.Generator,
) -> MobilityParams:
    """Conjugate draw of per-bucket movement rates from one latent path.

    Each presence step at (bucket, location) is one categorical trial
    over {stay} + destinations with probabilities rate * tau, so the
    conjugate update is a Dirichlet over the row: pseudo-count a per
    destination, b for staying, plus observed moves and stays.  For a
    single destination this is exactly the Beta update used for the
    infection rates; drawing the whole row jointly keeps the row's
    total move probability within one step, which independent per-cell
    draws cannot guarantee.
    """
    loc = trajectory.locations_history
    n_steps = loc.shape[0] - 1
    scheme = model.mobility.scheme
    n_buckets = scheme.n_buckets
    n_locations = model.n_locations
    counts = np.zeros((n_buckets, n_locations, n_locations))
    exposure = np.zeros((n_buckets, n_locations))
    for t in range(n_steps + 1):
        bucket = model.bucket_at_step(t + 1)
        exposure[bucket] += np.bincount(loc[t], minlength=n_locations)
        if t < n_steps:
            moved = loc[t + 1] != loc[t]
            for i, j in zip(loc[t][moved], loc[t + 1][moved]):
                counts[bucket, i, j] += 1
    rates = np.zeros_like(counts)
    for b in range(n_buckets):
        for i in range(n_locations):
            others = [j for j in range(n_locations) if j != i]
            if not others:
                continue
            moves = counts[b, i, others]
            stays = exposure[b, i] - moves.sum()
            alpha = np.append(prior.a + moves, prior.b + stays)
            row = rng.dirichlet(alpha)
            rates[b, i, others] = row[:-1] / model.tau
    return MobilityParams(scheme=scheme, rates=rates)


@dataclass
class LearnResult:
    rate_samples: np.ndarray  # (sweeps, 3) sampled (c1, c2, c3)
    mobility_samples: list[MobilityParams] | None
    n_degenerate_steps: int
    log_marginal_likelihoods: np.ndarray  # (sweeps,)


def gibbs_learn(
    model: WorldModel,
    obs_log: ObservationLog,
    priors: RatePriors,
    sweeps: int,
    n_particles: int,
    seed: int | np.random.Generator,
    *,
    learn_mobility: bool = False,
    ess_threshold: float | None = None,
) -> LearnResult:
    """Alternate filtering and conjugate rate draws.

    Each sweep filters under the current rates, picks one particle
    lineage uniformly, and redraws the rates from that lineage's
    sufficient statistics.  Mobility learning (off by default) redraws
    the movement matrices from a back-traced trajectory with the same
    mechanics, which needs full histories and correspondingly more
    memory.  ess_threshold passes through to the per-sweep filter;
    gating the resampling slows ancestry coalescence, which keeps the
    picked lineage's statistics anchored to more of the data.
    """
    if sweeps < 1:
        raise ValueError("need at least one sweep")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "learn")
    current = model
    samples = np.zeros((sweeps, 3))
    mobility_samples: list[MobilityParams] | None = [] if learn_mobility else None
    logz = np.zeros(sweeps)
    degenerate = 0
    for sweep in range(sweeps):
        result = run_filter(
            current,
            obs_log,
            n_particles,
            rng,
            keep_history=learn_mobility,
            ess_threshold=ess_threshold,
        )
        degenerate += result.n_degenerate_steps
        logz[sweep] = result.log_marginal_likelihood
        k = int(rng.integers(result.ensemble.n_particles))
        if learn_mobility:
            smooth = smooth_backtrack(result)
            trajectory = smooth.trajectory(k)
            params = sample_rate_constants(trajectory, priors, current.tau, rng)
            mobility = sample_mobility_rates(trajectory, current, priors.mobility, rng)
            mobility_samples.append(mobility)
            current = replace(current, epidemic=params, mobility=mobility)
        else:
            params = sample_rates_from_stats(
                result.ensemble.stats[k], priors, current.tau, rng
            )
            current = replace(current, epidemic=params)
        samples[sweep] = (params.c1, params.c2, params.c3)
    return LearnResult(
        rate_samples=samples,
        mobility_samples=mobility_samples,
        n_degenerate_steps=degenerate,
        log_marginal_likelihoods=logz,
    )


@dataclass
class PredictResult:
    start_step: int
    horizon_steps: int
    p_infected: np.ndarray  # (persons,) P(ever infectious in window)
    mean_infectious: np.ndarray  # (horizon,) per-step mean count
    q05_infectious: np.ndarray  # (horizon,)
    q95_infectious: np.ndarray  # (horizon,)


def predict_forward(
    ensemble: Ensemble,
    model: WorldModel,
    horizon_steps: int,
    rng: np.random.Generator,
    *,
    n_runs: int | None = None,
) -> PredictResult:
    """Run the ensemble forward with no selection.

    Per-person score: fraction of forward runs in which the person is
    infectious at any step of the window.  Population summary: mean and
    5/95 percent quantiles of the per-step infectious count.
    """
    if horizon_steps < 0:
        raise ValueError("horizon must be nonnegative")
    n = ensemble.n_particles
    if n_runs is None or n_runs == n:
        pick = np.arange(n)
    else:
        pick = rng.integers(0, n, size=n_runs)
    healths = ensemble.healths[pick].copy()
    locations = ensemble.locations[pick].copy()
    n_runs_eff = healths.shape[0]

    ever = np.zeros(healths.shape, dtype=bool)
    counts = np.zeros((horizon_steps, n_runs_eff))
    stats = np.zeros((n_runs_eff, 6))
    ev_person = np.empty(n_runs_eff, dtype=np.int32)
    ev_kind = np.empty(n_runs_eff, dtype=np.int8)
    scratch = np.zeros(model.n_locations, dtype=np.int64)
    for h in range(horizon_steps):
        step_ensemble(
            healths,
            locations,
            model,
            ensemble.step + 1 + h,
            rng,
            stats,
            ev_person,
            ev_kind,
            scratch,
        )
        infectious = healths == 1
        ever |= infectious
        counts[h] = infectious.sum(axis=1)
    return PredictResult(
        start_step=ensemble.step,
        horizon_steps=horizon_steps,
        p_infected=ever.mean(axis=0),
        mean_infectious=counts.mean(axis=1),
        q05_infectious=(
            np.quantile(counts, 0.05, axis=1) if horizon_steps else np.zeros(0)
        ),
        q95_infectious=(
            np.quantile(counts, 0.95, axis=1) if horizon_steps else np.zeros(0)
        ),
    )
