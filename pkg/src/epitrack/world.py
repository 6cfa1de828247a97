"""Joint movement + infection world.

Bundles the pieces a full run needs (movement rates, infection rates,
volunteer panel, reporting noise, initial state, step size) and provides
the single stepping kernel used both to generate ground truth and to
mutate particle ensembles.  One step advances every particle by:

1. at most one infection/recovery event, drawn from the per-person event
   table built on the step-start co-location pattern;
2. independent per-person moves with probability rate * tau each.

The kernel also accumulates, per particle, the event counts and exposure
integrals that conjugate rate updates consume, so learning never needs
the full particle histories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .epidemic import EpidemicParams, HealthState
from .errors import ConfigError, StepTooCoarse
from .mobility import (
    MobilityParams,
    MobilityTrace,
    check_step_size,
    day_night_scheme,
)
from .observe import EmissionNoise, VolunteerPanel
from .skm import Event, ReactionSystem, Species

# event kinds recorded by the kernel; infections carry their cause so
# rate updates can credit the right constant
EV_NONE = -1
EV_INFECT_CONTACT = 0
EV_RECOVER = 1
EV_INFECT_OUTSIDE = 2

EVENT_KIND_NAMES = {
    EV_INFECT_CONTACT: "infect_contact",
    EV_RECOVER: "recover",
    EV_INFECT_OUTSIDE: "infect_outside",
}

# sufficient-statistics columns: event counts then exposure integrals,
# one pair per rate constant (c1, c2, c3)
STAT_N1, STAT_N2, STAT_N3, STAT_G1, STAT_G2, STAT_G3 = range(6)


@dataclass
class WorldModel:
    """Everything needed to simulate or filter one synthetic world."""

    mobility: MobilityParams
    epidemic: EpidemicParams
    panel: VolunteerPanel
    noise: EmissionNoise
    init_healths: np.ndarray  # (persons,) HealthState values
    init_locations: np.ndarray  # (persons,) location ids
    tau: float  # step length, hours
    scan_every: int = 1
    start_time: float = 0.0

    def __post_init__(self):
        self.init_healths = np.asarray(self.init_healths, dtype=np.int8)
        self.init_locations = np.asarray(self.init_locations, dtype=np.int16)
        if self.init_healths.shape != (self.panel.n_persons,):
            raise ValueError("init_healths length != panel person count")
        if self.init_locations.shape != (self.panel.n_persons,):
            raise ValueError("init_locations length != panel person count")
        if not np.all(
            (self.init_healths == HealthState.SUSCEPTIBLE)
            | (self.init_healths == HealthState.INFECTIOUS)
        ):
            raise ValueError("init_healths must be HealthState values")
        n_loc = self.mobility.n_locations
        if np.any(self.init_locations < 0) or np.any(self.init_locations >= n_loc):
            raise ValueError("init_locations out of range")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if abs(24.0 / self.tau - round(24.0 / self.tau)) > 1e-9:
            raise ValueError("tau must divide 24 hours evenly")
        if self.scan_every < 1:
            raise ValueError("scan_every must be >= 1")
        check_step_size(self.mobility, self.tau)

    @property
    def n_persons(self) -> int:
        return self.panel.n_persons

    @property
    def n_locations(self) -> int:
        return self.mobility.n_locations

    @property
    def steps_per_day(self) -> int:
        return int(round(24.0 / self.tau))

    def step_start_time(self, step: int) -> float:
        """Wall-clock hours at the start of step `step` (steps are 1-based)."""
        return self.start_time + (step - 1) * self.tau

    def bucket_at_step(self, step: int) -> int:
        return self.mobility.scheme.bucket_of(self.step_start_time(step))


@njit(cache=True, nogil=True)
def _step_kernel(
    healths,  # (N, P) int8, updated in place
    locations,  # (N, P) int16, updated in place
    rates,  # (L, L) float64, movement rates for this step's bucket
    c1,
    c2,
    c3,
    tau,
    rng,
    ev_person,  # (N,) int32 out
    ev_kind,  # (N,) int8 out
    stats,  # (N, 6) float64, accumulated in place
    inf_count,  # (L,) int64 scratch
):
    n_particles, n_persons = healths.shape
    n_locations = rates.shape[0]
    worst = 0.0
    for n in range(n_particles):
        # infectious head-count per location under the step-start pattern
        for l in range(n_locations):
            inf_count[l] = 0
        n_inf = 0
        for p in range(n_persons):
            if healths[n, p] == 1:
                inf_count[locations[n, p]] += 1
                n_inf += 1

        # event-table total; susceptibles contribute a contact term and
        # an outside term, infectious persons a recovery term
        g1 = 0.0
        for p in range(n_persons):
            if healths[n, p] == 0:
                g1 += inf_count[locations[n, p]]
        n_sus = n_persons - n_inf
        total = c1 * g1 + c2 * n_inf + c3 * n_sus
        if total * tau > worst:
            worst = total * tau

        # exposure integrals at the step-start state
        stats[n, STAT_G1] += g1
        stats[n, STAT_G2] += n_inf
        stats[n, STAT_G3] += n_sus

        ev_person[n] = -1
        ev_kind[n] = EV_NONE
        if total * tau <= 1.0 and total > 0.0:
            u = rng.random()
            if u < total * tau:
                target = u / tau
                acc = 0.0
                done = False
                for p in range(n_persons):
                    if healths[n, p] == 0:
                        acc += c1 * inf_count[locations[n, p]]
                        if acc > target:
                            ev_person[n] = p
                            ev_kind[n] = EV_INFECT_CONTACT
                            done = True
                            break
                        acc += c3
                        if acc > target:
                            ev_person[n] = p
                            ev_kind[n] = EV_INFECT_OUTSIDE
                            done = True
                            break
                    else:
                        acc += c2
                        if acc > target:
                            ev_person[n] = p
                            ev_kind[n] = EV_RECOVER
                            done = True
                            break
                if not done:
                    # float round-off walked past the final entry
                    for p in range(n_persons - 1, -1, -1):
                        h = c2 if healths[n, p] == 1 else (
                            c1 * inf_count[locations[n, p]] + c3
                        )
                        if h > 0.0:
                            ev_person[n] = p
                            ev_kind[n] = (
                                EV_RECOVER if healths[n, p] == 1 else EV_INFECT_OUTSIDE
                            )
                            break
                p = ev_person[n]
                if p >= 0:
                    if ev_kind[n] == EV_RECOVER:
                        healths[n, p] = 0
                        stats[n, STAT_N2] += 1.0
                    elif ev_kind[n] == EV_INFECT_CONTACT:
                        healths[n, p] = 1
                        stats[n, STAT_N1] += 1.0
                    else:
                        healths[n, p] = 1
                        stats[n, STAT_N3] += 1.0

        # per-person independent moves
        for p in range(n_persons):
            loc = locations[n, p]
            row_total = 0.0
            for j in range(n_locations):
                row_total += rates[loc, j]
            if row_total <= 0.0:
                continue
            u = rng.random()
            if u < row_total * tau:
                target = u / tau
                acc = 0.0
                dest = -1
                for j in range(n_locations):
                    acc += rates[loc, j]
                    if acc > target:
                        dest = j
                        break
                if dest < 0:
                    for j in range(n_locations - 1, -1, -1):
                        if rates[loc, j] > 0.0:
                            dest = j
                            break
                locations[n, p] = dest
    return worst


def final_exposures(healths: np.ndarray, locations: np.ndarray, stats: np.ndarray):
    """Add the last state's exposure terms into `stats`.

    The kernel accumulates exposures at step-start states only, so after
    the final step the terminal state's contribution is still missing;
    rate updates sum exposures over every recorded state including the
    last one.
    """
    n_particles, n_persons = healths.shape
    n_locations = int(locations.max(initial=0)) + 1
    for n in range(n_particles):
        counts = np.bincount(
            locations[n][healths[n] == 1], minlength=n_locations
        )
        g1 = counts[locations[n][healths[n] == 0]].sum()
        n_inf = int((healths[n] == 1).sum())
        stats[n, STAT_G1] += g1
        stats[n, STAT_G2] += n_inf
        stats[n, STAT_G3] += n_persons - n_inf


def step_ensemble(
    healths: np.ndarray,
    locations: np.ndarray,
    model: WorldModel,
    step: int,
    rng: np.random.Generator,
    stats: np.ndarray,
    ev_person: np.ndarray,
    ev_kind: np.ndarray,
    scratch: np.ndarray,
) -> None:
    """Advance every particle by one step, in place.

    Raises StepTooCoarse when any particle's event-table total exceeds
    1/tau, in which case no state is trusted.
    """
    bucket = model.bucket_at_step(step)
    ep = model.epidemic
    worst = _step_kernel(
        healths,
        locations,
        model.mobility.rates[bucket],
        ep.c1,
        ep.c2,
        ep.c3,
        model.tau,
        rng,
        ev_person,
        ev_kind,
        stats,
        scratch,
    )
    if worst > 1.0:
        raise StepTooCoarse(worst / model.tau, 1.0 / model.tau)


@dataclass
class WorldTruth:
    """Ground-truth run: full state histories plus the fired events."""

    model: WorldModel
    healths_history: np.ndarray  # (n_steps + 1, persons) int8
    locations_history: np.ndarray  # (n_steps + 1, persons) int16
    events: list[tuple[int, int, int]] = field(default_factory=list)
    # (step, person, kind) for each fired infection/recovery
    stats: np.ndarray | None = None  # (6,) event counts + exposures

    @property
    def n_steps(self) -> int:
        return self.healths_history.shape[0] - 1

    def mobility_trace(self) -> MobilityTrace:
        return MobilityTrace(
            start_time=self.model.start_time,
            tau=self.model.tau,
            history=self.locations_history,
        )


def simulate_world(
    model: WorldModel, n_steps: int, rng: np.random.Generator
) -> WorldTruth:
    """Generate one ground-truth trajectory with the ensemble kernel (N=1)."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    n_persons = model.n_persons
    healths = model.init_healths[None, :].copy()
    locations = model.init_locations[None, :].copy()
    healths_history = np.empty((n_steps + 1, n_persons), dtype=np.int8)
    locations_history = np.empty((n_steps + 1, n_persons), dtype=np.int16)
    healths_history[0] = healths[0]
    locations_history[0] = locations[0]

    stats = np.zeros((1, 6), dtype=np.float64)
    ev_person = np.empty(1, dtype=np.int32)
    ev_kind = np.empty(1, dtype=np.int8)
    scratch = np.zeros(model.n_locations, dtype=np.int64)
    events: list[tuple[int, int, int]] = []
    for step in range(1, n_steps + 1):
        step_ensemble(
            healths, locations, model, step, rng, stats, ev_person, ev_kind, scratch
        )
        if ev_kind[0] != EV_NONE:
            events.append((step, int(ev_person[0]), int(ev_kind[0])))
        healths_history[step] = healths[0]
        locations_history[step] = locations[0]
    final_exposures(healths, locations, stats)
    return WorldTruth(
        model=model,
        healths_history=healths_history,
        locations_history=locations_history,
        events=events,
        stats=stats[0],
    )


def campus_world(
    n_persons: int = 300,
    n_homes: int = 5,
    n_locations: int = 15,
    epidemic: EpidemicParams | None = None,
    volunteer_fraction: float = 0.10,
    discoverable_fraction: float = 0.40,
    n_initial_infectious: int = 3,
    tau: float = 0.25,
    scan_every: int = 1,
    noise: EmissionNoise | None = None,
    rng: np.random.Generator | None = None,
) -> WorldModel:
    """Synthetic campus: a few shared homes plus daytime venues.

    Weekday days pull people from homes into venues, nights push them
    home; weekends are a muted version of the same.  Venue mixing is
    what gives infections room to spread.
    """
    if n_homes >= n_locations:
        raise ValueError("need at least one non-home venue")
    if rng is None:
        rng = np.random.default_rng(0)
    scheme = day_night_scheme()
    n_venues = n_locations - n_homes
    rates = np.zeros((4, n_locations, n_locations))
    day_wk, night_wk, day_we, night_we = 0, 1, 2, 3

    homes = slice(0, n_homes)
    venues = slice(n_homes, n_locations)
    rates[day_wk, homes, venues] = 0.06
    rates[day_wk, venues, venues] = 0.04
    rates[day_wk, venues, homes] = 0.10 / n_homes
    rates[night_wk, homes, venues] = 0.005
    rates[night_wk, venues, homes] = 0.50 / n_homes
    rates[night_wk, venues, venues] = 0.01
    rates[day_we, homes, venues] = 0.02
    rates[day_we, venues, venues] = 0.03
    rates[day_we, venues, homes] = 0.15 / n_homes
    rates[night_we] = rates[night_wk]
    for b in range(4):
        np.fill_diagonal(rates[b], 0.0)
    mobility = MobilityParams(scheme=scheme, rates=rates)

    if epidemic is None:
        epidemic = EpidemicParams(c1=0.0004, c2=1.0 / 72.0, c3=5e-5)
    if noise is None:
        noise = EmissionNoise()

    order = rng.permutation(n_persons)
    n_vol = max(1, int(round(volunteer_fraction * n_persons)))
    n_disc = max(n_vol, int(round(discoverable_fraction * n_persons)))
    volunteers = tuple(sorted(int(i) for i in order[:n_vol]))
    discoverable = tuple(sorted(int(i) for i in order[:n_disc]))
    panel = VolunteerPanel(
        n_persons=n_persons, volunteers=volunteers, discoverable=discoverable
    )

    init_healths = np.zeros(n_persons, dtype=np.int8)
    seeds = rng.choice(n_persons, size=min(n_initial_infectious, n_persons), replace=False)
    init_healths[seeds] = HealthState.INFECTIOUS
    init_locations = rng.integers(0, n_homes, size=n_persons).astype(np.int16)

    return WorldModel(
        mobility=mobility,
        epidemic=epidemic,
        panel=panel,
        noise=noise,
        init_healths=init_healths,
        init_locations=init_locations,
        tau=tau,
        scan_every=scan_every,
    )


def epidemic_params_from_system(system: ReactionSystem) -> EpidemicParams:
    """Read (c1, c2, c3) off a two-species S/I reaction system.

    Recognized productions: S + I -> 2 I (contact infection), I -> S
    (recovery), S -> I (outside infection).  Anything else is a config
    error; missing productions default to rate 0.
    """
    names = [sp.name for sp in system.species]
    if sorted(names) != ["I", "S"]:
        raise ConfigError(
            f"epidemic model must use exactly species S and I, got {names}"
        )
    s_idx = names.index("S")
    i_idx = names.index("I")

    def pattern(alpha_s, alpha_i, beta_s, beta_i):
        a = [0, 0]
        b = [0, 0]
        a[s_idx], a[i_idx] = alpha_s, alpha_i
        b[s_idx], b[i_idx] = beta_s, beta_i
        return tuple(a), tuple(b)

    patterns = {
        pattern(1, 1, 0, 2): "c1",
        pattern(0, 1, 1, 0): "c2",
        pattern(1, 0, 0, 1): "c3",
    }
    found: dict[str, float] = {}
    for ev in system.events:
        key = (tuple(ev.reactants), tuple(ev.products))
        name = patterns.get(key)
        if name is None:
            raise ConfigError(
                f"unrecognized epidemic production {ev.reactants} -> {ev.products}"
            )
        if name in found:
            raise ConfigError(f"duplicate production for rate {name}")
        found[name] = ev.rate
    return EpidemicParams(
        c1=found.get("c1", 0.0), c2=found.get("c2", 0.0), c3=found.get("c3", 0.0)
    )


def sis_reaction_system(params: EpidemicParams) -> ReactionSystem:
    """The S/I reaction system matching the given rates (inverse of
    epidemic_params_from_system)."""
    species = (Species("S"), Species("I"))
    events = (
        Event(reactants=(1, 1), products=(0, 2), rate=params.c1),
        Event(reactants=(0, 1), products=(1, 0), rate=params.c2),
        Event(reactants=(1, 0), products=(0, 1), rate=params.c3),
    )
    return ReactionSystem(species=species, events=events)
