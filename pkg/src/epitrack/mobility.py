"""Activity-driven movement between locations.

Movement follows a continuous-time Markov chain over locations whose
rates depend on a week-periodic time bucket (default: hour of day split
by weekday/weekend).  Discrete stepping treats persons independently:
in a step of length tau a person at location i moves to j with
probability c[i][j] * tau.  Because movement events of distinct persons
commute, per-person stepping is exact for the movement marginal; only
epidemic events keep the one-per-step rule.

Times are hours; t = 0 is Monday 00:00, weekend days are Saturday and
Sunday.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AbsorbingLocation, DataError, StepTooCoarse
from .epidemic import ContactSnapshot

HOURS_PER_WEEK = 168


@dataclass(frozen=True)
class BucketScheme:
    """Maps each hour of the week onto a rate bucket."""

    name: str
    hour_map: tuple[int, ...]  # length 168, values in [0, n_buckets)

    def __post_init__(self):
        if len(self.hour_map) != HOURS_PER_WEEK:
            raise ValueError("hour_map must cover all 168 hours of the week")

    @property
    def n_buckets(self) -> int:
        return max(self.hour_map) + 1

    def bucket_of(self, t_hours: float) -> int:
        return self.hour_map[int(t_hours) % HOURS_PER_WEEK]

    def bucket_before(self, t_hours: float) -> int:
        """Bucket in effect on the interval ending at t_hours.

        A transition recorded at time t happened under the rates that
        applied just before t, so exits landing exactly on an hour
        boundary resolve to the bucket being left.
        """
        hour = int(np.ceil(t_hours)) - 1
        return self.hour_map[hour % HOURS_PER_WEEK]


def hourly_weekpart_scheme() -> BucketScheme:
    """Default scheme: 24 hours x {weekday, weekend} = 48 buckets."""
    hour_map = []
    for day in range(7):
        weekend = day >= 5
        for hour in range(24):
            hour_map.append(hour + (24 if weekend else 0))
    return BucketScheme("hourly-weekpart", tuple(hour_map))


def day_night_scheme(day_start: int = 8, day_end: int = 20) -> BucketScheme:
    """Coarse scheme: {day, night} x {weekday, weekend} = 4 buckets."""
    hour_map = []
    for day in range(7):
        weekend = day >= 5
        for hour in range(24):
            is_day = day_start <= hour < day_end
            hour_map.append((0 if is_day else 1) + (2 if weekend else 0))
    return BucketScheme("day-night", tuple(hour_map))


@dataclass
class MobilityParams:
    """Per-bucket movement rate matrices, zero diagonal, rates per hour."""

    scheme: BucketScheme
    rates: np.ndarray  # (n_buckets, n_locations, n_locations)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.ndim != 3 or self.rates.shape[1] != self.rates.shape[2]:
            raise ValueError("rates must have shape (buckets, locations, locations)")
        if self.rates.shape[0] != self.scheme.n_buckets:
            raise ValueError("rates bucket dimension != scheme bucket count")
        if np.any(self.rates < 0.0):
            raise ValueError("rates must be nonnegative")
        if np.any(np.diagonal(self.rates, axis1=1, axis2=2) != 0.0):
            raise ValueError("diagonal rates must be zero")

    @property
    def n_locations(self) -> int:
        return self.rates.shape[1]

    def exit_rates(self, bucket: int) -> np.ndarray:
        return self.rates[bucket].sum(axis=1)


def dwell_time_mean(params: MobilityParams, location: int, bucket: int) -> float:
    """Mean dwell time at a location while the bucket applies: 1 / total exit rate."""
    total = float(params.rates[bucket, location].sum())
    if total == 0.0:
        raise AbsorbingLocation(
            f"location {location} has no outgoing rate in bucket {bucket}"
        )
    return 1.0 / total


def next_location_distribution(
    params: MobilityParams, location: int, bucket: int
) -> np.ndarray:
    """Conditional destination distribution given a move happens."""
    row = params.rates[bucket, location]
    total = float(row.sum())
    if total == 0.0:
        raise AbsorbingLocation(
            f"location {location} has no outgoing rate in bucket {bucket}"
        )
    return row / total


@dataclass
class WorldAssignment:
    """Person -> location at one instant."""

    time: float
    locations: np.ndarray  # (n_persons,) int

    @property
    def n_persons(self) -> int:
        return len(self.locations)


@dataclass
class MobilityTrace:
    """Step-indexed location history for every person."""

    start_time: float
    tau: float
    history: np.ndarray  # (n_steps + 1, n_persons) int16

    @property
    def n_steps(self) -> int:
        return self.history.shape[0] - 1

    @property
    def n_persons(self) -> int:
        return self.history.shape[1]

    def assignment(self, step: int) -> WorldAssignment:
        return WorldAssignment(
            time=self.start_time + step * self.tau,
            locations=self.history[step],
        )

    def groups(self, step: int) -> list[list[int]]:
        """Co-located groups (size >= 2) at a step."""
        locs = self.history[step]
        order = np.argsort(locs, kind="stable")
        out: list[list[int]] = []
        i = 0
        while i < len(order):
            j = i
            while j < len(order) and locs[order[j]] == locs[order[i]]:
                j += 1
            if j - i >= 2:
                out.append([int(p) for p in order[i:j]])
            i = j
        return out

    def contact_snapshot(self, step: int) -> ContactSnapshot:
        return ContactSnapshot.from_groups(
            self.start_time + step * self.tau, self.groups(step), self.n_persons
        )

    def visits(self) -> list[tuple[int, float, float, int]]:
        """(person, enter_time, exit_time, location) intervals, end-capped."""
        out = []
        horizon = self.start_time + self.n_steps * self.tau
        for p in range(self.n_persons):
            locs = self.history[:, p]
            enter = self.start_time
            for k in range(1, len(locs)):
                if locs[k] != locs[k - 1]:
                    t = self.start_time + k * self.tau
                    out.append((p, enter, t, int(locs[k - 1])))
                    enter = t
            out.append((p, enter, horizon, int(locs[-1])))
        return out


def check_step_size(params: MobilityParams, tau: float) -> None:
    """Raise StepTooCoarse if any per-step move probability would exceed 1."""
    worst = float(params.rates.sum(axis=2).max())
    if worst * tau > 1.0:
        raise StepTooCoarse(worst, 1.0 / tau)


def trace_from_visits(
    visits: list[tuple[int, float, float, int]],
    start_time: float,
    tau: float,
    n_steps: int,
) -> MobilityTrace:
    """Invert visits(): rebuild the step grid from end-capped intervals.

    A row (p, enter, exit, loc) covers grid steps enter/tau .. exit/tau - 1;
    the final end-capped row also owns the terminal step.  Gaps raise
    DataError.
    """
    if not visits:
        raise DataError("no visit rows")
    n_persons = max(v[0] for v in visits) + 1
    history = np.full((n_steps + 1, n_persons), -1, dtype=np.int16)
    for person, enter, exit_, loc in visits:
        k0 = int(round((enter - start_time) / tau))
        k1 = int(round((exit_ - start_time) / tau))
        if k0 < 0 or k1 > n_steps or k1 < k0:
            raise DataError(
                f"visit [{enter}, {exit_}) for person {person} is off the step grid"
            )
        history[k0:k1, person] = loc
        if k1 == n_steps:
            history[k1, person] = loc
    if np.any(history < 0):
        t, p = map(int, np.argwhere(history < 0)[0])
        raise DataError(f"visit intervals leave person {p} unplaced at step {t}")
    return MobilityTrace(start_time=start_time, tau=tau, history=history)


def simulate_mobility(
    initial: WorldAssignment,
    params: MobilityParams,
    tau: float,
    n_steps: int,
    rng: np.random.Generator,
) -> MobilityTrace:
    """Per-person independent movement steps over n_steps of length tau."""
    check_step_size(params, tau)
    n_persons = initial.n_persons
    if np.any(initial.locations < 0) or np.any(
        initial.locations >= params.n_locations
    ):
        raise ValueError("initial location out of range")
    history = np.empty((n_steps + 1, n_persons), dtype=np.int16)
    history[0] = initial.locations
    exit_rates = params.rates.sum(axis=2)  # (buckets, locations)
    # cumulative destination law per (bucket, origin); rows with zero exit
    # rate never fire, leave them as zeros
    with np.errstate(invalid="ignore"):
        dest_cum = np.cumsum(
            params.rates / np.where(exit_rates[..., None] == 0.0, 1.0, exit_rates[..., None]),
            axis=2,
        )
    current = initial.locations.astype(np.int16).copy()
    for k in range(n_steps):
        bucket = params.scheme.bucket_of(initial.time + k * tau)
        p_move = exit_rates[bucket][current] * tau
        u = rng.random(n_persons)
        movers = np.nonzero(u < p_move)[0]
        if len(movers) > 0:
            draws = rng.random(len(movers))
            rows = dest_cum[bucket][current[movers]]
            dest = (rows < draws[:, None]).sum(axis=1)
            current[movers] = dest.astype(np.int16)
        history[k + 1] = current
    return MobilityTrace(start_time=initial.time, tau=tau, history=history)


@dataclass
class RateEstimate:
    """estimate_rates output: fitted params plus unidentified rows."""

    params: MobilityParams
    transition_counts: np.ndarray  # (buckets, locations, locations)
    exposure_hours: np.ndarray  # (buckets, locations)
    unobserved_rows: list[tuple[int, int]] = field(default_factory=list)


def estimate_rates(
    visits: list[tuple[int, float, float, int]],
    scheme: BucketScheme,
    n_locations: int,
) -> RateEstimate:
    """Maximum-likelihood movement rates from (person, enter, exit, location) logs.

    Each observed transition increments its (bucket, from, to) count at
    the moment of exit; exposure accumulates person-hours per (bucket,
    location) by splitting visit intervals at hour boundaries.  Rates are
    count / exposure; rows with zero exposure stay zero and are reported
    in unobserved_rows.
    """
    n_buckets = scheme.n_buckets
    counts = np.zeros((n_buckets, n_locations, n_locations), dtype=np.float64)
    exposure = np.zeros((n_buckets, n_locations), dtype=np.float64)

    by_person: dict[int, list[tuple[float, float, int]]] = {}
    for person, enter, exit_t, loc in visits:
        if exit_t < enter:
            raise ValueError("visit exits before it enters")
        if not (0 <= loc < n_locations):
            raise ValueError(f"location {loc} out of range")
        by_person.setdefault(person, []).append((enter, exit_t, loc))

    for person, intervals in by_person.items():
        intervals.sort()
        for (enter, exit_t, loc), (enter2, _exit2, loc2) in zip(
            intervals, intervals[1:]
        ):
            if abs(exit_t - enter2) < 1e-9 and loc2 != loc:
                counts[scheme.bucket_before(exit_t), loc, loc2] += 1.0
        for enter, exit_t, loc in intervals:
            t = enter
            while t < exit_t - 1e-12:
                cell_end = min(np.floor(t) + 1.0, exit_t)
                exposure[scheme.bucket_of(t), loc] += cell_end - t
                t = cell_end

    rates = np.zeros_like(counts)
    unobserved: list[tuple[int, int]] = []
    for b in range(n_buckets):
        for i in range(n_locations):
            if exposure[b, i] > 0.0:
                rates[b, i] = counts[b, i] / exposure[b, i]
                rates[b, i, i] = 0.0
            else:
                unobserved.append((b, i))
    params = MobilityParams(scheme=scheme, rates=rates)
    return RateEstimate(
        params=params,
        transition_counts=counts,
        exposure_hours=exposure,
        unobserved_rows=unobserved,
    )
