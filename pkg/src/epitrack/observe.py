"""Partial observation channels: location scans and symptom reports.

A volunteer panel is a known subset of persons.  Two channels exist:

* Scans: at scan steps, every location hosting at least one volunteer
  emits the count of Bluetooth-discoverable persons present.  Given that
  x_loc of the x0 persons are at the location and y0 of the x0 are
  discoverable, the observed count y_loc is hypergeometric:

      P(y_loc | x_loc) = C(x_loc, y_loc) C(x0 - x_loc, y0 - y_loc) / C(x0, y0)

  evaluated in log space.

* Reports: once a day each volunteer files, with some compliance
  probability, a report carrying self_sick (noisy view of own health
  through sensitivity/specificity), nearby_sick (noisy indicator that
  some co-located person is infectious), and a 5-bit symptom string.
  Missing reports contribute likelihood one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .epidemic import HealthState

SYMPTOM_NAMES = ("fever", "runny_nose", "coughing", "sore_throat", "nausea")
# emission probability of each symptom bit given infectious / given healthy
SYMPTOM_P_INFECTIOUS = (0.45, 0.8, 0.7, 0.5, 0.15)
SYMPTOM_P_HEALTHY = (0.01, 0.04, 0.03, 0.02, 0.01)


@dataclass(frozen=True)
class VolunteerPanel:
    """Who participates (files reports, triggers scans) and who is discoverable."""

    n_persons: int
    volunteers: tuple[int, ...]
    discoverable: tuple[int, ...]

    def __post_init__(self):
        for name in ("volunteers", "discoverable"):
            ids = getattr(self, name)
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate ids in {name}")
            if any(not (0 <= p < self.n_persons) for p in ids):
                raise ValueError(f"{name} id out of range")

    @property
    def n_discoverable(self) -> int:
        return len(self.discoverable)

    def volunteer_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_persons, dtype=bool)
        mask[list(self.volunteers)] = True
        return mask

    def discoverable_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_persons, dtype=bool)
        mask[list(self.discoverable)] = True
        return mask


@dataclass(frozen=True)
class EmissionNoise:
    """Report noise parameters; all probabilities."""

    sensitivity: float = 0.8
    specificity: float = 0.98
    nearby_sensitivity: float = 0.5
    compliance: float = 0.7

    def __post_init__(self):
        for name in ("sensitivity", "specificity", "nearby_sensitivity", "compliance"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class ScanObservation:
    """Discoverable-device count seen at a location at one scan step."""

    t: int
    location: int
    count: int


@dataclass(frozen=True)
class SymptomReport:
    """One volunteer's daily report."""

    day: int
    person: int
    self_sick: bool
    nearby_sick: bool
    symptoms: str = "00000"

    def __post_init__(self):
        if len(self.symptoms) != 5 or any(c not in "01" for c in self.symptoms):
            raise ValueError("symptoms must be a 5-character bit string")


def _log_choose(n, k):
    n = np.asarray(n, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def bluetooth_log_likelihood(
    y_loc: int | np.ndarray, x_loc: int | np.ndarray, x0: int, y0: int
) -> float | np.ndarray:
    """Log-probability of seeing y_loc discoverable among x_loc present.

    Vectorized over y_loc/x_loc.  Impossible combinations (more seen than
    present, or more seen than exist) give -inf.
    """
    if not (0 <= y0 <= x0):
        raise ValueError("need 0 <= y0 <= x0")
    y = np.asarray(y_loc, dtype=np.int64)
    x = np.asarray(x_loc, dtype=np.int64)
    if np.any(y < 0) or np.any(x < 0) or np.any(x > x0):
        raise ValueError("counts out of range")
    ok = (y <= x) & (y <= y0) & (y0 - y <= x0 - x)
    xs = np.where(ok, x, 0)
    ys = np.where(ok, y, 0)
    ll = (
        _log_choose(xs, ys)
        + _log_choose(x0 - xs, y0 - ys)
        - _log_choose(x0, y0)
    )
    out = np.where(ok, ll, -np.inf)
    return float(out) if out.ndim == 0 else out


def bluetooth_likelihood(y_loc: int, x_loc: int, x0: int, y0: int) -> float:
    """Probability-scale wrapper around bluetooth_log_likelihood."""
    return float(np.exp(bluetooth_log_likelihood(y_loc, x_loc, x0, y0)))


def symptom_log_likelihood(
    report: SymptomReport,
    own_health: int,
    any_infectious_nearby: bool,
    noise: EmissionNoise,
) -> float:
    """Log-likelihood of one report's sick bits given the latent state.

    The symptom string is carried-through survey data and does not enter
    the filter likelihood.
    """
    infectious = own_health == HealthState.INFECTIOUS
    if report.self_sick:
        p_self = noise.sensitivity if infectious else 1.0 - noise.specificity
    else:
        p_self = 1.0 - noise.sensitivity if infectious else noise.specificity
    if report.nearby_sick:
        p_nearby = noise.nearby_sensitivity if any_infectious_nearby else 0.0
    else:
        p_nearby = 1.0 - noise.nearby_sensitivity if any_infectious_nearby else 1.0
    with np.errstate(divide="ignore"):
        return float(np.log(p_self) + np.log(p_nearby))


def observation_log_likelihood(
    scans: list[ScanObservation],
    reports: list[SymptomReport],
    healths: np.ndarray,
    locations: np.ndarray,
    panel: VolunteerPanel,
    noise: EmissionNoise,
) -> float:
    """Joint log-likelihood of one step's observations given a world state.

    Sum of the scan terms and the report terms; empty inputs give 0.
    """
    total = 0.0
    x0 = len(healths)
    y0 = panel.n_discoverable
    for scan in scans:
        x_loc = int((locations == scan.location).sum())
        total += bluetooth_log_likelihood(scan.count, x_loc, x0, y0)
        if total == -np.inf:
            return total
    idx = np.arange(len(healths))
    for report in reports:
        p = report.person
        nearby = bool(
            np.any((locations == locations[p]) & (healths == 1) & (idx != p))
        )
        total += symptom_log_likelihood(report, int(healths[p]), nearby, noise)
        if total == -np.inf:
            return total
    return total


@dataclass
class ObservationLog:
    """Everything the inference side is allowed to see."""

    n_steps: int
    steps_per_day: int
    scans: list[ScanObservation] = field(default_factory=list)
    reports: list[SymptomReport] = field(default_factory=list)

    def __post_init__(self):
        self._scans_by_step: dict[int, list[ScanObservation]] = {}
        for s in self.scans:
            self._scans_by_step.setdefault(s.t, []).append(s)
        self._reports_by_day: dict[int, list[SymptomReport]] = {}
        for r in self.reports:
            self._reports_by_day.setdefault(r.day, []).append(r)

    def scans_at(self, t: int) -> list[ScanObservation]:
        return self._scans_by_step.get(t, [])

    def reports_at_step(self, t: int) -> list[SymptomReport]:
        if t <= 0 or t % self.steps_per_day != 0:
            return []
        return self._reports_by_day.get(t // self.steps_per_day, [])

    def has_observations_at(self, t: int) -> bool:
        return bool(self.scans_at(t)) or bool(self.reports_at_step(t))


def _draw_symptoms(infectious: bool, rng: np.random.Generator) -> str:
    probs = SYMPTOM_P_INFECTIOUS if infectious else SYMPTOM_P_HEALTHY
    bits = rng.random(5) < np.array(probs)
    return "".join("1" if b else "0" for b in bits)


def synthesize_observations(
    healths_history: np.ndarray,
    locations_history: np.ndarray,
    panel: VolunteerPanel,
    noise: EmissionNoise,
    steps_per_day: int,
    rng: np.random.Generator,
    scan_every: int = 1,
) -> ObservationLog:
    """Generate the observation log a study would have recorded.

    healths_history and locations_history have shape (n_steps + 1,
    n_persons); row t is the state after step t.  Scans fire at steps
    t = scan_every, 2*scan_every, ... for every location hosting a
    volunteer; the count is the number of discoverable persons present.
    Reports fire at end-of-day steps with probability compliance.
    """
    n_steps = healths_history.shape[0] - 1
    vol = list(panel.volunteers)
    disc_mask = panel.discoverable_mask()
    scans: list[ScanObservation] = []
    reports: list[SymptomReport] = []
    for t in range(scan_every, n_steps + 1, scan_every):
        locs = locations_history[t]
        for loc in sorted(set(int(locs[p]) for p in vol)):
            count = int((disc_mask & (locs == loc)).sum())
            scans.append(ScanObservation(t=t, location=loc, count=count))
    for day in range(1, n_steps // steps_per_day + 1):
        t = day * steps_per_day
        healths = healths_history[t]
        locs = locations_history[t]
        for p in vol:
            if rng.random() >= noise.compliance:
                continue
            infectious = healths[p] == HealthState.INFECTIOUS
            if infectious:
                self_sick = rng.random() < noise.sensitivity
            else:
                self_sick = rng.random() < 1.0 - noise.specificity
            others_infectious = bool(
                np.any((locs == locs[p]) & (healths == 1) & (np.arange(len(locs)) != p))
            )
            nearby_sick = (
                rng.random() < noise.nearby_sensitivity if others_infectious else False
            )
            reports.append(
                SymptomReport(
                    day=day,
                    person=int(p),
                    self_sick=bool(self_sick),
                    nearby_sick=bool(nearby_sick),
                    symptoms=_draw_symptoms(bool(infectious), rng),
                )
            )
    return ObservationLog(
        n_steps=n_steps, steps_per_day=steps_per_day, scans=scans, reports=reports
    )
