"""Per-person susceptible/infectious dynamics on a contact network.

Each person is either susceptible or infectious.  Given a contact
snapshot (who is co-located with whom), a susceptible person p gains
infection hazard c1 per infectious contact plus an outside-pressure term
c3; an infectious person recovers at rate c2.  Stepping uses the same
one-event-per-step discretization as the kinetics core: at step length
tau, event e fires with probability hazard(e) * tau.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import StepTooCoarse


class HealthState(enum.IntEnum):
    SUSCEPTIBLE = 0
    INFECTIOUS = 1


class Transition(enum.IntEnum):
    INFECT = 0
    RECOVER = 1


@dataclass(frozen=True)
class EpidemicParams:
    """Rate constants per unit time: contact infection, recovery, outside infection."""

    c1: float
    c2: float
    c3: float

    def __post_init__(self):
        for name in ("c1", "c2", "c3"):
            if not (getattr(self, name) >= 0.0):
                raise ValueError(f"{name} must be nonnegative")


class ContactSnapshot:
    """Symmetric, self-loop-free co-location adjacency at one time."""

    def __init__(self, time: float, adjacency: list[list[int]] | tuple[tuple[int, ...], ...]):
        self.time = float(time)
        self.adjacency = tuple(tuple(sorted(set(row))) for row in adjacency)
        for p, row in enumerate(self.adjacency):
            for q in row:
                if q == p:
                    raise ValueError(f"self-loop at person {p}")
                if not (0 <= q < len(self.adjacency)):
                    raise ValueError(f"contact id {q} out of range")
                if p not in self.adjacency[q]:
                    raise ValueError(f"asymmetric contact pair ({p}, {q})")

    @classmethod
    def from_groups(cls, time: float, groups: list[list[int]], n_persons: int):
        """Build from co-located groups; persons not listed are isolated."""
        adjacency: list[list[int]] = [[] for _ in range(n_persons)]
        seen: set[int] = set()
        for group in groups:
            members = sorted(set(group))
            for p in members:
                if p in seen:
                    raise ValueError(f"person {p} appears in two groups")
                seen.add(p)
            for p in members:
                adjacency[p] = [q for q in members if q != p]
        return cls(time, adjacency)

    @property
    def n_persons(self) -> int:
        return len(self.adjacency)

    def contacts(self, person: int) -> tuple[int, ...]:
        return self.adjacency[person]


def infectious_contact_count(
    healths: np.ndarray, snapshot: ContactSnapshot, person: int
) -> int:
    return int(sum(1 for q in snapshot.contacts(person) if healths[q] == 1))


def infection_hazard(
    params: EpidemicParams,
    healths: np.ndarray,
    snapshot: ContactSnapshot,
    person: int,
) -> float:
    """Infection hazard of a susceptible person at this snapshot."""
    if healths[person] != HealthState.SUSCEPTIBLE:
        raise ValueError(f"person {person} is not susceptible")
    return params.c1 * infectious_contact_count(healths, snapshot, person) + params.c3


@dataclass(frozen=True)
class PersonEvent:
    """One enabled transition: which person, which flip, at what hazard."""

    person: int
    transition: Transition
    hazard: float


def build_event_table(
    params: EpidemicParams, healths: np.ndarray, snapshot: ContactSnapshot
) -> list[PersonEvent]:
    """Enabled events: recovery per infectious person, infection per
    susceptible person with positive hazard.  Ordered by person id."""
    if len(healths) != snapshot.n_persons:
        raise ValueError("healths length != snapshot person count")
    table: list[PersonEvent] = []
    for p in range(snapshot.n_persons):
        if healths[p] == HealthState.INFECTIOUS:
            table.append(PersonEvent(p, Transition.RECOVER, params.c2))
        else:
            h = infection_hazard(params, healths, snapshot, p)
            if h > 0.0:
                table.append(PersonEvent(p, Transition.INFECT, h))
    return table


def step_epidemic(
    params: EpidemicParams,
    healths: np.ndarray,
    snapshot: ContactSnapshot,
    tau: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, PersonEvent | None]:
    """Advance one step of length tau; at most one health flip fires.

    Event e fires with probability hazard(e) * tau; otherwise the healths
    are returned unchanged.  Raises StepTooCoarse when the total event
    probability exceeds 1.
    """
    table = build_event_table(params, healths, snapshot)
    total = sum(e.hazard for e in table) * tau
    if total > 1.0:
        raise StepTooCoarse(total / tau, 1.0 / tau)
    u = rng.random()
    if u >= total:
        return np.array(healths, copy=True), None
    acc = 0.0
    for event in table:
        acc += event.hazard * tau
        if u < acc:
            out = np.array(healths, copy=True)
            out[event.person] = (
                HealthState.INFECTIOUS
                if event.transition == Transition.INFECT
                else HealthState.SUSCEPTIBLE
            )
            return out, event
    # float round-off on the last cumulative edge: treat as the last event
    event = table[-1]
    out = np.array(healths, copy=True)
    out[event.person] = (
        HealthState.INFECTIOUS
        if event.transition == Transition.INFECT
        else HealthState.SUSCEPTIBLE
    )
    return out, event
