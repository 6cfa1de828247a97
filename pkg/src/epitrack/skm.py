"""Stochastic kinetic models over integer populations.

A model is a set of production events on counted species.  Each event v
carries reactant and product stoichiometries (alpha, beta) and a rate
constant c; its hazard at population vector x is

    h_v(x) = c_v * prod_m x_m ** alpha_vm

with the literal power form (not falling factorials), so a second-order
event at x = 4 has combination count 16.  The module provides exact
event-driven simulation, the continuous-time path log-density, and the
step-discretized chain in which at most one event fires per step of
length tau with P(v) = h_v(x) * tau and gamma = 1/tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StepTooCoarse

NULL_EVENT = -1


@dataclass(frozen=True)
class Species:
    """A counted population."""

    name: str


@dataclass(frozen=True)
class Event:
    """One production channel: stoichiometries per species plus a rate constant."""

    reactants: tuple[int, ...]
    products: tuple[int, ...]
    rate: float

    def __post_init__(self):
        if len(self.reactants) != len(self.products):
            raise ValueError("reactant and product vectors differ in length")
        if any(a < 0 for a in self.reactants) or any(b < 0 for b in self.products):
            raise ValueError("stoichiometries must be nonnegative")
        if not (self.rate >= 0.0):
            raise ValueError(f"rate constant must be nonnegative, got {self.rate}")

    @property
    def delta(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.reactants, self.products))


class ReactionSystem:
    """Species plus events, with cached stoichiometry matrices."""

    def __init__(self, species: list[Species] | list[str], events: list[Event]):
        self.species = tuple(
            s if isinstance(s, Species) else Species(s) for s in species
        )
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ValueError("duplicate species names")
        for ev in events:
            if len(ev.reactants) != len(self.species):
                raise ValueError("event stoichiometry length != species count")
        self.events = tuple(events)
        self.alpha = np.array([ev.reactants for ev in events], dtype=np.int64)
        self.beta = np.array([ev.products for ev in events], dtype=np.int64)
        self.alpha = self.alpha.reshape(len(events), len(self.species))
        self.beta = self.beta.reshape(len(events), len(self.species))
        self.delta = self.beta - self.alpha
        self.rates = np.array([ev.rate for ev in events], dtype=np.float64)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_events(self) -> int:
        return len(self.events)

    def species_index(self, name: str) -> int:
        for i, s in enumerate(self.species):
            if s.name == name:
                return i
        raise KeyError(name)

    def exposures(self, x: np.ndarray) -> np.ndarray:
        """Combination counts g_v(x) = prod_m x_m ** alpha_vm, one per event.

        The power form is literal (x=4 with alpha=2 gives 16), but an event
        whose reactant demand exceeds the current population is infeasible
        and gets count 0, so populations can never be driven negative.
        """
        xi = np.asarray(x, dtype=np.int64)
        g = np.prod(xi[None, :].astype(np.float64) ** self.alpha, axis=1)
        feasible = np.all(xi[None, :] >= self.alpha, axis=1)
        return np.where(feasible, g, 0.0)

    def hazards(self, x: np.ndarray) -> np.ndarray:
        """Event hazards h_v(x) = c_v * g_v(x)."""
        return self.rates * self.exposures(x)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ReactionSystem)
            and self.species == other.species
            and self.events == other.events
        )

    def __repr__(self) -> str:
        return (
            f"ReactionSystem({[s.name for s in self.species]}, "
            f"{self.n_events} events)"
        )


def hazard(system: ReactionSystem, event_index: int, x: np.ndarray) -> float:
    """Hazard of one event at population vector x."""
    return float(system.hazards(x)[event_index])


def total_hazard(system: ReactionSystem, x: np.ndarray) -> float:
    """Sum of all event hazards at x; zero marks an absorbing state."""
    return float(system.hazards(x).sum())


@dataclass(frozen=True)
class TrajectoryStep:
    """One recorded step: time, fired event index (NULL_EVENT for none), state after."""

    time: float
    event: int
    state: np.ndarray


@dataclass
class Trajectory:
    """An event path: initial state plus ordered steps up to a horizon.

    Continuous-mode steps have strictly increasing times and end with a
    NULL_EVENT marker at the horizon when the last event precedes it.
    Discrete-mode steps sit at k * tau and include NULL_EVENT steps where
    nothing fired.
    """

    initial: np.ndarray
    steps: list[TrajectoryStep] = field(default_factory=list)
    horizon: float = 0.0
    tau: float | None = None  # None for continuous mode

    @property
    def final_state(self) -> np.ndarray:
        return self.steps[-1].state if self.steps else self.initial

    @property
    def n_events(self) -> int:
        return sum(1 for s in self.steps if s.event != NULL_EVENT)

    def validate(self, system: ReactionSystem) -> None:
        """Check internal consistency; raises ValueError on violation."""
        x = np.asarray(self.initial)
        t = 0.0
        for step in self.steps:
            if self.tau is None:
                if step.time <= t and not (t == 0.0 and step.time == 0.0):
                    raise ValueError("continuous-mode times must strictly increase")
            else:
                k = round(step.time / self.tau)
                if not math.isclose(step.time, k * self.tau, rel_tol=0, abs_tol=1e-9):
                    raise ValueError("discrete-mode times must sit at multiples of tau")
            if step.event == NULL_EVENT:
                expected = x
            else:
                expected = x + system.delta[step.event]
            if not np.array_equal(step.state, expected):
                raise ValueError("state does not equal previous state plus delta")
            if np.any(step.state < 0):
                raise ValueError("negative population")
            x = step.state
            t = step.time
        if t > self.horizon + 1e-9:
            raise ValueError("step beyond horizon")


def simulate_gillespie(
    system: ReactionSystem,
    x0: np.ndarray,
    horizon: float,
    rng: np.random.Generator,
) -> Trajectory:
    """Exact event-driven simulation up to the horizon.

    Holding times are exponential with rate equal to the total hazard and
    the fired event is chosen proportionally to its hazard.  An absorbing
    state ends the event sequence early; the final state is recorded at
    the horizon either way.
    """
    x = np.array(x0, dtype=np.int64)
    if np.any(x < 0):
        raise ValueError("negative initial population")
    traj = Trajectory(initial=x.copy(), horizon=float(horizon), tau=None)
    t = 0.0
    while True:
        h = system.hazards(x)
        h0 = float(h.sum())
        if h0 == 0.0:
            break
        t_next = t + rng.exponential(1.0 / h0)
        if t_next > horizon:
            break
        cum = np.cumsum(h)
        v = int(np.searchsorted(cum, rng.random() * h0, side="right"))
        v = min(v, system.n_events - 1)
        x = x + system.delta[v]
        t = t_next
        traj.steps.append(TrajectoryStep(time=t, event=v, state=x.copy()))
    if horizon > t:
        traj.steps.append(
            TrajectoryStep(time=float(horizon), event=NULL_EVENT, state=x.copy())
        )
    return traj


def path_log_likelihood(system: ReactionSystem, trajectory: Trajectory) -> float:
    """Log-density of a continuous-time event path under the model.

    Sums log-hazards of fired events and subtracts the survival integral
    of the total hazard over every inter-event interval, including the
    stretch from the last recorded step to the horizon.  A recorded event
    that is impossible at its predecessor state gives -inf.
    """
    x = np.asarray(trajectory.initial, dtype=np.int64)
    t = 0.0
    ll = 0.0
    for step in trajectory.steps:
        h = system.hazards(x)
        ll -= float(h.sum()) * (step.time - t)
        if step.event != NULL_EVENT:
            hv = float(h[step.event])
            if hv <= 0.0:
                return -math.inf
            ll += math.log(hv)
        x = np.asarray(step.state, dtype=np.int64)
        t = step.time
    ll -= total_hazard(system, x) * (trajectory.horizon - t)
    return ll


def discrete_step_distribution(
    system: ReactionSystem, x: np.ndarray, gamma: float
) -> np.ndarray:
    """Per-step event distribution under uniformization at rate gamma.

    Returns a vector of length n_events + 1 whose first entry is the
    no-event probability 1 - h_0/gamma and whose entry v+1 is h_v/gamma.
    Raises StepTooCoarse when the total hazard exceeds gamma.
    """
    h = system.hazards(x)
    h0 = float(h.sum())
    if h0 > gamma:
        raise StepTooCoarse(h0, gamma)
    p = np.empty(system.n_events + 1, dtype=np.float64)
    p[0] = (gamma - h0) / gamma
    p[1:] = h / gamma
    return p


def simulate_discrete(
    system: ReactionSystem,
    x0: np.ndarray,
    tau: float,
    n_steps: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Simulate the tau-discretized chain: at most one event per step.

    Uses gamma = 1/tau, so step k fires event v with probability
    h_v(x_{k-1}) * tau and records a NULL_EVENT step otherwise.
    """
    x = np.array(x0, dtype=np.int64)
    if np.any(x < 0):
        raise ValueError("negative initial population")
    gamma = 1.0 / tau
    traj = Trajectory(
        initial=x.copy(), horizon=float(n_steps * tau), tau=float(tau)
    )
    for k in range(1, n_steps + 1):
        p = discrete_step_distribution(system, x, gamma)
        cum = np.cumsum(p)
        v = int(np.searchsorted(cum, rng.random(), side="right"))
        v = min(v, system.n_events)
        if v == 0:
            traj.steps.append(
                TrajectoryStep(time=k * tau, event=NULL_EVENT, state=x.copy())
            )
        else:
            x = x + system.delta[v - 1]
            traj.steps.append(TrajectoryStep(time=k * tau, event=v - 1, state=x.copy()))
    return traj


def enumerate_reachable(
    system: ReactionSystem, x0: np.ndarray, max_states: int = 4096
) -> list[tuple[int, ...]]:
    """Breadth-first enumeration of states reachable through positive-hazard events."""
    start = tuple(int(v) for v in np.asarray(x0))
    seen = {start}
    order = [start]
    queue = [start]
    while queue:
        state = queue.pop()
        h = system.hazards(np.array(state))
        for v in range(system.n_events):
            if h[v] <= 0.0:
                continue
            succ = tuple(int(c) for c in np.array(state) + system.delta[v])
            if any(c < 0 for c in succ):
                continue
            if succ not in seen:
                if len(seen) >= max_states:
                    raise ValueError(
                        f"reachable state space exceeds {max_states} states"
                    )
                seen.add(succ)
                order.append(succ)
                queue.append(succ)
    return order


def _discrete_transition_matrix(
    system: ReactionSystem, states: list[tuple[int, ...]], tau: float
) -> np.ndarray:
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    T = np.zeros((n, n), dtype=np.float64)
    gamma = 1.0 / tau
    for i, state in enumerate(states):
        p = discrete_step_distribution(system, np.array(state), gamma)
        T[i, i] += p[0]
        for v in range(system.n_events):
            if p[v + 1] == 0.0:
                continue
            succ = tuple(int(c) for c in np.array(state) + system.delta[v])
            T[i, index[succ]] += p[v + 1]
    return T


def discrete_distribution_after(
    system: ReactionSystem,
    x0: np.ndarray,
    tau: float,
    n_steps: int,
    max_states: int = 4096,
) -> dict[tuple[int, ...], float]:
    """Exact state distribution of the discretized chain after n_steps steps.

    Only valid for systems whose reachable state space fits in max_states;
    intended for small models and for checking simulators against each other.
    """
    states = enumerate_reachable(system, x0, max_states)
    T = _discrete_transition_matrix(system, states, tau)
    pi = np.zeros(len(states))
    pi[0] = 1.0
    for _ in range(n_steps):
        pi = pi @ T
    return {s: float(p) for s, p in zip(states, pi)}


def simulate_discrete_ensemble(
    system: ReactionSystem,
    x0: np.ndarray,
    tau: float,
    n_steps: int,
    n_runs: int,
    rng: np.random.Generator,
    max_states: int = 4096,
) -> dict[tuple[int, ...], int]:
    """Final-state counts of n_runs independent discretized chains.

    Equivalent in distribution to n_runs simulate_discrete calls, but runs
    sharing a state are advanced together with one multinomial split per
    occupied state per step.
    """
    states = enumerate_reachable(system, x0, max_states)
    T = _discrete_transition_matrix(system, states, tau)
    counts = np.zeros(len(states), dtype=np.int64)
    counts[0] = n_runs
    for _ in range(n_steps):
        nxt = np.zeros_like(counts)
        for i in np.nonzero(counts)[0]:
            nxt += rng.multinomial(counts[i], T[i])
        counts = nxt
    return {s: int(c) for s, c in zip(states, counts) if c > 0}
