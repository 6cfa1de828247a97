"""Ranking metrics, statistical tests, and model-free baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConstantTruth, NoConsecutivePairs, NoPositives
from .observe import SymptomReport

NO_SYMPTOMS = "00000"


@dataclass(frozen=True)
class PRCurve:
    """Precision-recall sweep over distinct score thresholds, descending.

    Points are (recall, precision) pairs at each threshold; tied scores
    are processed as one threshold.  average_precision is the step-rule
    area: sum over points of (recall gain) * precision.
    """

    thresholds: np.ndarray
    recalls: np.ndarray
    precisions: np.ndarray
    average_precision: float

    @property
    def n_thresholds(self) -> int:
        return len(self.thresholds)


def precision_recall(scores, labels) -> PRCurve:
    """PR curve and average precision of a scored binary ranking."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("cannot rank with no positive labels")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp = np.cumsum(labels[order])
    # last index of each tied-score block
    ends = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    ends = np.append(ends, len(scores) - 1)
    precisions = tp[ends] / (ends + 1.0)
    recalls = tp[ends] / n_pos
    ap = float(np.sum(np.diff(recalls, prepend=0.0) * precisions))
    return PRCurve(
        thresholds=sorted_scores[ends],
        recalls=recalls,
        precisions=precisions,
        average_precision=ap,
    )


def r_squared(predicted, truth) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot.

    1 for a perfect fit, 0 for the mean predictor, negative when worse
    than the mean.
    """
    f = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if f.shape != y.shape or f.ndim != 1 or len(y) < 2:
        raise ValueError("need two equal-length series of at least 2 points")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantTruth("truth series is constant; R-squared is undefined")
    ss_res = float(np.sum((f - y) ** 2))
    return 1.0 - ss_res / ss_tot


def daily_contact_pairs(
    locations_history: np.ndarray, steps_per_day: int
) -> list[np.ndarray]:
    """Per-day co-location pairs (i < j) from a location trajectory.

    A pair counts as co-located on a day if the two persons share a
    location at any step of that day; day d covers steps d*steps_per_day
    + 1 .. (d+1)*steps_per_day, so partial trailing days are dropped.
    """
    n_steps = locations_history.shape[0] - 1
    n_days = n_steps // steps_per_day
    out = []
    for d in range(n_days):
        seen: set[tuple[int, int]] = set()
        for t in range(d * steps_per_day + 1, (d + 1) * steps_per_day + 1):
            loc = locations_history[t]
            order = np.argsort(loc, kind="stable")
            sorted_loc = loc[order]
            start = 0
            for k in range(1, len(loc) + 1):
                if k == len(loc) or sorted_loc[k] != sorted_loc[start]:
                    group = np.sort(order[start:k])
                    for a in range(len(group)):
                        for b in range(a + 1, len(group)):
                            seen.add((int(group[a]), int(group[b])))
                    start = k
        out.append(
            np.array(sorted(seen), dtype=np.int64).reshape(-1, 2)
        )
    return out


@dataclass(frozen=True)
class PermutationResult:
    statistic: int
    p_value: float
    n_permutations: int


def same_day_symptomatic_pairs(
    pairs_by_day: list[np.ndarray], labels: np.ndarray
) -> int:
    """Count (pair, day) incidences where both ends are symptomatic."""
    total = 0
    for d, pairs in enumerate(pairs_by_day):
        if len(pairs):
            total += int((labels[d, pairs[:, 0]] & labels[d, pairs[:, 1]]).sum())
    return total


def permutation_test(
    pairs_by_day: list[np.ndarray],
    labels: np.ndarray,
    n_perm: int,
    rng: np.random.Generator,
) -> PermutationResult:
    """Shuffle the person-to-node mapping and rank the observed statistic.

    The statistic is the same-day symptomatic co-located pair count; one
    permutation of person identities is applied across all days at once.
    p = (1 + #{permuted >= observed}) / (1 + n_perm), so p is always in
    (0, 1] and exact under exchangeability.
    """
    if n_perm < 100:
        raise ValueError("need at least 100 permutations")
    labels = np.asarray(labels, dtype=bool)
    if labels.ndim != 2 or labels.shape[0] != len(pairs_by_day):
        raise ValueError("labels must be (days, persons) matching the network")
    n_persons = labels.shape[1]

    day_idx = np.concatenate(
        [np.full(len(p), d, dtype=np.int64) for d, p in enumerate(pairs_by_day)]
    ) if pairs_by_day else np.zeros(0, dtype=np.int64)
    left = np.concatenate([p[:, 0] for p in pairs_by_day]) if pairs_by_day else day_idx
    right = np.concatenate([p[:, 1] for p in pairs_by_day]) if pairs_by_day else day_idx

    observed = int((labels[day_idx, left] & labels[day_idx, right]).sum())
    at_least = 0
    for _ in range(n_perm):
        perm = rng.permutation(n_persons)
        stat = int((labels[day_idx, perm[left]] & labels[day_idx, perm[right]]).sum())
        if stat >= observed:
            at_least += 1
    return PermutationResult(
        statistic=observed,
        p_value=(1 + at_least) / (1 + n_perm),
        n_permutations=n_perm,
    )


@dataclass(frozen=True)
class ExponentialFit:
    mean: float
    ks_statistic: float
    ks_p_value: float


def exponential_fit(durations) -> ExponentialFit:
    """Maximum-likelihood exponential fit plus a KS goodness test.

    The MLE of the mean is the sample mean; the KS test compares the
    sample against Exponential(1/mean).
    """
    durations = np.asarray(durations, dtype=np.float64)
    if durations.ndim != 1 or len(durations) < 5:
        raise ValueError("need at least five durations")
    if np.any(durations <= 0.0):
        raise ValueError("durations must be positive")
    mean = float(durations.mean())
    ks = stats.kstest(durations, "expon", args=(0.0, mean))
    return ExponentialFit(
        mean=mean, ks_statistic=float(ks.statistic), ks_p_value=float(ks.pvalue)
    )


@dataclass(frozen=True)
class SymptomMatrix:
    """Day-to-day transition structure of 5-bit symptom strings.

    states are ordered by mean first-occurrence time over episodes
    simulated from the matrix itself (an episode starts at a uniformly
    chosen symptomatic state and walks until no symptoms remain); rows
    and columns of matrix follow that order.
    """

    states: list[str]
    matrix: np.ndarray
    mean_first_occurrence: np.ndarray  # days; inf for states never reached


def _first_occurrence_order(
    states: list[str], matrix: np.ndarray, n_episodes: int, rng: np.random.Generator,
    max_episode_days: int = 100,
) -> np.ndarray:
    index = {s: k for k, s in enumerate(states)}
    sick = [index[s] for s in states if s != NO_SYMPTOMS]
    totals = np.zeros(len(states))
    visits = np.zeros(len(states))
    if not sick:
        return totals
    cdf = np.cumsum(matrix, axis=1)
    for _ in range(n_episodes):
        state = sick[int(rng.integers(len(sick)))]
        seen = set()
        for day in range(max_episode_days + 1):
            if state not in seen:
                seen.add(state)
                totals[state] += day
                visits[state] += 1
            if states[state] == NO_SYMPTOMS:
                break
            state = int(np.searchsorted(cdf[state], rng.random(), side="right"))
    with np.errstate(invalid="ignore"):
        means = totals / visits
    means[visits == 0] = np.inf
    return means


def symptom_transition_matrix(
    reports: list[SymptomReport],
    n_episodes: int = 10_000,
    rng: np.random.Generator | None = None,
) -> SymptomMatrix:
    """Tabulate current-day to next-day symptom-string transitions.

    Only persons reporting on two consecutive days contribute.  Rows
    with observed successors are the empirical next-day distributions;
    observed states with no outgoing pair get a uniform row so every
    row is a proper distribution.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    by_person: dict[int, dict[int, str]] = {}
    for r in reports:
        by_person.setdefault(r.person, {})[r.day] = r.symptoms
    pairs: list[tuple[str, str]] = []
    for days in by_person.values():
        for day, state in days.items():
            nxt = days.get(day + 1)
            if nxt is not None:
                pairs.append((state, nxt))
    if not pairs:
        raise NoConsecutivePairs("no volunteer reported on two consecutive days")

    states = sorted({s for pair in pairs for s in pair})
    index = {s: k for k, s in enumerate(states)}
    counts = np.zeros((len(states), len(states)))
    for cur, nxt in pairs:
        counts[index[cur], index[nxt]] += 1.0
    row_sums = counts.sum(axis=1, keepdims=True)
    uniform = np.full(len(states), 1.0 / len(states))
    matrix = np.where(row_sums > 0.0, counts / np.where(row_sums > 0, row_sums, 1.0),
                      uniform)

    means = _first_occurrence_order(states, matrix, n_episodes, rng)
    order = sorted(range(len(states)), key=lambda k: (means[k], states[k]))
    return SymptomMatrix(
        states=[states[k] for k in order],
        matrix=matrix[np.ix_(order, order)],
        mean_first_occurrence=means[order],
    )


def scaling_baseline(
    reports: list[SymptomReport], n_days: int, population: int
) -> np.ndarray:
    """Respondent symptom fraction scaled to the whole population.

    estimate[d] = (self-sick respondents on day d / respondents on day
    d) * population; days with no respondents carry the previous
    estimate forward, starting from 0.  The caller aligns estimate[d]
    as the prediction for day d + horizon.
    """
    respondents = np.zeros(n_days)
    sick = np.zeros(n_days)
    for r in reports:
        if 0 <= r.day < n_days:
            respondents[r.day] += 1
            sick[r.day] += bool(r.self_sick)
    estimate = np.zeros(n_days)
    last = 0.0
    for d in range(n_days):
        if respondents[d] > 0:
            last = sick[d] / respondents[d] * population
        estimate[d] = last
    return estimate


def persistence_baseline(truth: np.ndarray, horizon_days: int) -> np.ndarray:
    """Model-free comparator: predict day d as the truth at d - horizon.

    Returns predictions aligned to days horizon_days .. len(truth) - 1.
    Not part of the reference pipeline; kept as a second baseline.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if not (0 < horizon_days < len(truth)):
        raise ValueError("horizon must be positive and shorter than the series")
    return truth[:-horizon_days]
