"""File formats for run artifacts.

Every tabular artifact is a comma-delimited CSV with a mandatory header
row, UTF-8 text, and "\n" line endings.  Floats are written with repr()
so they round-trip exactly; booleans are written as 1/0.  Group
snapshots and test results are JSON Lines.  All writers go through an
atomic replace so a crashed run never leaves a half-written file.

Readers are strict: a wrong header, a short row, or an unparseable cell
raises DataError naming the file and 1-based line number.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io as _stdio
import json
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import DataError
from .observe import ScanObservation, SymptomReport
from .skm import NULL_EVENT, ReactionSystem, Trajectory, TrajectoryStep

TOOL_VERSION = "0.1.0"


def format_value(value: Any) -> str:
    """One CSV cell.  bool before int: bool is an int subclass."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    _atomic_write_text(path, buf.getvalue())


def _read_rows(path: str, header: Sequence[str]) -> list[tuple[int, list[str]]]:
    """(line_number, cells) for each data row, after checking the header."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}:1: empty file, expected header "
                            f"{','.join(header)}") from None
        if first != list(header):
            raise DataError(
                f"{path}:1: bad header {','.join(first)!r}, "
                f"expected {','.join(header)!r}"
            )
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            out.append((lineno, row))
        return out


def _parse_int(path: str, lineno: int, name: str, cell: str) -> int:
    try:
        return int(cell)
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad integer for {name}: {cell!r}") from None


def _parse_float(path: str, lineno: int, name: str, cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad number for {name}: {cell!r}") from None


def _parse_bool(path: str, lineno: int, name: str, cell: str) -> bool:
    if cell == "1":
        return True
    if cell == "0":
        return False
    raise DataError(f"{path}:{lineno}: bad flag for {name}: {cell!r}, expected 0 or 1")


# -- reaction trajectories ---------------------------------------------------

TRAJECTORY_PREFIX = ("step", "time", "event")


def write_trajectory_csv(path: str, trajectory: Trajectory, system: ReactionSystem) -> None:
    """step,time,event,<one column per species>.  Row 0 is the initial
    state with event -1; later events use their index in the system."""
    header = list(TRAJECTORY_PREFIX) + [s.name for s in system.species]
    rows: list[list[Any]] = [[0, 0.0, NULL_EVENT, *trajectory.initial.tolist()]]
    for k, step in enumerate(trajectory.steps, start=1):
        rows.append([k, float(step.time), int(step.event), *step.state.tolist()])
    write_csv(path, header, rows)


def read_trajectory_csv(path: str) -> tuple[list[str], Trajectory]:
    """Returns (species names, trajectory).  The horizon is the last
    recorded time."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}:1: empty file") from None
        if tuple(header[:3]) != TRAJECTORY_PREFIX or len(header) < 4:
            raise DataError(
                f"{path}:1: expected header step,time,event,<species...>, "
                f"got {','.join(header)!r}"
            )
        names = header[3:]
        raw = list(enumerate(reader, start=2))
    if not raw:
        raise DataError(f"{path}: no state rows")
    initial: np.ndarray | None = None
    steps: list[TrajectoryStep] = []
    horizon = 0.0
    for lineno, row in raw:
        if len(row) != len(header):
            raise DataError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
            )
        k = _parse_int(path, lineno, "step", row[0])
        t = _parse_float(path, lineno, "time", row[1])
        ev = _parse_int(path, lineno, "event", row[2])
        state = np.array(
            [_parse_int(path, lineno, name, cell) for name, cell in zip(names, row[3:])],
            dtype=np.int64,
        )
        if k == 0:
            initial = state
        else:
            steps.append(TrajectoryStep(time=t, event=ev, state=state))
        horizon = t
    if initial is None:
        raise DataError(f"{path}: missing step 0 row")
    return names, Trajectory(initial=initial, steps=steps, horizon=horizon)


# -- health trajectories -----------------------------------------------------

HEALTH_HEADER = ("step", "person", "state")


def write_health_csv(path: str, healths_history: np.ndarray) -> None:
    """step,person,state; transition-coded.  Step 0 carries one row per
    person; later rows appear only when a person's state changes."""
    n_steps = healths_history.shape[0] - 1
    n_persons = healths_history.shape[1]
    rows: list[tuple[int, int, int]] = [
        (0, p, int(healths_history[0, p])) for p in range(n_persons)
    ]
    for t in range(1, n_steps + 1):
        changed = np.flatnonzero(healths_history[t] != healths_history[t - 1])
        for p in changed:
            rows.append((t, int(p), int(healths_history[t, p])))
    write_csv(path, HEALTH_HEADER, rows)


def read_health_csv(path: str, n_steps: int | None = None) -> np.ndarray:
    """Dense (n_steps + 1, n_persons) int8 array.  Without an explicit
    n_steps the last recorded transition sets the length."""
    rows = _read_rows(path, HEALTH_HEADER)
    parsed = []
    for lineno, row in rows:
        t = _parse_int(path, lineno, "step", row[0])
        p = _parse_int(path, lineno, "person", row[1])
        s = _parse_int(path, lineno, "state", row[2])
        if t < 0 or p < 0:
            raise DataError(f"{path}:{lineno}: negative step or person")
        parsed.append((t, p, s))
    initial = [(p, s) for t, p, s in parsed if t == 0]
    if not initial:
        raise DataError(f"{path}: no step 0 rows")
    n_persons = max(p for p, _ in initial) + 1
    if len(initial) != n_persons:
        raise DataError(f"{path}: step 0 must list every person exactly once")
    last = max(t for t, _, _ in parsed)
    if n_steps is None:
        n_steps = last
    elif last > n_steps:
        raise DataError(f"{path}: transition at step {last} beyond n_steps={n_steps}")
    out = np.zeros((n_steps + 1, n_persons), dtype=np.int8)
    for p, s in initial:
        out[0, p] = s
    deltas = sorted((t, p, s) for t, p, s in parsed if t > 0)
    cursor = 0
    for t in range(1, n_steps + 1):
        out[t] = out[t - 1]
        while cursor < len(deltas) and deltas[cursor][0] == t:
            _, p, s = deltas[cursor]
            if p >= n_persons:
                raise DataError(f"{path}: person {p} missing from step 0 rows")
            out[t, p] = s
            cursor += 1
    return out


# -- visit logs --------------------------------------------------------------

VISITS_HEADER = ("person", "enter_time", "exit_time", "location")


def write_visits_csv(path: str, visits: Iterable[tuple[int, float, float, int]]) -> None:
    write_csv(path, VISITS_HEADER, visits)


def read_visits_csv(path: str) -> list[tuple[int, float, float, int]]:
    out = []
    for lineno, row in _read_rows(path, VISITS_HEADER):
        person = _parse_int(path, lineno, "person", row[0])
        enter = _parse_float(path, lineno, "enter_time", row[1])
        exit_ = _parse_float(path, lineno, "exit_time", row[2])
        loc = _parse_int(path, lineno, "location", row[3])
        if exit_ < enter:
            raise DataError(f"{path}:{lineno}: exit_time before enter_time")
        out.append((person, enter, exit_, loc))
    return out


# -- co-location snapshots ---------------------------------------------------


def write_snapshots_jsonl(path: str, groups_by_step: Iterable[tuple[int, list[list[int]]]]) -> None:
    """One record per step: {"t": step, "groups": [[person ids], ...]}.
    Only groups of two or more are meaningful; singletons are dropped."""
    lines = []
    for t, groups in groups_by_step:
        kept = [sorted(int(p) for p in g) for g in groups if len(g) >= 2]
        lines.append(json.dumps({"t": int(t), "groups": kept}, separators=(",", ":")))
    _atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_snapshots_jsonl(path: str) -> list[tuple[int, list[list[int]]]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc}") from exc
    out = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON: {exc.msg}") from None
            if not isinstance(rec, dict) or "t" not in rec or "groups" not in rec:
                raise DataError(f"{path}:{lineno}: record needs keys t and groups")
            try:
                t = int(rec["t"])
                groups = [[int(p) for p in g] for g in rec["groups"]]
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed snapshot record") from None
            out.append((t, groups))
    return out


# -- observations ------------------------------------------------------------

SCANS_HEADER = ("t", "location", "count")
REPORTS_HEADER = ("day", "person", "self_sick", "nearby_sick", "symptoms")


def write_scans_csv(path: str, scans: Iterable[ScanObservation]) -> None:
    write_csv(path, SCANS_HEADER, ((s.t, s.location, s.count) for s in scans))


def read_scans_csv(path: str) -> list[ScanObservation]:
    out = []
    for lineno, row in _read_rows(path, SCANS_HEADER):
        t = _parse_int(path, lineno, "t", row[0])
        loc = _parse_int(path, lineno, "location", row[1])
        count = _parse_int(path, lineno, "count", row[2])
        if t < 0 or loc < 0 or count < 0:
            raise DataError(f"{path}:{lineno}: scan fields must be nonnegative")
        out.append(ScanObservation(t=t, location=loc, count=count))
    return out


def write_reports_csv(path: str, reports: Iterable[SymptomReport]) -> None:
    """A person with no report on a day simply has no row; absence is the
    missingness signal, never a sentinel value."""
    write_csv(
        path,
        REPORTS_HEADER,
        (
            (r.day, r.person, r.self_sick, r.nearby_sick, r.symptoms)
            for r in reports
        ),
    )


def read_reports_csv(path: str) -> list[SymptomReport]:
    out = []
    for lineno, row in _read_rows(path, REPORTS_HEADER):
        day = _parse_int(path, lineno, "day", row[0])
        person = _parse_int(path, lineno, "person", row[1])
        self_sick = _parse_bool(path, lineno, "self_sick", row[2])
        nearby = _parse_bool(path, lineno, "nearby_sick", row[3])
        try:
            out.append(
                SymptomReport(
                    day=day,
                    person=person,
                    self_sick=self_sick,
                    nearby_sick=nearby,
                    symptoms=row[4],
                )
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


# -- inference outputs -------------------------------------------------------

MARGINALS_HEADER = ("t", "person", "p_infectious")


def write_marginals_csv(path: str, marginals: np.ndarray) -> None:
    """Dense (n_steps + 1, n_persons) posterior P(infectious)."""
    n_rows, n_persons = marginals.shape

    def rows():
        for t in range(n_rows):
            for p in range(n_persons):
                yield (t, p, float(marginals[t, p]))

    write_csv(path, MARGINALS_HEADER, rows())


def read_marginals_csv(path: str) -> np.ndarray:
    rows = _read_rows(path, MARGINALS_HEADER)
    parsed = []
    for lineno, row in rows:
        t = _parse_int(path, lineno, "t", row[0])
        p = _parse_int(path, lineno, "person", row[1])
        v = _parse_float(path, lineno, "p_infectious", row[2])
        parsed.append((t, p, v))
    if not parsed:
        return np.zeros((0, 0))
    n_rows = max(t for t, _, _ in parsed) + 1
    n_persons = max(p for _, p, _ in parsed) + 1
    out = np.full((n_rows, n_persons), np.nan)
    for t, p, v in parsed:
        out[t, p] = v
    if np.isnan(out).any():
        raise DataError(f"{path}: marginals grid has holes")
    return out


RATES_HEADER = ("sweep", "rate_name", "value")


def write_rate_chain_csv(
    path: str, samples: np.ndarray, names: Sequence[str] = ("c1", "c2", "c3")
) -> None:
    """Posterior draws, one row per (sweep, named rate)."""
    if samples.ndim != 2 or samples.shape[1] != len(names):
        raise ValueError("samples must be (sweeps, len(names))")

    def rows():
        for sweep in range(samples.shape[0]):
            for j, name in enumerate(names):
                yield (sweep, name, float(samples[sweep, j]))

    write_csv(path, RATES_HEADER, rows())


def read_rate_chain_csv(path: str) -> dict[str, np.ndarray]:
    chains: dict[str, list[tuple[int, float]]] = {}
    for lineno, row in _read_rows(path, RATES_HEADER):
        sweep = _parse_int(path, lineno, "sweep", row[0])
        value = _parse_float(path, lineno, "value", row[2])
        chains.setdefault(row[1], []).append((sweep, value))
    return {
        name: np.array([v for _, v in sorted(pairs)], dtype=np.float64)
        for name, pairs in chains.items()
    }


WINDOW_HEADER = ("t", "person", "p_infected_window")
COUNTS_HEADER = ("t", "mean_infectious", "q05", "q95")


def write_window_csv(path: str, t: int, p_infected: np.ndarray) -> None:
    """Per-person P(infectious at some point by step t), from a forward
    run; t is the window's final step."""
    write_csv(
        path,
        WINDOW_HEADER,
        ((t, p, float(v)) for p, v in enumerate(p_infected)),
    )


def read_window_csv(path: str) -> tuple[int, np.ndarray]:
    parsed = []
    for lineno, row in _read_rows(path, WINDOW_HEADER):
        t = _parse_int(path, lineno, "t", row[0])
        p = _parse_int(path, lineno, "person", row[1])
        v = _parse_float(path, lineno, "p_infected_window", row[2])
        parsed.append((t, p, v))
    if not parsed:
        return 0, np.zeros(0)
    ts = {t for t, _, _ in parsed}
    if len(ts) != 1:
        raise DataError(f"{path}: mixed window end steps {sorted(ts)}")
    out = np.zeros(max(p for _, p, _ in parsed) + 1)
    for _, p, v in parsed:
        out[p] = v
    return ts.pop(), out


def write_count_prediction_csv(path: str, result) -> None:
    """t,mean_infectious,q05,q95 for steps start+1 .. start+horizon."""
    base = result.start_step

    def rows():
        for h in range(result.horizon_steps):
            yield (
                base + 1 + h,
                float(result.mean_infectious[h]),
                float(result.q05_infectious[h]),
                float(result.q95_infectious[h]),
            )

    write_csv(path, COUNTS_HEADER, rows())


def read_count_prediction_csv(path: str) -> dict[str, np.ndarray]:
    ts, means, q05, q95 = [], [], [], []
    for lineno, row in _read_rows(path, COUNTS_HEADER):
        ts.append(_parse_int(path, lineno, "t", row[0]))
        means.append(_parse_float(path, lineno, "mean_infectious", row[1]))
        q05.append(_parse_float(path, lineno, "q05", row[2]))
        q95.append(_parse_float(path, lineno, "q95", row[3]))
    return {
        "t": np.array(ts, dtype=np.int64),
        "mean_infectious": np.array(means),
        "q05": np.array(q05),
        "q95": np.array(q95),
    }


# -- evaluation outputs ------------------------------------------------------

PR_HEADER = ("threshold", "recall", "precision")
R2_HEADER = ("method", "volunteers", "replicate", "r2")


def write_pr_curve_csv(path: str, curve) -> None:
    write_csv(
        path,
        PR_HEADER,
        zip(
            (float(v) for v in curve.thresholds),
            (float(v) for v in curve.recalls),
            (float(v) for v in curve.precisions),
        ),
    )


def write_r2_table_csv(path: str, rows, n_persons: int) -> None:
    """method,volunteers,replicate,r2.  volunteers is the panel size;
    panel-independent baselines carry 0."""
    write_csv(
        path,
        R2_HEADER,
        (
            (
                row.method,
                int(round(row.volunteer_fraction * n_persons)),
                row.replicate,
                float(row.r2),
            )
            for row in rows
        ),
    )


def read_r2_table_csv(path: str) -> list[tuple[str, int, int, float]]:
    out = []
    for lineno, row in _read_rows(path, R2_HEADER):
        vols = _parse_int(path, lineno, "volunteers", row[1])
        rep = _parse_int(path, lineno, "replicate", row[2])
        r2 = _parse_float(path, lineno, "r2", row[3])
        out.append((row[0], vols, rep, r2))
    return out


def write_json(path: str, payload: dict) -> None:
    """One pretty-printed JSON object (summaries, world snapshots)."""
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: bad JSON: {exc.msg}") from None


def write_jsonl(path: str, records: Iterable[dict]) -> None:
    """Generic JSON Lines writer; used for statistical test results."""
    lines = [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in records]
    _atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path: str) -> list[dict]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc}") from exc
    out = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON: {exc.msg}") from None
    return out


# -- run manifest ------------------------------------------------------------


def sha256_of(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """What a run produced and under which configuration.

    outputs maps artifact file names to sha256 hex digests; two runs
    with the same config and seed must agree on every digest.
    """

    command: str
    version: str
    config_hash: str
    seed: int
    threads: int
    step_count: int
    wall_seconds: float
    outputs: dict[str, str] = field(default_factory=dict)


def build_manifest(
    command: str,
    config_hash: str,
    seed: int,
    threads: int,
    step_count: int,
    wall_seconds: float,
    out_dir: str,
    filenames: Iterable[str],
) -> RunManifest:
    outputs = {
        name: sha256_of(os.path.join(out_dir, name)) for name in sorted(filenames)
    }
    return RunManifest(
        command=command,
        version=TOOL_VERSION,
        config_hash=config_hash,
        seed=seed,
        threads=threads,
        step_count=step_count,
        wall_seconds=wall_seconds,
        outputs=outputs,
    )


def write_manifest(path: str, manifest: RunManifest) -> None:
    payload = json.dumps(dataclasses.asdict(manifest), indent=2, sort_keys=True)
    _atomic_write_text(path, payload + "\n")


def read_manifest(path: str) -> RunManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot open: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: bad JSON: {exc.msg}") from None
    try:
        return RunManifest(**raw)
    except TypeError as exc:
        raise DataError(f"{path}: bad manifest: {exc}") from None
