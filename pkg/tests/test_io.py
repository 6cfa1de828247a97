"""Round-trips and strict-reader diagnostics for the file formats."""

import hashlib
import json

import numpy as np
import pytest

from epitrack.errors import DataError
from epitrack.io import (
    TOOL_VERSION,
    build_manifest,
    format_value,
    read_count_prediction_csv,
    read_health_csv,
    read_jsonl,
    read_manifest,
    read_marginals_csv,
    read_rate_chain_csv,
    read_r2_table_csv,
    read_reports_csv,
    read_scans_csv,
    read_snapshots_jsonl,
    read_trajectory_csv,
    read_visits_csv,
    read_window_csv,
    write_count_prediction_csv,
    write_csv,
    write_health_csv,
    write_jsonl,
    write_manifest,
    write_marginals_csv,
    write_pr_curve_csv,
    write_rate_chain_csv,
    write_r2_table_csv,
    write_reports_csv,
    write_scans_csv,
    write_snapshots_jsonl,
    write_trajectory_csv,
    write_visits_csv,
    write_window_csv,
)
from epitrack.observe import ScanObservation, SymptomReport
from epitrack.skm import Event, ReactionSystem, simulate_gillespie
from epitrack.world import campus_world, simulate_world


def test_format_value_types():
    assert format_value(True) == "1"
    assert format_value(False) == "0"
    assert format_value(np.bool_(True)) == "1"
    assert format_value(7) == "7"
    assert format_value(np.int64(-3)) == "-3"
    assert format_value(0.1) == "0.1"
    assert format_value(float(np.float64(1e-17))) == "1e-17"
    assert format_value("abc") == "abc"


def test_float_repr_round_trips(tmp_path):
    values = [0.1, 1 / 3, 1e-300, 2**-52, 123456789.123456789]
    path = str(tmp_path / "floats.csv")
    write_csv(path, ("t", "person", "p_infectious"), [(0, i, v) for i, v in enumerate(values)])
    back = read_marginals_csv(path)
    assert back.shape == (1, len(values))
    for i, v in enumerate(values):
        assert back[0, i] == v


def test_trajectory_round_trip(tmp_path):
    system = ReactionSystem(
        ["S", "I"],
        [
            Event(reactants=(1, 1), products=(0, 2), rate=0.3),
            Event(reactants=(0, 1), products=(1, 0), rate=0.7),
        ],
    )
    traj = simulate_gillespie(
        system, np.array([8, 2]), horizon=5.0, rng=np.random.default_rng(4)
    )
    path = str(tmp_path / "traj.csv")
    write_trajectory_csv(path, traj, system)
    names, back = read_trajectory_csv(path)
    assert names == ["S", "I"]
    assert np.array_equal(back.initial, traj.initial)
    assert len(back.steps) == len(traj.steps)
    for a, b in zip(back.steps, traj.steps):
        assert a.time == b.time
        assert a.event == b.event
        assert np.array_equal(a.state, b.state)


def test_trajectory_requires_initial_row(tmp_path):
    path = str(tmp_path / "traj.csv")
    with open(path, "w") as fh:
        fh.write("step,time,event,S\n1,0.5,0,3\n")
    with pytest.raises(DataError, match="step 0"):
        read_trajectory_csv(path)


def small_truth():
    model = campus_world(
        n_persons=12,
        n_homes=3,
        n_locations=5,
        n_initial_infectious=3,
        rng=np.random.default_rng(11),
    )
    return model, simulate_world(model, 96, np.random.default_rng(12))


def test_health_round_trip(tmp_path):
    _, truth = small_truth()
    path = str(tmp_path / "health.csv")
    write_health_csv(path, truth.healths_history)
    back = read_health_csv(path, n_steps=truth.n_steps)
    assert np.array_equal(back, truth.healths_history)


def test_health_csv_is_transition_coded(tmp_path):
    _, truth = small_truth()
    path = str(tmp_path / "health.csv")
    write_health_csv(path, truth.healths_history)
    with open(path) as fh:
        n_rows = sum(1 for _ in fh) - 1
    n_changes = int((truth.healths_history[1:] != truth.healths_history[:-1]).sum())
    assert n_rows == truth.healths_history.shape[1] + n_changes


def test_health_infers_length_from_last_transition(tmp_path):
    history = np.zeros((6, 2), dtype=np.int8)
    history[3:, 1] = 1
    path = str(tmp_path / "health.csv")
    write_health_csv(path, history)
    back = read_health_csv(path)
    # quiet tail after the last change is unrecoverable without n_steps
    assert back.shape == (4, 2)
    assert np.array_equal(back, history[:4])
    assert np.array_equal(read_health_csv(path, n_steps=5), history)


def test_health_rejects_incomplete_initial(tmp_path):
    path = str(tmp_path / "health.csv")
    with open(path, "w") as fh:
        fh.write("step,person,state\n0,0,0\n0,2,1\n")
    with pytest.raises(DataError, match="every person"):
        read_health_csv(path)


def test_visits_round_trip_and_order_check(tmp_path):
    model, truth = small_truth()
    visits = truth.mobility_trace().visits()
    path = str(tmp_path / "visits.csv")
    write_visits_csv(path, visits)
    assert read_visits_csv(path) == visits

    bad = str(tmp_path / "bad.csv")
    with open(bad, "w") as fh:
        fh.write("person,enter_time,exit_time,location\n0,5.0,1.0,2\n")
    with pytest.raises(DataError, match="bad.csv:2"):
        read_visits_csv(bad)


def test_visits_invert_to_the_original_trace(tmp_path):
    from epitrack.mobility import trace_from_visits

    _, truth = small_truth()
    trace = truth.mobility_trace()
    path = str(tmp_path / "visits.csv")
    write_visits_csv(path, trace.visits())
    back = trace_from_visits(
        read_visits_csv(path), trace.start_time, trace.tau, trace.n_steps
    )
    assert np.array_equal(back.history, trace.history)


def test_visits_with_gaps_rejected():
    from epitrack.mobility import trace_from_visits

    with pytest.raises(DataError, match="unplaced"):
        trace_from_visits([(0, 0.0, 1.0, 2)], 0.0, 1.0, 3)


def test_snapshots_round_trip(tmp_path):
    _, truth = small_truth()
    trace = truth.mobility_trace()
    records = [(t, trace.groups(t)) for t in range(trace.n_steps + 1)]
    path = str(tmp_path / "snapshots.jsonl")
    write_snapshots_jsonl(path, records)
    back = read_snapshots_jsonl(path)
    assert [t for t, _ in back] == [t for t, _ in records]
    for (_, got), (_, want) in zip(back, records):
        assert got == [sorted(g) for g in want]


def test_snapshots_drop_singletons(tmp_path):
    path = str(tmp_path / "snapshots.jsonl")
    write_snapshots_jsonl(path, [(0, [[3], [1, 2]])])
    assert read_snapshots_jsonl(path) == [(0, [[1, 2]])]


def test_snapshots_reject_bad_json(tmp_path):
    path = str(tmp_path / "snapshots.jsonl")
    with open(path, "w") as fh:
        fh.write('{"t":0,"groups":[[1,2]]}\nnot json\n')
    with pytest.raises(DataError, match="snapshots.jsonl:2"):
        read_snapshots_jsonl(path)


def test_scans_round_trip(tmp_path):
    scans = [
        ScanObservation(t=1, location=0, count=3),
        ScanObservation(t=1, location=4, count=0),
        ScanObservation(t=2, location=0, count=1),
    ]
    path = str(tmp_path / "scans.csv")
    write_scans_csv(path, scans)
    assert read_scans_csv(path) == scans


def test_scans_reject_negative_count(tmp_path):
    path = str(tmp_path / "scans.csv")
    with open(path, "w") as fh:
        fh.write("t,location,count\n1,0,-2\n")
    with pytest.raises(DataError, match="scans.csv:2"):
        read_scans_csv(path)


def test_reports_round_trip(tmp_path):
    reports = [
        SymptomReport(day=1, person=4, self_sick=True, nearby_sick=False, symptoms="10100"),
        SymptomReport(day=2, person=0, self_sick=False, nearby_sick=True),
    ]
    path = str(tmp_path / "reports.csv")
    write_reports_csv(path, reports)
    assert read_reports_csv(path) == reports
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[1] == "1,4,1,0,10100"


def test_reports_reject_bad_flag_and_symptoms(tmp_path):
    path = str(tmp_path / "reports.csv")
    with open(path, "w") as fh:
        fh.write("day,person,self_sick,nearby_sick,symptoms\n1,0,2,0,00000\n")
    with pytest.raises(DataError, match="reports.csv:2.*self_sick"):
        read_reports_csv(path)
    with open(path, "w") as fh:
        fh.write("day,person,self_sick,nearby_sick,symptoms\n1,0,1,0,001\n")
    with pytest.raises(DataError, match="reports.csv:2"):
        read_reports_csv(path)


def test_marginals_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    marginals = rng.random((7, 5))
    path = str(tmp_path / "marginals.csv")
    write_marginals_csv(path, marginals)
    back = read_marginals_csv(path)
    assert np.array_equal(back, marginals)


def test_marginals_reject_holes(tmp_path):
    path = str(tmp_path / "marginals.csv")
    with open(path, "w") as fh:
        fh.write("t,person,p_infectious\n0,0,0.5\n1,1,0.25\n")
    with pytest.raises(DataError, match="holes"):
        read_marginals_csv(path)


def test_rate_chain_round_trip(tmp_path):
    samples = np.random.default_rng(3).gamma(2.0, 0.01, size=(40, 3))
    path = str(tmp_path / "rates.csv")
    write_rate_chain_csv(path, samples)
    back = read_rate_chain_csv(path)
    assert set(back) == {"c1", "c2", "c3"}
    for j, name in enumerate(("c1", "c2", "c3")):
        assert np.array_equal(back[name], samples[:, j])


def test_window_round_trip(tmp_path):
    p = np.array([0.0, 0.25, 1.0])
    path = str(tmp_path / "window.csv")
    write_window_csv(path, 96, p)
    t, back = read_window_csv(path)
    assert t == 96
    assert np.array_equal(back, p)


def test_window_rejects_mixed_steps(tmp_path):
    path = str(tmp_path / "window.csv")
    with open(path, "w") as fh:
        fh.write("t,person,p_infected_window\n4,0,0.5\n5,1,0.5\n")
    with pytest.raises(DataError, match="mixed"):
        read_window_csv(path)


class _FakePrediction:
    start_step = 10
    horizon_steps = 3
    mean_infectious = np.array([4.0, 4.5, 5.0])
    q05_infectious = np.array([2.0, 2.0, 3.0])
    q95_infectious = np.array([6.0, 7.0, 8.0])


def test_count_prediction_round_trip(tmp_path):
    path = str(tmp_path / "counts.csv")
    write_count_prediction_csv(path, _FakePrediction())
    back = read_count_prediction_csv(path)
    assert back["t"].tolist() == [11, 12, 13]
    assert np.array_equal(back["mean_infectious"], _FakePrediction.mean_infectious)
    assert np.array_equal(back["q05"], _FakePrediction.q05_infectious)
    assert np.array_equal(back["q95"], _FakePrediction.q95_infectious)


def test_zero_horizon_writes_header_only(tmp_path):
    class Empty:
        start_step = 0
        horizon_steps = 0
        mean_infectious = np.zeros(0)
        q05_infectious = np.zeros(0)
        q95_infectious = np.zeros(0)

    path = str(tmp_path / "counts.csv")
    write_count_prediction_csv(path, Empty())
    with open(path) as fh:
        assert fh.read() == "t,mean_infectious,q05,q95\n"


def test_pr_curve_csv(tmp_path):
    class Curve:
        thresholds = np.array([0.9, 0.4])
        recalls = np.array([0.5, 1.0])
        precisions = np.array([1.0, 2 / 3])

    path = str(tmp_path / "pr.csv")
    write_pr_curve_csv(path, Curve())
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "threshold,recall,precision"
    assert lines[1].startswith("0.9,0.5,1.0")


def test_r2_table_round_trip(tmp_path):
    class Row:
        def __init__(self, method, frac, rep, r2):
            self.method = method
            self.volunteer_fraction = frac
            self.replicate = rep
            self.r2 = r2

    rows = [Row("filter", 0.10, 0, 0.81), Row("persistence", 0.0, 0, 0.55)]
    path = str(tmp_path / "r2.csv")
    write_r2_table_csv(path, rows, n_persons=300)
    back = read_r2_table_csv(path)
    assert back == [("filter", 30, 0, 0.81), ("persistence", 0, 0, 0.55)]


def test_jsonl_round_trip(tmp_path):
    records = [
        {"statistic": 12.0, "p_value": 0.003, "config_hash": "ab12"},
        {"statistic": 1.5, "p_value": 0.44, "config_hash": "ab12"},
    ]
    path = str(tmp_path / "tests.jsonl")
    write_jsonl(path, records)
    assert read_jsonl(path) == records


def test_header_mismatch_names_line_one(tmp_path):
    path = str(tmp_path / "scans.csv")
    with open(path, "w") as fh:
        fh.write("time,location,count\n1,0,2\n")
    with pytest.raises(DataError, match="scans.csv:1"):
        read_scans_csv(path)


def test_short_row_names_its_line(tmp_path):
    path = str(tmp_path / "scans.csv")
    with open(path, "w") as fh:
        fh.write("t,location,count\n1,0,2\n3,4\n")
    with pytest.raises(DataError, match="scans.csv:3"):
        read_scans_csv(path)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError, match="nope.csv"):
        read_scans_csv(str(tmp_path / "nope.csv"))


def test_line_endings_are_unix(tmp_path):
    path = str(tmp_path / "scans.csv")
    write_scans_csv(path, [ScanObservation(t=1, location=0, count=2)])
    with open(path, "rb") as fh:
        raw = fh.read()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")


def test_manifest_round_trip(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    write_scans_csv(str(out / "scans.csv"), [ScanObservation(t=1, location=0, count=2)])
    manifest = build_manifest(
        command="synth-obs",
        config_hash="deadbeef",
        seed=42,
        threads=8,
        step_count=96,
        wall_seconds=1.25,
        out_dir=str(out),
        filenames=["scans.csv"],
    )
    assert manifest.version == TOOL_VERSION
    with open(out / "scans.csv", "rb") as fh:
        assert manifest.outputs["scans.csv"] == hashlib.sha256(fh.read()).hexdigest()
    path = str(out / "manifest.json")
    write_manifest(path, manifest)
    assert read_manifest(path) == manifest
    with open(path) as fh:
        raw = json.load(fh)
    assert raw["seed"] == 42


def test_writes_replace_not_append(tmp_path):
    path = str(tmp_path / "scans.csv")
    write_scans_csv(path, [ScanObservation(t=1, location=0, count=2)])
    write_scans_csv(path, [ScanObservation(t=2, location=1, count=0)])
    assert read_scans_csv(path) == [ScanObservation(t=2, location=1, count=0)]
    leftovers = [p.name for p in tmp_path.iterdir() if p.name != "scans.csv"]
    assert leftovers == []
