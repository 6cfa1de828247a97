"""End-to-end subcommand tests: artifacts, determinism, exit codes."""

import hashlib
import json
import os
import time

import numpy as np
import pytest

from epitrack.cli import main
from epitrack.config import load_run_config
from epitrack.io import (
    read_json,
    read_manifest,
    read_marginals_csv,
    write_csv,
)

BASE_CONFIG = """\
seed = 42

[world]
persons = 20
locations = 5
homes = 2
days = 4
tau = 0.5
initial_infectious = 5
volunteer_fraction = 0.5
discoverable_fraction = 0.6
scan_every = 2

[epidemic]
c1 = 0.008
c2 = 0.04
c3 = 0.002

[inference]
particles = 200
sweeps = 3
horizon_days = 1
prediction_day = 2
prediction_runs = 20
folds = 2

[evaluate]
cross_validate = true
bootstrap = true
contact_test = true
replicates = 2
volunteer_fractions = [0.5, 0.25]
permutations = 120
"""


def write_config(tmp_path, text=BASE_CONFIG, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(cmd, config, out, *extra):
    return main([cmd, "--config", config, "--out", str(out), *extra])


def output_bytes(out_dir):
    """name -> bytes for every artifact except the manifest (whose
    wall-clock field varies between runs)."""
    found = {}
    for name in sorted(os.listdir(out_dir)):
        if name == "manifest.json":
            continue
        with open(os.path.join(out_dir, name), "rb") as fh:
            found[name] = fh.read()
    return found


def test_pipeline_runs_and_manifests_check_out(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    for cmd in ("simulate", "synth-obs", "filter", "smooth", "learn", "predict"):
        assert run(cmd, config, out) == 0, cmd
        manifest = read_manifest(str(out / "manifest.json"))
        assert manifest.command == cmd
        assert manifest.seed == 42
        for name, digest in manifest.outputs.items():
            with open(out / name, "rb") as fh:
                assert hashlib.sha256(fh.read()).hexdigest() == digest, name


def test_simulate_reruns_byte_identical(tmp_path):
    config = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", config, a) == 0
    assert run("simulate", config, b) == 0
    assert output_bytes(a) == output_bytes(b)
    assert (
        read_manifest(str(a / "manifest.json")).outputs
        == read_manifest(str(b / "manifest.json")).outputs
    )


def test_thread_count_does_not_change_outputs(tmp_path):
    config = write_config(tmp_path)
    one, eight = tmp_path / "t1", tmp_path / "t8"
    for cmd in ("simulate", "synth-obs", "filter", "evaluate"):
        assert run(cmd, config, one, "--threads", "1") == 0, cmd
        assert run(cmd, config, eight, "--threads", "8") == 0, cmd
    assert output_bytes(one) == output_bytes(eight)


def test_seed_flag_overrides_config(tmp_path):
    config = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", config, a) == 0
    assert run("simulate", config, b, "--seed", "43") == 0
    assert read_manifest(str(b / "manifest.json")).seed == 43
    assert output_bytes(a) != output_bytes(b)


def test_zero_day_horizon_writes_headers_only(tmp_path):
    config = write_config(tmp_path, BASE_CONFIG.replace("days = 4", "days = 0"))
    out = tmp_path / "out"
    assert run("simulate", config, out) == 0
    assert (out / "health.csv").read_text() == "step,person,state\n"
    assert (out / "visits.csv").read_text() == "person,enter_time,exit_time,location\n"
    assert (out / "snapshots.jsonl").read_text() == ""
    init = read_json(str(out / "world_init.json"))
    assert init["n_steps"] == 0
    assert len(init["init_healths"]) == 20

    assert run("synth-obs", config, out) == 0
    assert (out / "scans.csv").read_text() == "t,location,count\n"
    assert (
        out / "reports.csv"
    ).read_text() == "day,person,self_sick,nearby_sick,symptoms\n"


def test_missing_input_file_exits_3_naming_the_path(tmp_path, capsys):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    code = run("filter", config, out)
    err = capsys.readouterr().err
    assert code == 3
    record = json.loads(err.strip())
    assert record["exit_code"] == 3
    assert "scans.csv" in record["message"]


def test_missing_seed_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, BASE_CONFIG.replace("seed = 42\n", ""))
    code = run("simulate", config, tmp_path / "out")
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "ConfigError"
    assert "seed" in record["message"]


def test_unknown_config_key_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, BASE_CONFIG + "\n[world2]\nx = 1\n")
    assert run("simulate", config, tmp_path / "out") == 2
    assert "world2" in json.loads(capsys.readouterr().err.strip())["message"]


def test_step_too_coarse_exits_4(tmp_path, capsys):
    config = write_config(tmp_path, BASE_CONFIG.replace("tau = 0.5", "tau = 24.0"))
    code = run("simulate", config, tmp_path / "out")
    assert code == 4
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "StepTooCoarse"


def test_single_particle_no_observations_filter(tmp_path):
    """With an empty log the filter is a plain forward simulation: the
    posterior is a point mass and no evidence is accumulated."""
    config = write_config(
        tmp_path,
        BASE_CONFIG.replace("particles = 200", "particles = 1"),
    )
    out = tmp_path / "out"
    out.mkdir()
    write_csv(str(out / "scans.csv"), ("t", "location", "count"), [])
    write_csv(
        str(out / "reports.csv"),
        ("day", "person", "self_sick", "nearby_sick", "symptoms"),
        [],
    )
    assert run("filter", config, out) == 0
    marginals = read_marginals_csv(str(out / "marginals.csv"))
    assert marginals.shape == (4 * 48 + 1, 20)
    assert set(np.unique(marginals)) <= {0.0, 1.0}
    stats = read_json(str(out / "filter_stats.json"))
    assert stats["log_marginal_likelihood"] == 0.0


def test_model_file_sets_epidemic_rates(tmp_path):
    model_path = tmp_path / "flu.skm"
    model_path.write_text(
        "# time-unit: hours\n"
        "S + I -> 2 I @ 0.011\n"
        "I -> S @ 0.05\n"
        "S -> I @ 0.003\n"
    )
    config = write_config(
        tmp_path,
        BASE_CONFIG.replace(
            "scan_every = 2", f'scan_every = 2\nmodel_file = "{model_path}"'
        ),
    )
    out = tmp_path / "out"
    assert run("simulate", config, out) == 0
    init = read_json(str(out / "world_init.json"))
    assert init["epidemic"] == {"c1": 0.011, "c2": 0.05, "c3": 0.003}


def test_model_file_syntax_error_exits_3_with_position(tmp_path, capsys):
    model_path = tmp_path / "bad.skm"
    model_path.write_text("# time-unit: hours\nS + -> 2 I @ 0.01\n")
    config = write_config(
        tmp_path,
        BASE_CONFIG.replace(
            "scan_every = 2", f'scan_every = 2\nmodel_file = "{model_path}"'
        ),
    )
    code = run("simulate", config, tmp_path / "out")
    assert code == 3
    message = json.loads(capsys.readouterr().err.strip())["message"]
    assert "line 2" in message
    assert "column" in message


def test_model_file_wrong_time_unit_exits_2(tmp_path, capsys):
    model_path = tmp_path / "flu.skm"
    model_path.write_text("# time-unit: minutes\nS + I -> 2 I @ 0.01\n")
    config = write_config(
        tmp_path,
        BASE_CONFIG.replace(
            "scan_every = 2", f'scan_every = 2\nmodel_file = "{model_path}"'
        ),
    )
    assert run("simulate", config, tmp_path / "out") == 2
    assert "time-unit" in json.loads(capsys.readouterr().err.strip())["message"]


def test_missing_model_file_rejected_at_load(tmp_path, capsys):
    config = write_config(
        tmp_path,
        BASE_CONFIG.replace(
            "scan_every = 2", 'scan_every = 2\nmodel_file = "/nope/missing.skm"'
        ),
    )
    assert run("simulate", config, tmp_path / "out") == 2
    assert "missing.skm" in json.loads(capsys.readouterr().err.strip())["message"]


def test_evaluate_with_nothing_enabled_exits_2(tmp_path, capsys):
    text = (
        BASE_CONFIG.replace("cross_validate = true", "cross_validate = false")
        .replace("bootstrap = true", "bootstrap = false")
        .replace("contact_test = true", "contact_test = false")
    )
    config = write_config(tmp_path, text)
    assert run("evaluate", config, tmp_path / "out") == 2
    assert "nothing" in json.loads(capsys.readouterr().err.strip())["message"]


def test_paper_stress_levels_accepted(tmp_path):
    # volunteer counts 150 / 100 / 30 of a 300-person panel
    text = BASE_CONFIG.replace("persons = 20", "persons = 300").replace(
        "volunteer_fractions = [0.5, 0.25]",
        "volunteer_fractions = [0.5, 0.3333333333333333, 0.1]",
    )
    config = write_config(tmp_path, text)
    loaded = load_run_config(config, out_override=str(tmp_path / "out"))
    counts = [round(f * loaded.n_persons) for f in loaded.volunteer_fractions]
    assert counts == [150, 100, 30]
    loaded.experiment_config()  # protocol constraints hold too


def test_evaluate_writes_metric_files(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"
    assert run("evaluate", config, out, "--threads", "2") == 0
    summary = read_json(str(out / "cv_summary.json"))
    for key in ("ap_scans_kept", "ap_scans_held", "ap_in_sample", "prevalence"):
        assert 0.0 <= summary[key] <= 1.0
    with open(out / "r2.csv") as fh:
        header = fh.readline().strip()
    assert header == "method,volunteers,replicate,r2"
    records = [json.loads(line) for line in (out / "tests.jsonl").read_text().splitlines()]
    assert all("p_value" in r and "config_hash" in r for r in records)


@pytest.mark.slow
def test_simulate_90_day_five_minute_steps_under_two_minutes(tmp_path):
    text = (
        BASE_CONFIG.replace("persons = 20", "persons = 300")
        .replace("locations = 5", "locations = 15")
        .replace("homes = 2", "homes = 8")
        .replace("days = 4", "days = 90")
        .replace("tau = 0.5", "tau = 0.08333333333333333")
        .replace("initial_infectious = 5", "initial_infectious = 8")
        .replace("c1 = 0.008", "c1 = 0.00065")
        .replace("c2 = 0.04", "c2 = 0.0138888888888889")
        .replace("c3 = 0.002", "c3 = 0.00002")
    )
    config = write_config(tmp_path, text)
    start = time.perf_counter()
    assert run("simulate", config, tmp_path / "out") == 0
    assert time.perf_counter() - start < 120.0