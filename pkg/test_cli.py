"""End-to-end tests of the command line through main(argv)."""

import csv
import json

import numpy as np
import pytest

from cli import main
from conftest import observed_lines
from data_io import load_intrinsics, load_model, read_events, read_tum


SMALL_RUN = {
    "synth": {"n_lines": 10, "noise_sigma": 1.0, "outlier_rate": 0.05, "seed": 4},
    "trajectory": {"duration": 0.1},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_RUN))
    return str(path)


@pytest.fixture
def dataset(tmp_path, config_path):
    out = tmp_path / "data"
    assert main(["synth", "--config", config_path, "--out", str(out), "--quiet"]) == 0
    return out


def write_exact_lines(path, dataset, count=None):
    model = load_model(dataset / "model.json")
    K = load_intrinsics(dataset / "intrinsics.json")
    pose = read_tum(dataset / "truth.tum").pose(0)
    lines = observed_lines(model, pose, K)[:count]
    entries = [
        {"x1": l.p1[0], "y1": l.p1[1], "x2": l.p2[0], "y2": l.p2[1]}
        for l in lines
    ]
    path.write_text(json.dumps(entries))


# ============================================================================
# PIPELINE
# ============================================================================

def test_synth_writes_the_dataset(dataset):
    for name in ("events.csv", "events_labeled.csv", "model.json", "intrinsics.json", "truth.tum"):
        assert (dataset / name).exists()
    assert (dataset / "events.csv").read_text().splitlines()[0] == "t_sec,x_px,y_px,polarity"
    assert (dataset / "events_labeled.csv").read_text().splitlines()[0] == "t_sec,x_px,y_px,polarity,true_line"

    events, labels = read_events(dataset / "events.csv")
    labeled, truth_labels = read_events(dataset / "events_labeled.csv")
    assert labels is None
    np.testing.assert_array_equal(events.xy, labeled.xy)
    assert len(truth_labels) == len(events)
    assert len(read_tum(dataset / "truth.tum")) == 5


def test_detect(tmp_path, dataset, config_path):
    out = tmp_path / "lines.json"
    code = main(["detect", "--config", config_path, "--events", str(dataset / "events.csv"), "--out", str(out)])
    assert code == 0
    lines = json.loads(out.read_text())
    assert isinstance(lines, list)
    assert all({"x1", "y1", "x2", "y2", "support"} <= set(entry) for entry in lines)


def test_detect_window_out_of_range(tmp_path, dataset, config_path):
    code = main([
        "detect", "--config", config_path, "--events", str(dataset / "events.csv"),
        "--window", "99", "--out", str(tmp_path / "lines.json"),
    ])
    assert code == 2


def test_init_from_exact_lines(tmp_path, dataset):
    lines_path = tmp_path / "lines.json"
    write_exact_lines(lines_path, dataset)
    out = tmp_path / "pose.json"
    code = main([
        "init", "--lines", str(lines_path), "--model", str(dataset / "model.json"),
        "--intrinsics", str(dataset / "intrinsics.json"), "--out", str(out),
    ])
    assert code == 0
    result = json.loads(out.read_text())
    assert result["achieved_count"] == 10
    assert len(result["rotation"]) == 9


def test_init_with_two_lines_is_an_estimation_failure(tmp_path, dataset):
    lines_path = tmp_path / "lines.json"
    write_exact_lines(lines_path, dataset, count=2)
    code = main([
        "init", "--lines", str(lines_path), "--model", str(dataset / "model.json"),
        "--intrinsics", str(dataset / "intrinsics.json"), "--out", str(tmp_path / "pose.json"),
    ])
    assert code == 3


def test_track_then_eval(tmp_path, dataset, config_path, capsys):
    estimated = tmp_path / "track.tum"
    code = main([
        "track", "--config", config_path, "--events", str(dataset / "events.csv"),
        "--model", str(dataset / "model.json"), "--intrinsics", str(dataset / "intrinsics.json"),
        "--start-pose", str(dataset / "truth.tum"), "--out", str(estimated), "--quiet",
    ])
    assert code == 0
    assert len(read_tum(estimated)) == 5

    with open(tmp_path / "track.log.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 5
    assert all(row["coasting"] == "0" for row in rows)

    capsys.readouterr()
    assert main(["eval", "--estimated", str(estimated), "--truth", str(dataset / "truth.tum"), "--quiet"]) == 0
    header, values = capsys.readouterr().out.strip().splitlines()
    assert header == "rmse,normalized_rmse,extent,n_poses"
    report = dict(zip(header.split(","), values.split(",")))
    assert int(report["n_poses"]) == 5
    assert float(report["normalized_rmse"]) < 0.2


def test_eval_writes_csv(tmp_path, dataset):
    out = tmp_path / "ate.csv"
    truth = str(dataset / "truth.tum")
    assert main(["eval", "--estimated", truth, "--truth", truth, "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open(newline="")))
    assert float(rows[0]["rmse"]) == pytest.approx(0.0, abs=1e-9)


# ============================================================================
# ERRORS AND CONFIG
# ============================================================================

def test_missing_model_is_an_input_error(tmp_path, dataset):
    code = main([
        "track", "--events", str(dataset / "events.csv"), "--model", str(tmp_path / "missing.json"),
        "--intrinsics", str(dataset / "intrinsics.json"), "--out", str(tmp_path / "t.tum"),
    ])
    assert code == 2


def test_events_outside_the_image_are_an_input_error(tmp_path, dataset):
    events = tmp_path / "events.csv"
    events.write_text("t_sec,x_px,y_px,polarity\n0.0,100,100,1\n0.001,700,100,-1\n")
    code = main([
        "track", "--events", str(events), "--model", str(dataset / "model.json"),
        "--intrinsics", str(dataset / "intrinsics.json"), "--out", str(tmp_path / "t.tum"),
    ])
    assert code == 2


def test_invalid_config_is_an_input_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"opt": {"max_iterations": 0}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "data")]) == 2


def test_unknown_estimator_is_an_input_error(tmp_path, dataset):
    code = main([
        "track", "--events", str(dataset / "events.csv"), "--model", str(dataset / "model.json"),
        "--intrinsics", str(dataset / "intrinsics.json"), "--estimator", "huber", "--out", str(tmp_path / "t.tum"),
    ])
    assert code == 2


def test_no_command(capsys):
    assert main([]) == 2


def test_print_config_defaults(capsys):
    assert main(["--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["window"]["n_target"] == 500
    assert cfg["match"]["d_t"] == 8.0


def test_print_config_merges_file(capsys, config_path):
    assert main(["--print-config", "--config", config_path]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["synth"]["n_lines"] == 10
    assert cfg["synth"]["events_per_line"] == 40
    assert cfg["trajectory"]["duration"] == 0.1


def test_print_config_reports_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["--print-config", "--config", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


# ============================================================================
# BENCHMARK
# ============================================================================

BENCH_ARGS = ["bench", "--sweep", "noise", "--trials", "1", "--estimator", "ls", "--estimator", "mm", "--seed", "5", "--quiet"]


def test_bench_is_deterministic_across_threads(tmp_path, monkeypatch):
    first, second, threaded = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(BENCH_ARGS + ["--out", str(first)]) == 0
    assert main(BENCH_ARGS + ["--out", str(second)]) == 0
    monkeypatch.setenv("EVPOSE_THREADS", "2")
    assert main(BENCH_ARGS + ["--out", str(threaded)]) == 0

    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes() == threaded.read_bytes()
    rows = list(csv.DictReader(first.open(newline="")))
    assert len(rows) == 6 * 2
    assert list(rows[0]) == ["noise_sigma", "estimator", "median_err_r", "mean_err_r", "median_err_t", "mean_err_t", "failed"]


def test_bench_rejects_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("EVPOSE_THREADS", "many")
    assert main(BENCH_ARGS + ["--out", str(tmp_path / "a.csv")]) == 2
