"""Command-line surface: stage isolation, determinism, exit codes."""

from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from trackcast.cli import main
from trackcast.fileio import file_digest, read_header


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    rc = run("simulate", "--out", root, "--scenes", "2", "--frames", "12",
             "--agents", "5", "--seed", "3", "--labeled", "1")
    assert rc == 0
    return root


def test_simulate_layout(data_dir):
    scenes = sorted(p.name for p in (data_dir / "scenes").glob("*.jsonl"))
    assert scenes == ["scene-0000.jsonl", "scene-0001.jsonl"]
    truths = sorted(p.name for p in (data_dir / "truth").glob("*.jsonl"))
    assert truths == scenes
    labeled = sorted(p.name for p in (data_dir / "labeled").glob("*.jsonl"))
    assert labeled == ["labeled-0000.jsonl"]
    header = read_header(data_dir / "scenes" / "scene-0000.jsonl")
    assert header["kind"] == "scene" and header["n_frames"] == 12


def test_staged_equals_fused(data_dir, tmp_path):
    scene = data_dir / "scenes" / "scene-0000.jsonl"
    tracks = tmp_path / "tracks.jsonl"
    forecasts = tmp_path / "forecasts.jsonl"
    enhanced = tmp_path / "enhanced.jsonl"
    assert run("track", "--scene", scene, "--out", tracks) == 0
    assert run("forecast", "--scene", scene, "--tracks", tracks,
               "--out", forecasts) == 0
    assert run("enhance", "--scene", scene, "--forecasts", forecasts,
               "--out", enhanced) == 0
    fused = tmp_path / "run"
    assert run("pipeline", "--scenes", data_dir / "scenes", "--out", fused) == 0
    assert enhanced.read_bytes() == (fused / "enhanced" / "scene-0000.jsonl").read_bytes()


def test_pipeline_deterministic_across_runs_and_jobs(data_dir, tmp_path):
    outs = []
    for name, jobs in (("a", 1), ("b", 2)):
        out = tmp_path / name
        assert run("pipeline", "--scenes", data_dir / "scenes",
                   "--truth", data_dir / "truth", "--out", out,
                   "--jobs", jobs) == 0
        outs.append(out)
    a, b = outs
    for sub in ("tracks", "forecasts", "enhanced"):
        for pa in sorted((a / sub).glob("*.jsonl")):
            pb = b / sub / pa.name
            assert file_digest(pa) == file_digest(pb), pa.name
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "buckets.csv").read_bytes() == (b / "buckets.csv").read_bytes()


def test_enhance_beta_zero_config(data_dir, tmp_path):
    cfgp = tmp_path / "cfg.json"
    cfgp.write_text(json.dumps({"enhancer": {"beta": 0.0,
                                             "enable_insertion": False}}))
    scene = data_dir / "scenes" / "scene-0001.jsonl"
    tracks = tmp_path / "t.jsonl"
    forecasts = tmp_path / "f.jsonl"
    enhanced = tmp_path / "e.jsonl"
    assert run("track", "--scene", scene, "--out", tracks) == 0
    assert run("forecast", "--scene", scene, "--tracks", tracks,
               "--out", forecasts) == 0
    assert run("enhance", "--scene", scene, "--forecasts", forecasts,
               "--config", cfgp, "--out", enhanced) == 0
    from trackcast import read_enhanced
    for frame in read_enhanced(enhanced):
        assert all(l.weight == 1.0 for l in frame.labels)


def test_eval_gt_against_itself(data_dir, tmp_path):
    out = tmp_path / "ev"
    truth = data_dir / "truth" / "scene-0000.jsonl"
    assert run("eval", "--labels", truth, "--truth", truth, "--out", out) == 0
    rows = {r[0]: r for r in csv.reader(open(out / "metrics.csv"))}
    for name, row in rows.items():
        if name == "ap":
            assert row[3] == "1.0", row
    assert rows["teacher_recall"][3] == "1.0"


def test_eval_pairs_directories(data_dir, tmp_path):
    run_dir = tmp_path / "run"
    assert run("pipeline", "--scenes", data_dir / "scenes", "--out", run_dir) == 0
    out = tmp_path / "ev"
    assert run("eval", "--labels", run_dir / "enhanced",
               "--truth", data_dir / "truth", "--out", out) == 0
    assert (out / "metrics.csv").exists()
    assert (out / "pr_points.csv").exists()


def test_export_cli(data_dir, tmp_path):
    manifest = tmp_path / "manifest.json"
    assert run("export", "--labeled", data_dir / "labeled",
               "--unlabeled", data_dir / "scenes",
               "--out", manifest, "--batch-size", "2", "--seed", "4") == 0
    data = json.loads(manifest.read_text())
    assert data["kind"] == "batch_manifest"
    assert len(data["batches"]) == 2
    assert all(b["labeled"] == ["labeled-0000"] for b in data["batches"])


def test_exit_code_missing_file(tmp_path):
    assert run("track", "--scene", tmp_path / "nope.jsonl",
               "--out", tmp_path / "x.jsonl") == 2


def test_exit_code_malformed_file(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json at all\n")
    assert run("track", "--scene", bad, "--out", tmp_path / "x.jsonl") == 1


def test_exit_code_bad_config(data_dir, tmp_path):
    cfgp = tmp_path / "cfg.json"
    cfgp.write_text(json.dumps({"enhancer": {"alpha": -2.0}}))
    scene = data_dir / "scenes" / "scene-0000.jsonl"
    assert run("track", "--scene", scene, "--config", cfgp,
               "--out", tmp_path / "x.jsonl") == 1
    cfgp.write_text("{broken json")
    assert run("track", "--scene", scene, "--config", cfgp,
               "--out", tmp_path / "x.jsonl") == 1


def test_console_entrypoint_runs():
    proc = subprocess.run([sys.executable, "-m", "trackcast.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
