"""End-to-end command line runs on the four-tool synthetic cast."""

import json
import shutil
from pathlib import Path

import pytest

from landseer.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from landseer.metrics import read_results
from landseer.registry import FunnelState, load_record

SAMPLES = Path(__file__).parent.parent.parent / "samples"


@pytest.fixture
def landseer(tmp_path, monkeypatch):
    """Run the CLI with an isolated cache and no .env file."""
    monkeypatch.setenv("LANDSEER_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.delenv("LANDSEER_SHARED_STORE", raising=False)
    monkeypatch.delenv("LANDSEER_WORKER_TAGS", raising=False)
    env_file = tmp_path / "missing.env"

    def run(*argv) -> int:
        return main(["--env-file", str(env_file), *map(str, argv)])
    return run


@pytest.fixture
def cast(tmp_path, landseer) -> Path:
    assert landseer("synth", SAMPLES / "four_tool" / "model.toml", tmp_path / "cast", "--id", "four-tool") == EXIT_OK
    return tmp_path / "cast"


def test_synth_writes_a_runnable_cast(cast, landseer, capsys):
    assert (cast / "experiment.toml").is_file()
    assert sorted(p.name for p in (cast / "tools").iterdir()) == [
        "a.toml", "b.toml", "c1.toml", "c2.toml", "synth_eval.toml"]
    assert landseer("validate", cast / "experiment.toml") == EXIT_OK
    assert "No violations." in capsys.readouterr().out


def test_plan_reports_dedup(tmp_path, cast, landseer, capsys):
    assert landseer("plan", cast / "experiment.toml", "--runs", tmp_path / "runs") == EXIT_OK
    out = capsys.readouterr().out
    assert "combinations: 20" in out
    assert "task instances: 134" in out
    assert "unique tasks: 82" in out
    rundir = tmp_path / "runs" / "four-tool"
    for name in ("experiment.json", "combinations.jsonl", "plan.json"):
        assert (rundir / name).is_file()


def test_full_pipeline(tmp_path, cast, landseer, capsys):
    runs = tmp_path / "runs"
    rundir = runs / "four-tool"

    assert landseer("run", cast / "experiment.toml", "--runs", runs, "--workers", 4) == EXIT_OK
    first = capsys.readouterr().out
    assert "executed:        82" in first
    assert len(read_results(rundir / "results.jsonl")) == 20
    assert json.loads((rundir / "unevaluated.json").read_text()) == []

    assert landseer("run", cast / "experiment.toml", "--runs", runs) == EXIT_OK
    second = capsys.readouterr().out
    assert "executed:        0" in second
    assert "cached:          82" in second

    assert landseer("analyze", rundir, "--exhaustive") == EXIT_OK
    findings = json.loads((rundir / "findings.json").read_text())
    assert {f["mode"] for f in findings} == {"exhaustive"}
    c2 = [f for f in findings if f["focus"] == "c2"]
    assert c2 and all("GI" in f["labels"] for f in c2)
    assert sorted(p.name for p in (rundir / "graphs").glob("*.json")) == ["a.json", "b.json", "c1.json", "c2.json"]

    assert landseer("report", rundir, "--unicode") == EXIT_OK
    summary = (rundir / "summary.md").read_text()
    assert "# Interference summary: four-tool" in summary
    assert "<table>" in (rundir / "summary.html").read_text()
    assert (rundir / "graphs" / "c2.dot").read_text().startswith('digraph "interference_c2"')


def test_analyze_threshold_override(tmp_path, cast, landseer):
    runs = tmp_path / "runs"
    rundir = runs / "four-tool"
    assert landseer("run", cast / "experiment.toml", "--runs", runs, "--workers", 4) == EXIT_OK

    assert landseer("analyze", rundir, "--exhaustive", "--tl", 4, "--th", 10) == EXIT_OK

    experiment = json.loads((rundir / "experiment.json").read_text())
    assert (experiment["thresholds"]["low"], experiment["thresholds"]["high"]) == (2.0, 5.0)
    analyses = json.loads((rundir / "analysis.json").read_text())
    assert {(a["thresholds"]["low"], a["thresholds"]["high"]) for a in analyses} == {(4.0, 10.0)}
    c2 = [f for f in json.loads((rundir / "findings.json").read_text()) if f["focus"] == "c2"]
    assert c2
    assert all(any(d["metric"] == "m_wm" and d["severity"] == "severe" for d in f["deltas"]) for f in c2)
    assert landseer("report", rundir) == EXIT_OK
    assert "t_l = 4, t_h = 10" in (rundir / "summary.md").read_text()

    assert landseer("analyze", rundir) == EXIT_OK
    analyses = json.loads((rundir / "analysis.json").read_text())
    assert {(a["thresholds"]["low"], a["thresholds"]["high"], a["gi_fraction"]) for a in analyses} == {(2.0, 5.0, 0.95)}
    assert landseer("report", rundir) == EXIT_OK
    assert "t_l = 2, t_h = 5" in (rundir / "summary.md").read_text()

    assert landseer("analyze", rundir, "--tl", 6, "--th", 5) == EXIT_INVALID


def test_worker_tags_reach_gpu_tools(tmp_path, cast, landseer, monkeypatch, capsys):
    descriptor = cast / "tools" / "c1.toml"
    text = descriptor.read_text()
    assert "resources = []" in text
    descriptor.write_text(text.replace("resources = []", 'resources = ["gpu"]'))

    assert landseer("run", cast / "experiment.toml", "--runs", tmp_path / "cpu") == EXIT_RUNTIME
    ledger = (tmp_path / "cpu" / "four-tool" / "ledger.jsonl").read_text().splitlines()
    assert any(json.loads(line)["message"] == "parked: no worker offers [gpu]" for line in ledger)
    capsys.readouterr()

    assert landseer("run", cast / "experiment.toml", "--runs", tmp_path / "flag",
                    "--workers", 2, "--worker-tags", "cpu,gpu") == EXIT_OK
    assert "Workers: 2 [cpu, gpu]" in capsys.readouterr().out

    monkeypatch.setenv("LANDSEER_WORKER_TAGS", "gpu, cpu")
    assert landseer("run", cast / "experiment.toml", "--runs", tmp_path / "env") == EXIT_OK
    assert "Workers: 1 [gpu, cpu]" in capsys.readouterr().out


def test_failing_tool_returns_runtime_exit(tmp_path, cast, landseer, capsys):
    descriptor = cast / "tools" / "c1.toml"
    text = descriptor.read_text()
    start = text.index("command = ")
    end = text.index("\n", start)
    descriptor.write_text(text[:start] + 'command = "false"' + text[end:])

    assert landseer("run", cast / "experiment.toml", "--runs", tmp_path / "runs") == EXIT_RUNTIME
    out = capsys.readouterr().out
    assert "failed:          8" in out
    unevaluated = json.loads((tmp_path / "runs" / "four-tool" / "unevaluated.json").read_text())
    assert len(unevaluated) == 12


def test_invalid_experiment_exits_one(tmp_path, cast, landseer, capsys):
    bad = cast / "bad.toml"
    bad.write_text('id = "bad"\nmodel = "m"\ndataset = "d"\n[candidates]\npre = ["ghost"]\n')
    assert landseer("validate", bad) == EXIT_INVALID
    assert "unknown tool" in capsys.readouterr().out


def test_missing_run_directory(tmp_path, landseer):
    assert landseer("analyze", tmp_path / "nowhere") == EXIT_INVALID
    (tmp_path / "planned").mkdir()
    (tmp_path / "planned" / "experiment.json").write_text("{}")
    assert landseer("analyze", tmp_path / "planned") == EXIT_RUNTIME
    assert landseer("report", tmp_path / "planned") == EXIT_RUNTIME


def test_onboard_sample_record(tmp_path, landseer):
    record = tmp_path / "dp_sgd.record.toml"
    shutil.copy(SAMPLES / "records" / "dp_sgd.record.toml", record)
    assert landseer("onboard", record) == EXIT_OK
    assert load_record(record).state is FunnelState.ONBOARDED


def test_onboard_rejects_outside_tolerance(tmp_path, landseer):
    record = tmp_path / "dp_sgd.record.toml"
    shutil.copy(SAMPLES / "records" / "dp_sgd.record.toml", record)
    assert landseer("onboard", record, "--tolerance", 0.5) == EXIT_INVALID
    assert load_record(record).state is FunnelState.REJECTED
