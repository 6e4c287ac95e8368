"""CLI flows: run, plan, trace, export, and report rendering."""

from __future__ import annotations

import csv
import json

import pytest
from click.testing import CliRunner

from claw.cli import main
from claw.errors import UnparsableIntent
from claw.formats import ExportManifest, check_format

CREATE = "CREATE scene: WITH table, mug ON table, ROBOT = franka"
COLLECT = "COLLECT 2 episodes OF task pick_mug"
RELIGHT = "EDIT scene: SET lighting.intensity = 0.4"
CODE = 'EDIT CODE reward_fn CONTENT "def reward(x):\n    return 1.0"'


@pytest.fixture
def runner():
    return CliRunner()


def _invoke(runner, *args):
    result = runner.invoke(main, list(args))
    payload = None
    if result.output.strip():
        payload = json.loads(result.output.strip().splitlines()[-1])
    return result, payload


def _run_turn(runner, data_dir, text, *extra):
    return _invoke(runner, "run", text, "--data-dir", str(data_dir), *extra)


class TestRun:
    def test_executes_and_prints_the_result(self, runner, tmp_path):
        result, out = _run_turn(runner, tmp_path, CREATE)
        assert result.exit_code == 0
        assert out["kind"] == "executed"
        assert out["status"] == "completed"
        assert len(out["context_hash"]) == 64

    def test_sessions_resume_across_invocations(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE)
        result, out = _run_turn(runner, tmp_path, COLLECT)
        assert result.exit_code == 0
        assert out["status"] == "completed"
        assert len(out["trace"]["steps"]) == 1

    def test_awaiting_approval_exits_3(self, runner, tmp_path):
        result, out = _run_turn(runner, tmp_path, CODE)
        assert result.exit_code == 3
        assert out["kind"] == "awaiting-approval"
        assert out["plan_id"]

    def test_yes_flag_auto_approves(self, runner, tmp_path):
        result, out = _run_turn(runner, tmp_path, CODE, "--yes")
        assert result.exit_code == 0
        assert out["kind"] == "executed"
        assert out["status"] == "completed"

    def test_parse_errors_escape_with_nonzero_exit(self, runner, tmp_path):
        result, _ = _run_turn(runner, tmp_path, "FROB the widget")
        assert result.exit_code != 0
        assert isinstance(result.exception, UnparsableIntent)

    def test_seed_is_recorded_in_the_log(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE, "--seed", "5")
        log = tmp_path / "sessions" / "default" / "events.jsonl"
        first = json.loads(log.read_text("utf-8").splitlines()[0])
        assert first["payload"]["seed"] == 5


class TestPlanAndTrace:
    def test_plan_is_a_dry_run(self, runner, tmp_path):
        result, out = _invoke(runner, "plan", CREATE, "--data-dir", str(tmp_path))
        assert result.exit_code == 0
        calls = out["workflow"]["calls"]
        assert len(calls) >= 3            # two spawns plus a robot swap
        assert len(out["deltas"]) == len(calls)
        assert out["estimate"]["human"] == 0.0
        assert out["estimate"]["j"] > 0.0

        result, out = _invoke(runner, "trace", "--data-dir", str(tmp_path))
        assert out == {"traces": []}      # nothing was executed

    def test_trace_lists_every_execution(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE)
        _run_turn(runner, tmp_path, RELIGHT)
        result, out = _invoke(runner, "trace", "--data-dir", str(tmp_path))
        assert result.exit_code == 0
        assert [t["status"] for t in out["traces"]] == ["completed", "completed"]


class TestExport:
    def test_export_writes_a_loadable_manifest(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE)
        _run_turn(runner, tmp_path, COLLECT)
        out_dir = tmp_path / "dump"
        result, out = _invoke(
            runner, "export", "--data-dir", str(tmp_path),
            "--format", "episode-folder", "--out", str(out_dir))
        assert result.exit_code == 0
        assert out["episodes"] == 2
        assert out["format"] == "episode-folder"
        manifest = ExportManifest.load(out_dir)
        assert manifest.manifest_id == out["manifest_id"]
        assert check_format(manifest).violations == []

    def test_export_filters_by_task(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE)
        _run_turn(runner, tmp_path, COLLECT)
        result, out = _invoke(
            runner, "export", "--data-dir", str(tmp_path),
            "--format", "sequential-record", "--out", str(tmp_path / "d2"),
            "--task", "pick_mug")
        assert result.exit_code == 0
        assert out["episodes"] == 2


class TestReport:
    def test_report_renders_csvs_and_figures(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE)
        _run_turn(runner, tmp_path, COLLECT)
        out_dir = tmp_path / "rep"
        result, out = _invoke(runner, "report", "--data-dir", str(tmp_path),
                              "--out", str(out_dir))
        assert result.exit_code == 0
        files = out["report"]
        assert set(files) == {"executions_csv", "steps_csv", "deviation_png",
                              "timeline_png", "episode_lengths_png"}

        with (out_dir / "executions.csv").open(newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:4] == ["execution", "workflow_id", "status", "steps"]
        assert len(rows) == 3             # header plus two executions
        assert rows[1][2] == "completed"
        assert rows[1][10] == "0.0"       # deviation column holds repr floats

        with (out_dir / "steps.csv").open(newline="") as fh:
            step_rows = list(csv.reader(fh))
        assert len(step_rows) > 2
        assert {r[5] for r in step_rows[1:]} == {"ok"}

        for key in ("deviation_png", "timeline_png", "episode_lengths_png"):
            data = (out_dir / files[key].rsplit("/", 1)[-1]).read_bytes()
            assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_report_handles_an_empty_session(self, runner, tmp_path):
        _invoke(runner, "plan", CREATE, "--data-dir", str(tmp_path))
        out_dir = tmp_path / "rep"
        result, out = _invoke(runner, "report", "--data-dir", str(tmp_path),
                              "--out", str(out_dir))
        assert result.exit_code == 0
        with (out_dir / "executions.csv").open(newline="") as fh:
            assert len(list(csv.reader(fh))) == 1      # header only
        assert (out_dir / "timeline.png").stat().st_size > 0

    def test_report_defaults_into_the_session_directory(self, runner, tmp_path):
        _run_turn(runner, tmp_path, CREATE)
        result, out = _invoke(runner, "report", "--data-dir", str(tmp_path))
        assert result.exit_code == 0
        default_dir = tmp_path / "sessions" / "default" / "report"
        assert (default_dir / "executions.csv").exists()
