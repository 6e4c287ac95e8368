"""Command-line entry points.

`claw serve` starts the HTTP service; `claw run` drives a session directly
(no server); `claw plan` is a dry run; `claw trace`, `claw export`, and
`claw report` read session directories after the fact.
"""

from __future__ import annotations

from pathlib import Path

import click

from .abstract import abstraction
from .errors import ClawError
from .formats import FORMAT_IDS, export_episodes
from .intent import goal_from_intent, parse_intent
from .planner import CostModel, estimate_cost, plan as plan_workflow, workflow_deltas
from .session import SessionManager
from .state import canonical_json

_DATA_DIR_OPT = click.option(
    "--data-dir", envvar="CLAW_DATA_DIR", default="./claw-data",
    show_default=True, help="Root directory for session state.")
_SEED_OPT = click.option(
    "--seed", envvar="CLAW_SEED", default=0, show_default=True, type=int,
    help="Base seed for deterministic backends.")


def _echo_json(value):
    click.echo(canonical_json(value))


def _open_session(data_dir: str, session_id: str, seed: int):
    mgr = SessionManager(data_dir, seed=seed)
    try:
        return mgr.get(session_id)
    except ClawError:
        return mgr.create(session_id, seed)


@click.group()
def main():
    """Conversational workflow engine over scenes, datasets, and models."""


@main.command()
@_DATA_DIR_OPT
@_SEED_OPT
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8787, show_default=True, type=int)
def serve(data_dir, seed, host, port):
    """Start the HTTP/JSON service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(data_dir, seed=seed), host=host, port=port)


@main.command()
@click.argument("text")
@_DATA_DIR_OPT
@_SEED_OPT
@click.option("--session", "session_id", default="default", show_default=True)
@click.option("--yes", is_flag=True, help="Auto-approve plans that need it.")
def run(text, data_dir, seed, session_id, yes):
    """Execute one instruction in a session."""
    s = _open_session(data_dir, session_id, seed)
    out = s.handle_turn(text)
    if out["kind"] == "awaiting-approval" and yes:
        out = s.approve(out["plan_id"])
    _echo_json(out)
    if out["kind"] == "awaiting-approval":
        raise SystemExit(3)  # distinguishable exit for scripting


@main.command("plan")
@click.argument("text")
@_DATA_DIR_OPT
@_SEED_OPT
@click.option("--session", "session_id", default="default", show_default=True)
def plan_cmd(text, data_dir, seed, session_id):
    """Dry run: show the workflow, its cost estimate, and per-step effects."""
    s = _open_session(data_dir, session_id, seed)
    intent = parse_intent(text, s.dialog, s.ctx, s.env)
    goal = goal_from_intent(intent)
    wf = plan_workflow(intent, goal, s.ctx, s.lib, s.cost_model, s.env)
    estimate = estimate_cost(wf, s.cost_model, s.lib)
    state0 = abstraction(s.ctx, s.env.asset_categories())
    _echo_json({"workflow": wf.as_dict(), "estimate": estimate.as_dict(),
                "deltas": workflow_deltas(wf, state0, s.lib)})


@main.command()
@_DATA_DIR_OPT
@_SEED_OPT
@click.option("--session", "session_id", default="default", show_default=True)
def trace(data_dir, seed, session_id):
    """Print every execution trace recorded in a session."""
    s = _open_session(data_dir, session_id, seed)
    _echo_json({"traces": s.traces})


@main.command()
@_DATA_DIR_OPT
@_SEED_OPT
@click.option("--session", "session_id", default="default", show_default=True)
@click.option("--format", "format_id", type=click.Choice(FORMAT_IDS),
              required=True)
@click.option("--out", "out_dir", required=True,
              help="Destination directory for the export.")
@click.option("--task", default=None, help="Only episodes of this task.")
def export(data_dir, seed, session_id, format_id, out_dir, task):
    """Export a session's episodes to a directory."""
    s = _open_session(data_dir, session_id, seed)
    refs = s.ctx.data.episodes_of(task) if task else s.ctx.data.episodes
    episodes = [s.episodes.get(r.episode_id) for r in refs]
    manifest = export_episodes(episodes, format_id, out_dir)
    _echo_json({"manifest_id": manifest.manifest_id, "format": format_id,
                "episodes": len(episodes), "files": sorted(manifest.files),
                "out": str(Path(out_dir))})


@main.command()
@_DATA_DIR_OPT
@_SEED_OPT
@click.option("--session", "session_id", default="default", show_default=True)
@click.option("--out", "out_dir", default=None,
              help="Report directory [default: <session>/report].")
def report(data_dir, seed, session_id, out_dir):
    """Render figures and CSV summaries for a session."""
    from .report import render_report
    s = _open_session(data_dir, session_id, seed)
    out = Path(out_dir) if out_dir else s.root / "report"
    files = render_report(s.root, out)
    _echo_json({"report": files})


if __name__ == "__main__":  # pragma: no cover
    main()
