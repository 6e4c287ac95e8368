"""Session reporting: matplotlib figures plus delimited summaries.

Everything renders from the event log and stored episodes, never from live
objects, so a report can be produced for any session directory at any time.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # render to files; no display in headless runs

import matplotlib.pyplot as plt

from .episodes import Episode
from .session import read_events

_STATUS_COLORS = {"ok": "#3a7d44", "failed": "#b33a3a"}


def _executions(events) -> list[dict]:
    return [e.payload for e in events if e.kind == "execution"]


def _load_episodes(session_root: Path) -> list[Episode]:
    ep_dir = session_root / "episodes"
    out = []
    if ep_dir.is_dir():
        for path in sorted(ep_dir.glob("*.json")):
            out.append(Episode.from_dict(json.loads(path.read_text("utf-8"))))
    return out


def _write_executions_csv(executions: list[dict], path: Path):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["execution", "workflow_id", "status", "steps", "repairs",
                    "substitutions", "replans", "human", "sys_time",
                    "sys_tokens", "deviation_total"])
        for i, ex in enumerate(executions):
            tr = ex["trace"]
            h = t = k = 0.0
            for s in tr["steps"]:
                h += s["cost"][0]
                t += s["cost"][1]
                k += s["cost"][2]
            w.writerow([i, tr["workflow_id"], tr["status"], len(tr["steps"]),
                        tr["repairs"], tr["substitutions"], tr["replans"],
                        repr(h), repr(t), repr(k),
                        repr(ex["deviation"]["total"])])


def _write_steps_csv(executions: list[dict], path: Path):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["execution", "step", "attempt", "skill_id", "binding",
                    "status", "rolled_back", "recovery"])
        for i, ex in enumerate(executions):
            for s in ex["trace"]["steps"]:
                w.writerow([i, s["index"], s["attempt"], s["call"]["skill_id"],
                            s["binding"], s["status"], s["rolled_back"],
                            s["recovery"]])


def _fig_deviation(executions: list[dict], path: Path):
    fig, ax = plt.subplots(figsize=(7, 4))
    if executions:
        terms = executions[-1]["deviation"]["terms"]
        names = sorted(terms)
        ax.bar(names, [terms[n] for n in names], color="#4a6fa5")
        ax.set_ylim(0, max(1.0, max(terms.values()) * 1.1) if terms else 1.0)
    ax.set_ylabel("term value")
    ax.set_title("deviation breakdown (latest execution)")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _fig_timeline(executions: list[dict], path: Path):
    fig, ax = plt.subplots(figsize=(8, 4))
    y = 0
    labels = []
    for i, ex in enumerate(executions):
        for s in ex["trace"]["steps"]:
            color = _STATUS_COLORS.get(s["status"], "#888888")
            ax.barh(y, 1, left=s["index"], color=color, edgecolor="white")
            if s["recovery"]:
                ax.text(s["index"] + 0.5, y, s["recovery"][0].upper(),
                        ha="center", va="center", fontsize=7, color="white")
        labels.append(f"run {i}: {ex['trace']['status']}")
        y += 1
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("step attempt index")
    ax.set_title("execution timeline (green ok, red failed; R/S/A markers)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _fig_episode_lengths(episodes: list[Episode], path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    if episodes:
        lengths = [e.length for e in episodes]
        bins = range(min(lengths), max(lengths) + 2)
        ax.hist(lengths, bins=bins, color="#4a6fa5", edgecolor="white")
    ax.set_xlabel("episode length (steps)")
    ax.set_ylabel("count")
    ax.set_title("recorded episode lengths")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report(session_root: str | Path, out_dir: str | Path) -> dict:
    """Render figures and CSVs for one session; returns {name: path}."""
    session_root = Path(session_root)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events = read_events(session_root / "events.jsonl")
    executions = _executions(events)
    episodes = _load_episodes(session_root)

    files = {
        "executions_csv": out / "executions.csv",
        "steps_csv": out / "steps.csv",
        "deviation_png": out / "deviation_breakdown.png",
        "timeline_png": out / "timeline.png",
        "episode_lengths_png": out / "episode_lengths.png",
    }
    _write_executions_csv(executions, files["executions_csv"])
    _write_steps_csv(executions, files["steps_csv"])
    _fig_deviation(executions, files["deviation_png"])
    _fig_timeline(executions, files["timeline_png"])
    _fig_episode_lengths(episodes, files["episode_lengths_png"])
    return {k: str(v) for k, v in files.items()}
