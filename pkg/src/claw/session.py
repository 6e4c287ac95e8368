"""Conversational sessions: turns in, hash-chained events out.

A session owns one operational context plus its snapshot store, episode
store, export directory, and an append-only ``events.jsonl``.  Every event
carries the context hash before and after it, and a chain hash over its own
body plus the previous chain value, so the log is tamper-evident and replay
can prove it reproduces the exact same final state.

Plans whose skills carry a human cost wait for approval; approving spends one
human attention unit, which is accounted here, not in the planner objective.
"""

from __future__ import annotations

import hashlib
import json
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .assets import Environment, default_environment
from .backends import MockBackend
from .deviation import measure_deviation
from .episodes import EpisodeStore
from .errors import (AlreadyExecuted, CorruptLog, SessionBusy, StalePlan,
                     UnknownPlan, UnknownSession, UnknownSnapshot)
from .executor import RecoveryPolicy, execute
from .intent import DialogueContext, UserTurn, goal_from_intent, parse_intent
from .planner import (CostModel, ObjectiveBreakdown, Workflow, estimate_cost,
                      plan as plan_workflow)
from .skills import SkillCall, SkillLibrary, load_library
from .snapshots import SnapshotStore, content_hash
from .state import OperationalContext, canonical_bytes, canonical_json

GENESIS = "0" * 64
APPROVAL_ATTENTION_UNITS = 1.0


@dataclass
class Event:
    seq: int
    kind: str
    payload: dict
    pre_hash: str
    post_hash: str
    prev: str
    chain: str = ""

    def body(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload,
                "pre_hash": self.pre_hash, "post_hash": self.post_hash,
                "prev": self.prev}

    def compute_chain(self) -> str:
        return hashlib.sha256(canonical_json(self.body()).encode()).hexdigest()

    def as_dict(self) -> dict:
        return {**self.body(), "chain": self.chain}

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(d["seq"], d["kind"], d["payload"], d["pre_hash"],
                   d["post_hash"], d["prev"], d.get("chain", ""))


def read_events(path: str | Path) -> list[Event]:
    """Parse and verify the whole log; CorruptLog names the failing line."""
    path = Path(path)
    if not path.exists():
        return []
    events: list[Event] = []
    prev_chain = GENESIS
    prev_post = None
    for offset, line in enumerate(path.read_text("utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            ev = Event.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptLog(f"line {offset}: unparsable event: {exc}", offset=offset)
        if ev.seq != len(events):
            raise CorruptLog(f"line {offset}: seq {ev.seq}, expected {len(events)}",
                             offset=offset)
        if ev.prev != prev_chain:
            raise CorruptLog(f"line {offset}: chain link broken", offset=offset)
        if ev.compute_chain() != ev.chain:
            raise CorruptLog(f"line {offset}: chain hash mismatch", offset=offset)
        if prev_post is not None and ev.pre_hash != prev_post:
            raise CorruptLog(f"line {offset}: context hash discontinuity",
                             offset=offset)
        events.append(ev)
        prev_chain = ev.chain
        prev_post = ev.post_hash
    return events


def _workflow_from_dict(d: dict) -> Workflow:
    obj = d.get("objective", {})
    return Workflow(
        d["workflow_id"], d["intent_id"],
        [SkillCall.from_dict(c) for c in d["calls"]],
        ObjectiveBreakdown(obj.get("human", 0.0), obj.get("sys_time", 0.0),
                           obj.get("sys_tokens", 0.0),
                           obj.get("predicted_deviation", 0.0), obj.get("j", 0.0)),
        d.get("context_hash", ""))


@dataclass
class PendingPlan:
    workflow: Workflow
    goal: object
    intent: object
    baseline_hash: str      # context hash the plan was made against
    turn_text: str


class Session:
    """One conversation: a context, its stores, and its event log."""

    def __init__(self, root: str | Path, session_id: str,
                 seed: int = 0, lib: SkillLibrary | None = None,
                 env: Environment | None = None,
                 fault_rates: dict | None = None,
                 cost_model: CostModel | None = None,
                 policy: RecoveryPolicy | None = None):
        self.root = Path(root)
        self.session_id = session_id
        self.seed = seed
        self.lib = lib or load_library()
        self.cost_model = cost_model or CostModel()
        self.policy = policy or RecoveryPolicy()
        self.root.mkdir(parents=True, exist_ok=True)
        self.snapshots = SnapshotStore(self.root / "snapshots")
        self.episodes = EpisodeStore(self.root / "episodes")
        self.export_root = self.root / "exports"
        self.export_root.mkdir(parents=True, exist_ok=True)
        self.env = env or default_environment(self.root / "assets")
        self.dialog = DialogueContext()
        self.events_path = self.root / "events.jsonl"
        self.events: list[Event] = []
        self.pending: dict[str, PendingPlan] = {}
        self.executed: set[str] = set()
        self.attention_units = 0.0
        self.traces: list[dict] = []
        self._busy = False

        existing = read_events(self.events_path)
        if existing:
            # a resumed session keeps the seed it was created with
            self.seed = existing[0].payload.get("seed", seed)
        self.backend = MockBackend(env=self.env, episode_store=self.episodes,
                                   export_root=self.export_root, seed=self.seed,
                                   fault_rates=fault_rates)
        if existing:
            self._resume(existing)
        else:
            self.ctx = OperationalContext()
            h0 = self.snapshots.snapshot(self.ctx)
            self._append("session-created", {"session_id": session_id, "seed": seed},
                         h0, h0)

    # --- event log ---

    def _append(self, kind: str, payload: dict, pre_hash: str, post_hash: str) -> Event:
        ev = Event(len(self.events), kind, payload, pre_hash, post_hash,
                   self.events[-1].chain if self.events else GENESIS)
        ev.chain = ev.compute_chain()
        with self.events_path.open("a", encoding="utf-8") as fh:
            fh.write(canonical_json(ev.as_dict()) + "\n")
        self.events.append(ev)
        return ev

    def _resume(self, events: list[Event]):
        self.events = events
        last = events[-1]
        self.ctx = self.snapshots.restore(last.post_hash)
        plans: dict[str, Event] = {}
        for ev in events:
            if ev.kind == "plan":
                plans[ev.payload["workflow"]["workflow_id"]] = ev
            elif ev.kind == "execution":
                self.executed.add(ev.payload["trace"]["workflow_id"])
                self.traces.append(ev.payload["trace"])
                plans.pop(ev.payload["trace"]["workflow_id"], None)
            elif ev.kind == "approval":
                self.attention_units += ev.payload.get("human_units", 0.0)
                if not ev.payload.get("approved", False):
                    plans.pop(ev.payload.get("plan_id"), None)
        for wid, ev in plans.items():
            # plans never acted on come back as pending; the goal is rebuilt
            # from the original turn text so nothing lossy is deserialized
            wf = _workflow_from_dict(ev.payload["workflow"])
            self.pending[wid] = PendingPlan(wf, None, None, ev.pre_hash,
                                            ev.payload.get("turn_text", ""))

    # --- public surface ---

    @property
    def context_hash(self) -> str:
        return content_hash(canonical_bytes(self.ctx))

    def handle_turn(self, turn: UserTurn | str) -> dict:
        """Parse, ground, plan, and (when no approval is needed) execute."""
        if self._busy:
            raise SessionBusy(f"session {self.session_id} is executing")
        if self.pending:
            raise SessionBusy(
                f"plans awaiting approval: {sorted(self.pending)}; "
                "approve or reject them first")
        self._busy = True
        try:
            return self._handle_turn(turn)
        finally:
            self._busy = False

    def _handle_turn(self, turn: UserTurn | str) -> dict:
        if isinstance(turn, str):
            turn = UserTurn(turn)
        intent = parse_intent(turn, self.dialog, self.ctx, self.env)
        goal = goal_from_intent(intent)
        wf = plan_workflow(intent, goal, self.ctx, self.lib, self.cost_model, self.env)
        wf.context_hash = self.context_hash
        estimate = estimate_cost(wf, self.cost_model, self.lib)
        h = self.context_hash
        self._append("turn", {"text": turn.text, "intent": intent.as_dict()}, h, h)
        self._append("plan", {"workflow": wf.as_dict(),
                              "estimate": estimate.as_dict(),
                              "turn_text": turn.text}, h, h)
        self.dialog.append(turn, intent.intent_class, h)

        needs_approval = any(self.lib.get(c.skill_id).cost.human > 0
                             for c in wf.calls)
        if needs_approval:
            self.pending[wf.workflow_id] = PendingPlan(wf, goal, intent, h, turn.text)
            return {"kind": "awaiting-approval", "plan_id": wf.workflow_id,
                    "workflow": wf.as_dict(), "estimate": estimate.as_dict()}
        return self._run(wf, goal, baseline_hash=h)

    def approve(self, plan_id: str, approved: bool = True) -> dict:
        """Resolve a pending plan; approval costs one attention unit."""
        if self._busy:
            raise SessionBusy(f"session {self.session_id} is executing")
        if plan_id in self.executed:
            raise AlreadyExecuted(f"plan {plan_id} already ran")
        entry = self.pending.get(plan_id)
        if entry is None:
            raise UnknownPlan(f"no pending plan {plan_id}")
        if entry.baseline_hash != self.context_hash:
            raise StalePlan(
                f"plan {plan_id} was made against context {entry.baseline_hash[:12]}, "
                f"but the context is now {self.context_hash[:12]}")
        self._busy = True
        try:
            h = self.context_hash
            units = APPROVAL_ATTENTION_UNITS if approved else 0.0
            self._append("approval", {"plan_id": plan_id, "approved": approved,
                                      "human_units": units}, h, h)
            self.attention_units += units
            del self.pending[plan_id]
            if not approved:
                return {"kind": "rejected", "plan_id": plan_id}
            if entry.goal is None:
                # pending plan restored from the log: rebuild goal from text
                intent = parse_intent(UserTurn(entry.turn_text), self.dialog,
                                      self.ctx, self.env)
                entry.goal = goal_from_intent(intent)
            return self._run(entry.workflow, entry.goal, baseline_hash=h)
        finally:
            self._busy = False

    def _run(self, wf: Workflow, goal, baseline_hash: str) -> dict:
        baseline_scene = self.ctx.scene
        pre = baseline_hash
        ctx, trace = execute(wf, self.ctx, self.lib, self.backend, self.snapshots,
                             env=self.env, goal=goal, cost_model=self.cost_model,
                             policy=self.policy, seed=self.seed,
                             export_root=self.export_root)
        self.ctx = ctx
        self.executed.add(wf.workflow_id)
        report = measure_deviation(self.ctx, goal, baseline_scene=baseline_scene,
                                   weights=self.cost_model.weights,
                                   export_root=self.export_root)
        payload = {"trace": trace.as_dict(),
                   "deviation": {"terms": report.terms, "families": report.families,
                                 "total": report.total}}
        self._append("execution", payload, pre, self.context_hash)
        self.traces.append(payload["trace"])
        return {"kind": "executed", "plan_id": wf.workflow_id,
                "status": trace.status, "trace": payload["trace"],
                "deviation": payload["deviation"],
                "context_hash": self.context_hash}

    def rollback(self, snapshot_id: str) -> dict:
        """Restore the context to any recorded snapshot."""
        if self._busy:
            raise SessionBusy(f"session {self.session_id} is executing")
        if not self.snapshots.has(snapshot_id):
            raise UnknownSnapshot(f"no snapshot {snapshot_id}")
        self._busy = True
        try:
            pre = self.context_hash
            self.ctx = self.snapshots.restore(snapshot_id)
            self.pending.clear()
            self._append("rollback", {"snapshot_id": snapshot_id}, pre, snapshot_id)
            return {"kind": "rolled-back", "snapshot_id": snapshot_id,
                    "context_hash": self.context_hash}
        finally:
            self._busy = False

    def replay_check(self) -> dict:
        """Re-verify the log and confirm it lands on the live context."""
        events = read_events(self.events_path)
        final = events[-1].post_hash if events else None
        ok = final == self.context_hash
        return {"events": len(events), "final_hash": final,
                "live_hash": self.context_hash, "match": ok}


class SessionManager:
    """Sessions under ``data_dir/sessions/<id>``; loads lazily from disk."""

    def __init__(self, data_dir: str | Path, seed: int = 0,
                 lib: SkillLibrary | None = None,
                 fault_rates: dict | None = None,
                 cost_model: CostModel | None = None):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.lib = lib or load_library()
        self.fault_rates = dict(fault_rates or {})
        self.cost_model = cost_model or CostModel()
        self._live: dict[str, Session] = {}

    def create(self, session_id: str | None = None,
               seed: int | None = None) -> Session:
        sid = session_id or f"s{uuid.uuid4().hex[:12]}"
        if sid in self._live or (self.sessions_dir / sid / "events.jsonl").exists():
            raise SessionBusy(f"session {sid} already exists")
        s = Session(self.sessions_dir / sid, sid,
                    seed=self.seed if seed is None else seed,
                    lib=self.lib, fault_rates=self.fault_rates,
                    cost_model=self.cost_model)
        self._live[sid] = s
        return s

    def get(self, session_id: str) -> Session:
        if session_id in self._live:
            return self._live[session_id]
        root = self.sessions_dir / session_id
        if not (root / "events.jsonl").exists():
            raise UnknownSession(f"no session {session_id}")
        s = Session(root, session_id, seed=self.seed, lib=self.lib,
                    fault_rates=self.fault_rates, cost_model=self.cost_model)
        self._live[session_id] = s
        return s

    def ids(self) -> list[str]:
        stored = {p.name for p in self.sessions_dir.iterdir() if p.is_dir()}
        return sorted(stored | set(self._live))
