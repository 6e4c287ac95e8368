"""Workflow execution: snapshot, ground, apply, verify, and recover.

Every step runs against a fresh snapshot of the operational context.  A step
commits only when the post-step context passes full validation and every
postcondition attached to the call holds; otherwise the context is restored
byte-for-byte and a bounded recovery cascade kicks in: retry the same call
once, substitute the next skill with the same effect signature, replan the
rest of the workflow (twice per workflow at most), then abort back to the
workflow's initial snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .backends import bind
from .errors import ClawError, PreconditionFailure
from .formats import ExportManifest, check_format
from .planner import CostModel, Workflow, replan as _replan
from .skills import SkillCall, SkillLibrary, check_preconditions, make_call
from .state import OperationalContext, canonical_bytes, validate_context

LOSS_TOLERANCE = 1e-9
LIGHT_TOLERANCE = 1e-9


@dataclass
class RecoveryPolicy:
    max_repairs_per_step: int = 1
    max_substitutions_per_step: int = 1
    max_replans: int = 2


@dataclass
class VerifierVerdict:
    ok: bool
    context_violations: list = field(default_factory=list)
    failed_postconditions: list = field(default_factory=list)
    error: str = ""

    def as_dict(self) -> dict:
        return {"ok": self.ok, "context_violations": list(self.context_violations),
                "failed_postconditions": list(self.failed_postconditions),
                "error": self.error}


@dataclass
class StepRecord:
    index: int
    attempt: int
    call: SkillCall
    binding: str
    pre_snapshot: str
    verdict: VerifierVerdict
    status: str                    # "ok" | "failed"
    rolled_back: bool = False
    recovery: str = ""             # action taken AFTER this attempt failed
    details: dict = field(default_factory=dict)
    cost: tuple = (0.0, 0.0, 0.0)  # human, sys_time, sys_tokens

    def as_dict(self) -> dict:
        return {"index": self.index, "attempt": self.attempt,
                "call": self.call.as_dict(), "binding": self.binding,
                "pre_snapshot": self.pre_snapshot, "verdict": self.verdict.as_dict(),
                "status": self.status, "rolled_back": self.rolled_back,
                "recovery": self.recovery, "details": self.details,
                "cost": list(self.cost)}


@dataclass
class ExecutionTrace:
    workflow_id: str
    intent_id: str
    status: str = "completed"
    steps: list[StepRecord] = field(default_factory=list)
    initial_snapshot: str = ""
    final_snapshot: str = ""
    repairs: int = 0
    substitutions: int = 0
    replans: int = 0
    abort_reason: str = ""

    @property
    def recovered(self) -> bool:
        return (self.repairs + self.substitutions + self.replans) > 0

    def spent(self) -> tuple:
        """Total (human, sys_time, sys_tokens) across all attempts."""
        h = t = k = 0.0
        for s in self.steps:
            h += s.cost[0]
            t += s.cost[1]
            k += s.cost[2]
        return (h, t, k)

    def as_dict(self) -> dict:
        return {"workflow_id": self.workflow_id, "intent_id": self.intent_id,
                "status": self.status, "steps": [s.as_dict() for s in self.steps],
                "initial_snapshot": self.initial_snapshot,
                "final_snapshot": self.final_snapshot,
                "repairs": self.repairs, "substitutions": self.substitutions,
                "replans": self.replans, "abort_reason": self.abort_reason}


# --- postcondition checks ---
# Each check returns None when satisfied, else a short reason.  Checks compare
# the committed pre-step context with the candidate post-step context, so a
# backend that silently dropped the change cannot pass.

def _mention_matches(scene, entity_id: str, mention: str) -> bool:
    if entity_id == mention:
        return True
    e = scene.entity(entity_id)
    return e is not None and e.category == mention


def _matching_count(scene, mention: str) -> int:
    return sum(1 for e in scene.entities
               if e.entity_id == mention or e.category == mention)


def _chk_entity_count_increased(pre, post, cond, call, env, export_root):
    before = len(pre.scene.entities_of(cond["category"]))
    after = len(post.scene.entities_of(cond["category"]))
    if after != before + 1:
        return f"{cond['category']} count {before} -> {after}, expected +1"
    return None


def _chk_relation_holds(pre, post, cond, call, env, export_root):
    for s, p, o in post.scene.relations:
        if p == cond["predicate"] and _mention_matches(post.scene, s, cond["subject"]) \
                and _mention_matches(post.scene, o, cond["object"]):
            return None
    return f"no relation {cond['subject']} {cond['predicate']} {cond['object']}"


def _chk_entity_removed(pre, post, cond, call, env, export_root):
    mention = cond.get("entity") or cond.get("category")
    before = _matching_count(pre.scene, mention)
    after = _matching_count(post.scene, mention)
    if after != max(0, before - 1):
        return f"{mention!r} count {before} -> {after}, expected -1"
    return None


def _chk_lighting_equals(pre, post, cond, call, env, export_root):
    actual = getattr(post.scene.lighting, cond["field"])
    if abs(actual - float(cond["value"])) > LIGHT_TOLERANCE:
        return f"lighting.{cond['field']} is {actual}, wanted {cond['value']}"
    return None


def _chk_robot_is(pre, post, cond, call, env, export_root):
    robot = post.scene.robot
    if robot is None or robot.model != cond["model"]:
        return f"robot is {robot.model if robot else None}, wanted {cond['model']}"
    return None


def _chk_camera_present(pre, post, cond, call, env, export_root):
    if post.scene.camera(cond["camera_id"]) is None:
        return f"camera {cond['camera_id']} absent"
    return None


def _chk_camera_absent(pre, post, cond, call, env, export_root):
    if post.scene.camera(cond["camera_id"]) is not None:
        return f"camera {cond['camera_id']} still present"
    return None


def _chk_episodes_added(pre, post, cond, call, env, export_root):
    before = len(pre.data.episodes_of(cond["task"]))
    after = len(post.data.episodes_of(cond["task"]))
    if after < before + int(cond["count"]):
        return f"{cond['task']} episodes {before} -> {after}, wanted +{cond['count']}"
    return None


def _chk_new_episodes_successful(pre, post, cond, call, env, export_root):
    pre_ids = {r.episode_id for r in pre.data.episodes}
    fresh = [r for r in post.data.episodes_of(cond["task"])
             if r.episode_id not in pre_ids]
    good = sum(1 for r in fresh if r.success)
    if good < int(cond["count"]):
        return f"only {good}/{cond['count']} new {cond['task']} episodes succeeded"
    return None


def _chk_export_present(pre, post, cond, call, env, export_root):
    if cond["format"] not in post.data.exports:
        return f"no export in format {cond['format']}"
    return None


def _chk_export_valid(pre, post, cond, call, env, export_root):
    ref = post.data.exports.get(cond["format"])
    if ref is None:
        return f"no export in format {cond['format']}"
    if export_root is None:
        return None  # nothing on disk to audit in ephemeral mode
    try:
        manifest = ExportManifest.load(Path(export_root) / ref.path)
    except (OSError, ValueError) as exc:
        return f"manifest unreadable: {exc}"
    if manifest.manifest_id != ref.manifest_id:
        return "manifest id does not match context reference"
    if manifest.checksum() != ref.checksum:
        return "manifest checksum does not match context reference"
    report = check_format(manifest)
    if report.violations:
        v = report.violations[0]
        return f"format violation at {v.file}:{v.path}: {v.rule}"
    return None


def _chk_code_status(pre, post, cond, call, env, export_root):
    asset = post.model.code_asset(cond["asset_id"])
    if asset is None:
        return f"code asset {cond['asset_id']} absent"
    if asset.status != cond["status"]:
        return f"code asset {cond['asset_id']} is {asset.status}, wanted {cond['status']}"
    return None


def _train_parent(post, call):
    fmt = call.params.get("dataset_format")
    ref = post.data.exports.get(fmt) if fmt else None
    return ref.manifest_id if ref else None


def _chk_checkpoint_added(pre, post, cond, call, env, export_root):
    ref = post.data.exports.get(cond["format"])
    if ref is None:
        return f"no dataset export in format {cond['format']} to train on"
    pre_set = {(c.checkpoint_id, tuple(sorted(c.metrics.items())))
               for c in pre.model.checkpoints}
    for c in post.model.checkpoints:
        if c.parent_dataset == ref.manifest_id and \
                (c.checkpoint_id, tuple(sorted(c.metrics.items()))) not in pre_set:
            return None
    return f"no new checkpoint trained on the {cond['format']} dataset"


def _chk_loss_at_most(pre, post, cond, call, env, export_root):
    parent = _train_parent(post, call)
    losses = [c.metrics.get("loss") for c in post.model.checkpoints
              if parent is None or c.parent_dataset == parent]
    losses = [v for v in losses if v is not None]
    if not losses:
        return "no checkpoint with a loss metric"
    best = min(losses)
    if best > float(cond["target"]) + LOSS_TOLERANCE:
        return f"best loss {best} exceeds target {cond['target']}"
    return None


def _chk_report_completed(pre, post, cond, call, env, export_root):
    fresh = post.model.eval_reports[len(pre.model.eval_reports):]
    for r in fresh:
        if r.model_id == cond["model"] and r.benchmark_id == cond["benchmark"] \
                and r.status == "completed":
            return None
    return f"no completed evaluation of {cond['model']} on {cond['benchmark']}"


def _chk_asset_available(pre, post, cond, call, env, export_root):
    if env is None:
        return "no environment to check asset availability against"
    if cond["category"] not in env.assets.categories():
        return f"no asset provides category {cond['category']}"
    return None


POSTCONDITION_CHECKS = {
    "entity-count-increased": _chk_entity_count_increased,
    "relation-holds": _chk_relation_holds,
    "entity-removed": _chk_entity_removed,
    "lighting-equals": _chk_lighting_equals,
    "robot-is": _chk_robot_is,
    "camera-present": _chk_camera_present,
    "camera-absent": _chk_camera_absent,
    "episodes-added": _chk_episodes_added,
    "new-episodes-successful": _chk_new_episodes_successful,
    "export-present": _chk_export_present,
    "export-valid": _chk_export_valid,
    "code-status": _chk_code_status,
    "checkpoint-added": _chk_checkpoint_added,
    "loss-at-most": _chk_loss_at_most,
    "report-completed": _chk_report_completed,
    "asset-available": _chk_asset_available,
}


def verify_step(pre: OperationalContext, post: OperationalContext,
                call: SkillCall, env=None, export_root=None) -> VerifierVerdict:
    """A step passes iff the post context validates clean AND every attached
    postcondition holds; both gates, always."""
    violations = [v.as_dict() for v in validate_context(post)]
    failed = []
    for cond in call.postconditions:
        check = POSTCONDITION_CHECKS.get(cond.get("check"))
        if check is None:
            failed.append({**cond, "reason": f"unknown check {cond.get('check')!r}"})
            continue
        reason = check(pre, post, cond, call, env, export_root)
        if reason is not None:
            failed.append({**cond, "reason": reason})
    return VerifierVerdict(not violations and not failed, violations, failed)


# --- execution ---

def _contexts_differ(a: OperationalContext, b: OperationalContext) -> bool:
    return canonical_bytes(a, validate=False) != canonical_bytes(b, validate=False)


def execute(workflow: Workflow, ctx: OperationalContext, lib: SkillLibrary,
            backend, snapshots, env=None, goal=None,
            cost_model: CostModel | None = None,
            policy: RecoveryPolicy | None = None,
            seed: int | None = None, approve=None,
            export_root=None) -> tuple[OperationalContext, ExecutionTrace]:
    """Run a workflow to completion, recovery, or abort.

    Returns the resulting context and a full trace; never raises for step
    failures (the trace says what happened).  ``approve`` is called for any
    skill with a human cost; a falsy return aborts the workflow.
    """
    env = env or getattr(backend, "env", None)
    export_root = export_root if export_root is not None \
        else getattr(backend, "export_root", None)
    policy = policy or RecoveryPolicy()
    cost_model = cost_model or CostModel()
    trace = ExecutionTrace(workflow.workflow_id, workflow.intent_id)
    trace.initial_snapshot = snapshots.snapshot(ctx)

    queue: list[SkillCall] = list(workflow.calls)
    source = workflow            # workflow the queue currently comes from
    pos = 0
    repairs: dict[int, int] = {}
    subs: dict[int, int] = {}
    tried: dict[int, set] = {}
    index = 0

    def abort(reason: str):
        trace.status = "aborted"
        trace.abort_reason = reason
        if trace.steps:
            trace.steps[-1].recovery = "abort"
        restored = snapshots.restore(trace.initial_snapshot)
        trace.final_snapshot = trace.initial_snapshot
        return restored, trace

    while pos < len(queue):
        call = queue[pos]
        spec = lib.get(call.skill_id)
        tried.setdefault(pos, set()).add(call.skill_id)
        if spec.cost.human > 0 and approve is not None and not approve(call):
            return abort(f"approval denied for {call.skill_id}")

        pre_snapshot = snapshots.snapshot(ctx)
        attempt = repairs.get(pos, 0) + subs.get(pos, 0)
        post_ctx = None
        details: dict = {}
        try:
            violated = check_preconditions(spec, call.params, ctx, env)
            if violated:
                raise PreconditionFailure(
                    f"{call.skill_id}: {', '.join(violated)}")
            action = bind(call, lib, env, backend, ctx, seed=seed)
            post_ctx, details = backend.apply(action, ctx)
            verdict = verify_step(ctx, post_ctx, call, env, export_root)
            binding = action.binding
        except ClawError as exc:
            verdict = VerifierVerdict(False, error=str(exc))
            binding = spec.binding
        record = StepRecord(
            index=index, attempt=attempt, call=call, binding=binding,
            pre_snapshot=pre_snapshot, verdict=verdict,
            status="ok" if verdict.ok else "failed", details=details,
            cost=(spec.cost.human, spec.cost.sys_time, spec.cost.sys_tokens))
        trace.steps.append(record)
        index += 1

        if verdict.ok:
            ctx = post_ctx
            pos += 1
            continue

        # failed: roll back iff the candidate context differs from the pre-step one
        if post_ctx is not None and _contexts_differ(post_ctx, ctx):
            record.rolled_back = True
            ctx = snapshots.restore(pre_snapshot)

        if repairs.get(pos, 0) < policy.max_repairs_per_step:
            repairs[pos] = repairs.get(pos, 0) + 1
            trace.repairs += 1
            record.recovery = "repair"
            continue

        if subs.get(pos, 0) < policy.max_substitutions_per_step:
            candidates = [s for s in lib.by_signature(spec.effect_signature)
                          if s.skill_id not in tried[pos]]
            if candidates:
                subs[pos] = subs.get(pos, 0) + 1
                trace.substitutions += 1
                record.recovery = "substitute"
                queue[pos] = make_call(candidates[0], dict(call.params))
                continue

        if goal is not None and trace.replans < policy.max_replans:
            try:
                # replan excludes the call that actually failed, which after a
                # substitution is queue[pos], not the original workflow's call
                live = Workflow(source.workflow_id, source.intent_id,
                                list(queue), source.objective)
                new_wf = _replan(live, pos, verdict, ctx, lib,
                                 cost_model, goal, env)
            except ClawError as exc:
                return abort(f"replanning failed: {exc}")
            trace.replans += 1
            record.recovery = "replan"
            source = new_wf
            queue = list(new_wf.calls)
            pos = 0
            repairs.clear()
            subs.clear()
            tried.clear()
            continue

        return abort(f"step {pos} ({call.skill_id}) failed and recovery is exhausted")

    trace.status = "completed-after-recovery" if trace.recovered else "completed"
    trace.final_snapshot = snapshots.snapshot(ctx)
    return ctx, trace
