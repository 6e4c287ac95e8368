"""Step verification, byte-exact rollback, and the bounded recovery cascade."""

from __future__ import annotations

import pytest

from claw.backends import MockBackend
from claw.executor import (LOSS_TOLERANCE, RecoveryPolicy, execute, verify_step)
from claw.goals import (DataGoals, EntityExists, FieldEquals, GoalSpec,
                        ModelGoals, Ref)
from claw.planner import CostModel, ObjectiveBreakdown, Workflow, plan
from claw.skills import SkillCall, make_call
from claw.snapshots import MemorySnapshotStore
from claw.state import (Checkpoint, CodeAsset, DataState, EpisodeRef,
                        EvalReport, ManifestRef, ModelState,
                        OperationalContext, ProvenanceRecord, canonical_bytes)

from conftest import Runner, build_scene


def _ctx(*categories, **kwargs) -> OperationalContext:
    return OperationalContext(scene=build_scene(*categories, **kwargs))


def _light_goal(value=0.4) -> GoalSpec:
    return GoalSpec(scene_goals=[FieldEquals("lighting.intensity", value)])


def _collect_goal(count, task="pick_mug") -> GoalSpec:
    return GoalSpec(data_goals=DataGoals(min_episodes=count, task_id=task))


def _probe(*conds) -> SkillCall:
    return SkillCall("probe", {}, list(conds))


def _run(goal, ctx, lib, env, backend=None, extras=None, **kw):
    """Plan for the goal, execute, and return (ctx, trace, store, initial)."""
    backend = backend or MockBackend(env=env)
    store = MemorySnapshotStore()
    wf = plan("intent-x", goal, ctx, lib, CostModel(), env, extras=extras)
    out, trace = execute(wf, ctx, lib, backend, store, env=env, goal=goal, **kw)
    return out, trace, store, wf


class TestVerifyStep:
    def test_clean_noop_passes(self):
        ctx = _ctx("table")
        verdict = verify_step(ctx, ctx, _probe())
        assert verdict.ok
        assert verdict.as_dict()["failed_postconditions"] == []

    def test_invalid_post_context_fails_without_postconditions(self):
        pre, post = _ctx("table"), _ctx("table")
        post.scene.lighting.intensity = 9.0
        verdict = verify_step(pre, post, _probe())
        assert not verdict.ok
        assert verdict.context_violations
        assert verdict.failed_postconditions == []

    def test_unknown_check_is_a_failure(self):
        ctx = _ctx()
        verdict = verify_step(ctx, ctx, _probe({"check": "levitate"}))
        assert not verdict.ok
        assert "unknown check" in verdict.failed_postconditions[0]["reason"]

    def test_both_gates_report_together(self):
        pre, post = _ctx(), _ctx()
        post.scene.lighting.intensity = 9.0
        verdict = verify_step(pre, post, _probe(
            {"check": "robot-is", "model": "franka"}))
        assert verdict.context_violations and verdict.failed_postconditions

    def test_entity_count_must_increase_by_one(self):
        pre = _ctx("table")
        cond = {"check": "entity-count-increased", "category": "mug"}
        assert not verify_step(pre, _ctx("table"), _probe(cond)).ok
        assert verify_step(pre, _ctx("table", "mug"), _probe(cond)).ok

    def test_relation_holds_matches_categories(self):
        pre = _ctx("table", "mug")
        post = _ctx("table", "mug", relations=[("mug_1", "on", "table_1")])
        cond = {"check": "relation-holds", "subject": "mug",
                "predicate": "on", "object": "table"}
        assert verify_step(pre, post, _probe(cond)).ok
        assert not verify_step(pre, pre, _probe(cond)).ok

    def test_entity_removed(self):
        pre = _ctx("table", "mug")
        cond = {"check": "entity-removed", "entity": "mug_1"}
        assert verify_step(pre, _ctx("table"), _probe(cond)).ok
        assert not verify_step(pre, pre, _probe(cond)).ok

    @pytest.mark.parametrize("actual, ok", [
        (0.4, True), (0.4 + 1e-10, True), (0.4 + 1e-8, False)])
    def test_lighting_tolerance(self, actual, ok):
        post = _ctx()
        post.scene.lighting.intensity = actual
        cond = {"check": "lighting-equals", "field": "intensity", "value": 0.4}
        assert verify_step(_ctx(), post, _probe(cond)).ok is ok

    def test_robot_is(self):
        cond = {"check": "robot-is", "model": "franka"}
        assert verify_step(_ctx(), _ctx(robot="franka"), _probe(cond)).ok
        assert not verify_step(_ctx(), _ctx(robot="ur5"), _probe(cond)).ok
        assert not verify_step(_ctx(), _ctx(), _probe(cond)).ok

    def test_camera_presence_checks(self):
        with_cam = _ctx(cameras=("cam_a",))
        present = {"check": "camera-present", "camera_id": "cam_a"}
        absent = {"check": "camera-absent", "camera_id": "cam_a"}
        assert verify_step(_ctx(), with_cam, _probe(present)).ok
        assert not verify_step(_ctx(), _ctx(), _probe(present)).ok
        assert verify_step(with_cam, _ctx(), _probe(absent)).ok
        assert not verify_step(with_cam, with_cam, _probe(absent)).ok

    def _data_ctx(self, flags):
        eps = [EpisodeRef(f"ep-{i}", "pick_mug", s, 24, 0)
               for i, s in enumerate(flags)]
        data = DataState(
            episodes=eps,
            provenance={e.episode_id: ProvenanceRecord("scene-x", 0, 0)
                        for e in eps})
        return OperationalContext(scene=build_scene(), data=data)

    def test_episodes_added_and_successful(self):
        pre = self._data_ctx([True])
        post = self._data_ctx([True, True, False])
        added = {"check": "episodes-added", "task": "pick_mug", "count": 2}
        good = {"check": "new-episodes-successful", "task": "pick_mug", "count": 2}
        assert verify_step(pre, post, _probe(added)).ok
        assert not verify_step(pre, post, _probe(good)).ok  # only 1 new success
        assert verify_step(pre, self._data_ctx([True, True, True]),
                           _probe(good)).ok

    def test_export_present(self):
        post = OperationalContext(data=DataState(exports={
            "video-stub": ManifestRef("m1", "video-stub", "p", [], "c")}))
        cond = {"check": "export-present", "format": "video-stub"}
        assert verify_step(OperationalContext(), post, _probe(cond)).ok
        assert not verify_step(OperationalContext(), OperationalContext(),
                               _probe(cond)).ok

    def test_export_valid_audits_the_disk(self, lib, env, tmp_path):
        backend = MockBackend(env=env, export_root=tmp_path)
        runner = Runner(lib, env, backend=backend,
                        ctx=_ctx("table", "mug", robot="franka"))
        runner.do("collect_episodes", task="pick_mug", count=1)
        runner.do("export_dataset", format="episode-folder")
        post = runner.ctx
        cond = {"check": "export-valid", "format": "episode-folder"}
        assert verify_step(post, post, _probe(cond), env, tmp_path).ok
        # ephemeral mode trusts the reference
        assert verify_step(post, post, _probe(cond), env, None).ok
        ref = post.data.exports["episode-folder"]
        victim = next(p for p in sorted((tmp_path / ref.path).rglob("*"))
                      if p.is_file() and p.name != "manifest.json")
        victim.write_bytes(b"garbage")
        verdict = verify_step(post, post, _probe(cond), env, tmp_path)
        assert not verdict.ok
        assert "violation" in verdict.failed_postconditions[0]["reason"]

    def test_export_valid_checks_the_stored_checksum(self, lib, env, tmp_path):
        backend = MockBackend(env=env, export_root=tmp_path)
        runner = Runner(lib, env, backend=backend,
                        ctx=_ctx("table", "mug", robot="franka"))
        runner.do("collect_episodes", task="pick_mug", count=1)
        runner.do("export_dataset", format="episode-folder")
        post = runner.ctx
        ref = post.data.exports["episode-folder"]
        post.data.exports["episode-folder"] = ManifestRef(
            ref.manifest_id, ref.format_id, ref.path,
            list(ref.episode_ids), "bogus")
        verdict = verify_step(post, post, _probe(
            {"check": "export-valid", "format": "episode-folder"}), env, tmp_path)
        assert "checksum" in verdict.failed_postconditions[0]["reason"]

    def test_code_status(self):
        post = OperationalContext(model=ModelState(code_assets=[
            CodeAsset("fn", "d", "valid")]))
        cond = {"check": "code-status", "asset_id": "fn", "status": "valid"}
        assert verify_step(OperationalContext(), post, _probe(cond)).ok
        cond_bad = {"check": "code-status", "asset_id": "fn", "status": "invalid"}
        assert not verify_step(OperationalContext(), post, _probe(cond_bad)).ok

    def test_checkpoint_added_requires_a_fresh_one(self):
        exports = {"episode-folder":
                   ManifestRef("mani-1", "episode-folder", "p", [], "c")}
        ckpt = Checkpoint("ck-1", "mani-1", {"loss": 0.3})
        pre = OperationalContext(data=DataState(exports=dict(exports)),
                                 model=ModelState(checkpoints=[ckpt]))
        cond = {"check": "checkpoint-added", "format": "episode-folder"}
        assert not verify_step(pre, pre.clone(), _probe(cond)).ok
        post = pre.clone()
        post.model.checkpoints.append(Checkpoint("ck-2", "mani-1", {"loss": 0.2}))
        assert verify_step(pre, post, _probe(cond)).ok

    @pytest.mark.parametrize("loss, ok", [
        (0.3, True), (0.3 + LOSS_TOLERANCE / 2, True), (0.3 + 1e-8, False)])
    def test_loss_at_most_tolerance(self, loss, ok):
        # parent dataset must resolve or context validation masks the check
        post = OperationalContext(
            data=DataState(dataset_history=["m"]),
            model=ModelState(checkpoints=[Checkpoint("ck", "m", {"loss": loss})]))
        cond = {"check": "loss-at-most", "target": 0.3}
        assert verify_step(OperationalContext(), post, _probe(cond)).ok is ok

    def test_report_completed_ignores_stale_and_failed(self):
        done = EvalReport("model_alpha", "libero", 0.5, 10, 10.0, "completed")
        failed = EvalReport("model_alpha", "libero", 0.0, 0, 0.0, "failed")
        cond = {"check": "report-completed", "model": "model_alpha",
                "benchmark": "libero"}
        pre = OperationalContext(model=ModelState(eval_reports=[done]))
        assert not verify_step(pre, pre.clone(), _probe(cond)).ok  # not fresh
        post = pre.clone()
        post.model.eval_reports.append(failed)
        assert not verify_step(pre, post, _probe(cond)).ok
        post.model.eval_reports.append(done)
        assert verify_step(pre, post, _probe(cond)).ok

    def test_asset_available(self, env):
        cond = {"check": "asset-available", "category": "mug"}
        assert verify_step(OperationalContext(), OperationalContext(),
                           _probe(cond), env).ok
        missing = {"check": "asset-available", "category": "vase"}
        assert not verify_step(OperationalContext(), OperationalContext(),
                               _probe(missing), env).ok
        assert not verify_step(OperationalContext(), OperationalContext(),
                               _probe(cond), None).ok


class TestExecuteFlow:
    def test_single_step_happy_path(self, lib, env):
        ctx = _ctx("table")
        out, trace, store, wf = _run(_light_goal(), ctx, lib, env)
        assert trace.status == "completed"
        assert [s.status for s in trace.steps] == ["ok"]
        assert out.scene.lighting.intensity == 0.4
        assert trace.spent() == (0.0, 1.0, 0.0)
        restored = store.restore(trace.final_snapshot)
        assert canonical_bytes(restored) == canonical_bytes(out)

    def test_satisfied_goal_runs_an_empty_workflow(self, lib, env):
        ctx = _ctx("table")
        out, trace, store, wf = _run(_light_goal(0.6), ctx, lib, env)
        assert wf.calls == []
        assert trace.status == "completed"
        assert trace.steps == []
        assert trace.final_snapshot == trace.initial_snapshot

    def test_multi_step_chain_orders_by_preconditions(self, lib, env, tmp_path):
        goal = GoalSpec(
            data_goals=DataGoals(min_episodes=1, task_id="pick_mug",
                                 required_formats=["episode-folder"]),
            model_goals=ModelGoals(train_format="episode-folder", train_epochs=2))
        ctx = _ctx("table", "mug", robot="franka")
        backend = MockBackend(env=env, export_root=tmp_path)
        out, trace, store, wf = _run(goal, ctx, lib, env, backend=backend)
        assert [c.skill_id for c in wf.calls] == \
            ["collect_episodes", "export_dataset", "train_model"]
        assert trace.status == "completed"
        assert len(out.model.checkpoints) == 1
        assert trace.spent() == (0.0, 2.0 + 1.0 + 3.0, 1.0 + 0.0 + 2.0)

    def test_approval_gates_human_cost_skills(self, lib, env):
        goal = GoalSpec(model_goals=ModelGoals(required_valid_code=["reward_fn"]))
        extras = {"code_content": "return 1.0"}
        ctx = OperationalContext()
        denied, trace, store, wf = _run(goal, ctx, lib, env, extras=extras,
                                        approve=lambda call: False)
        assert trace.status == "aborted"
        assert "approval denied" in trace.abort_reason
        assert trace.steps == []       # denied before the attempt ran
        assert canonical_bytes(denied) == canonical_bytes(ctx)

        granted, trace2, _, _ = _run(goal, ctx, lib, env, extras=extras,
                                     approve=lambda call: True)
        assert trace2.status == "completed"
        assert granted.model.code_asset("reward_fn").status == "valid"

        ungated, trace3, _, _ = _run(goal, ctx, lib, env, extras=extras)
        assert trace3.status == "completed"

    def test_precondition_error_is_captured_not_raised(self, lib, env):
        wf = Workflow("w-1", "i-1",
                      [make_call(lib.get("remove_entity"), {"entity": "ghost_1"})],
                      ObjectiveBreakdown())
        ctx = _ctx("table")
        backend = MockBackend(env=env)
        out, trace = execute(wf, ctx, lib, backend, MemorySnapshotStore(), env=env)
        assert trace.status == "aborted"
        assert "recovery is exhausted" in trace.abort_reason
        first = trace.steps[0]
        assert first.status == "failed"
        assert first.verdict.error
        assert first.rolled_back is False        # nothing was applied
        assert canonical_bytes(out) == canonical_bytes(ctx)


class TestRollback:
    def test_fault_rolls_back_byte_exact_and_aborts(self, lib, env):
        ctx = _ctx("table", "mug", robot="franka", version=2)
        before = canonical_bytes(ctx)
        backend = MockBackend(env=env, fault_rates={"set_lighting": 1.0})
        out, trace, store, wf = _run(_light_goal(), ctx, lib, env, backend=backend)
        assert trace.status == "aborted"
        assert "replanning failed" in trace.abort_reason
        assert canonical_bytes(out) == before
        assert all(s.rolled_back for s in trace.steps)
        assert trace.repairs == 1 and trace.replans == 0
        assert trace.steps[0].recovery == "repair"
        assert trace.steps[-1].recovery == "abort"

    def test_abort_restores_the_initial_snapshot_not_midpoints(self, lib, env,
                                                               tmp_path):
        goal = GoalSpec(data_goals=DataGoals(
            min_episodes=1, task_id="pick_mug",
            required_formats=["episode-folder"]))
        ctx = _ctx("table", "mug", robot="franka")
        before = canonical_bytes(ctx)
        backend = MockBackend(env=env, export_root=tmp_path,
                              fault_rates={"export_dataset": 1.0,
                                           "export_dataset_alt": 1.0})
        out, trace, store, wf = _run(goal, ctx, lib, env, backend=backend)
        assert trace.status == "aborted"
        assert trace.steps[0].status == "ok"          # collect landed mid-run
        assert canonical_bytes(out) == before         # but abort unwound it
        assert out.data.episodes == []

    def test_failure_without_mutation_skips_rollback(self, lib, env):
        wf = Workflow("w-2", "i-2",
                      [make_call(lib.get("remove_entity"), {"entity": "mug_9"})],
                      ObjectiveBreakdown())
        out, trace = execute(wf, _ctx("table"), lib, MockBackend(env=env),
                             MemorySnapshotStore(), env=env)
        assert all(not s.rolled_back for s in trace.steps)


class TestRecovery:
    def test_repair_retries_once_and_succeeds(self, lib, env):
        # seed 1 fault draws: 0.134 (fires at 0.5), 0.847 (passes)
        backend = MockBackend(env=env, seed=1, fault_rates={"set_lighting": 0.5})
        out, trace, store, wf = _run(_light_goal(), _ctx("table"), lib, env,
                                     backend=backend)
        assert trace.status == "completed-after-recovery"
        assert (trace.repairs, trace.substitutions, trace.replans) == (1, 0, 0)
        assert [s.status for s in trace.steps] == ["failed", "ok"]
        assert trace.steps[0].recovery == "repair"
        assert out.scene.lighting.intensity == 0.4
        assert trace.recovered

    def test_substitution_uses_the_effect_signature_peer(self, lib, env):
        backend = MockBackend(env=env, fault_rates={"add_entity": 1.0})
        goal = GoalSpec(scene_goals=[EntityExists(Ref("mug", category="mug"))])
        out, trace, store, wf = _run(goal, OperationalContext(), lib, env,
                                     backend=backend)
        assert trace.status == "completed-after-recovery"
        assert (trace.repairs, trace.substitutions, trace.replans) == (1, 1, 0)
        assert trace.steps[-1].call.skill_id == "add_entity_alt"
        assert trace.steps[-1].status == "ok"
        assert len(out.scene.entities_of("mug")) == 1

    def test_replan_after_substitute_also_fails(self, lib, env):
        # seed 31 draws: 0.112, 0.099 fire at 0.4; the alt always faults;
        # the post-replan draw 0.684 passes
        backend = MockBackend(env=env, seed=31,
                              fault_rates={"collect_episodes": 0.4,
                                           "collect_episodes_alt": 1.0})
        ctx = _ctx("table", "mug", robot="franka")
        out, trace, store, wf = _run(_collect_goal(2), ctx, lib, env,
                                     backend=backend)
        assert trace.status == "completed-after-recovery"
        assert (trace.repairs, trace.substitutions, trace.replans) == (1, 1, 1)
        assert len(out.data.episodes) == 2
        assert all(r.success for r in out.data.episodes)

    def test_recovery_budget_exhaustion_aborts(self, lib, env):
        backend = MockBackend(env=env,
                              fault_rates={"collect_episodes": 1.0,
                                           "collect_episodes_alt": 1.0})
        ctx = _ctx("table", "mug", robot="franka")
        before = canonical_bytes(ctx)
        out, trace, store, wf = _run(_collect_goal(1), ctx, lib, env,
                                     backend=backend)
        assert trace.status == "aborted"
        assert (trace.repairs, trace.substitutions, trace.replans) == (3, 3, 2)
        assert len(trace.steps) == 9
        assert canonical_bytes(out) == before

    def test_zero_budget_policy_aborts_immediately(self, lib, env):
        backend = MockBackend(env=env, fault_rates={"set_lighting": 1.0})
        store = MemorySnapshotStore()
        goal = _light_goal()
        ctx = _ctx("table")
        wf = plan("intent-x", goal, ctx, lib, CostModel(), env)
        out, trace = execute(wf, ctx, lib, backend, store, env=env, goal=None,
                             policy=RecoveryPolicy(0, 0, 0))
        assert trace.status == "aborted"
        assert len(trace.steps) == 1
        assert (trace.repairs, trace.substitutions, trace.replans) == (0, 0, 0)
