"""Context model: canonical serialization, validation, round trips."""

from __future__ import annotations

import json
import math

import pytest

from claw.errors import InvalidContext
from claw.state import (CameraState, Checkpoint, CodeAsset, DataState, Entity,
                        EpisodeRef, EvalReport, LightingState, ManifestRef,
                        ModelState, OperationalContext, Pose,
                        ProvenanceRecord, RobotState, SceneState,
                        canonical_bytes, canonical_json, context_from_bytes,
                        validate_context)

from conftest import build_scene


def _full_context() -> OperationalContext:
    """One context exercising every field of the triple."""
    scene = build_scene("table", "mug", robot="franka", cameras=("cam_main",),
                        relations=[("mug_1", "on", "table_1")], version=7)
    data = DataState(
        episodes=[EpisodeRef("stack-s1-0000", "stack", True, 24, 17)],
        provenance={"stack-s1-0000": ProvenanceRecord("main", 7, 17)},
    )
    data.record_export(ManifestRef("m" * 16, "hdf5-compact", "exports/hdf5-compact/x",
                                   ["stack-s1-0000"], "c" * 64))
    model = ModelState(
        code_assets=[CodeAsset("reward_fn", "a" * 64, "valid")],
        checkpoints=[Checkpoint("ckpt-1", "m" * 16, {"loss": 0.25})],
        eval_reports=[EvalReport("pi-small", "tabletop-v1", 0.5, 10, 5.0)],
    )
    return OperationalContext(scene=scene, data=data, model=model)


class TestCanonicalForm:
    """Serialization must be deterministic down to the byte."""

    def test_same_context_same_bytes(self):
        a = _full_context()
        b = _full_context()
        assert canonical_bytes(a) == canonical_bytes(b)

    def test_clone_preserves_bytes(self):
        ctx = _full_context()
        assert canonical_bytes(ctx.clone()) == canonical_bytes(ctx)

    def test_round_trip_is_identity(self):
        ctx = _full_context()
        raw = canonical_bytes(ctx)
        assert canonical_bytes(context_from_bytes(raw)) == raw

    def test_entity_order_does_not_matter(self):
        a = _full_context()
        b = _full_context()
        b.scene.entities.reverse()
        assert canonical_bytes(a) == canonical_bytes(b)

    def test_keys_sorted_and_compact(self):
        raw = canonical_json({"b": 1, "a": [2.5, 0.1]})
        assert raw == '{"a":[2.5,0.1],"b":1}'

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    def test_schema_version_embedded(self):
        d = _full_context().as_dict()
        assert d["state_schema"] == 1
        d["state_schema"] = 99
        with pytest.raises(ValueError):
            OperationalContext.from_dict(d)

    def test_validation_gate_on_serialize(self):
        ctx = _full_context()
        ctx.scene.lighting.intensity = 4.0
        with pytest.raises(InvalidContext):
            canonical_bytes(ctx)
        # diagnostic renderings can skip the gate
        assert canonical_bytes(ctx, validate=False)


class TestValidation:
    """validate_context is total and catches each invariant class."""

    def test_clean_context_has_no_violations(self):
        assert validate_context(_full_context()) == []

    def test_empty_context_is_valid(self):
        assert validate_context(OperationalContext()) == []

    @pytest.mark.parametrize("mutate,rule", [
        (lambda c: c.scene.entities.append(
            Entity("mug_1", "mug", "mug_01", Pose())), "entity-id-unique"),
        (lambda c: setattr(c.scene.entities[0].pose, "orientation",
                           (0.5, 0.0, 0.0, 0.0)), "quaternion-unit-norm"),
        (lambda c: setattr(c.scene.entities[0], "scale", -1.0), "scale-positive"),
        (lambda c: c.scene.relations.append(("mug_1", "hovering", "table_1")),
         "relation-predicate-known"),
        (lambda c: c.scene.relations.append(("ghost", "on", "table_1")),
         "relation-endpoint-exists"),
        (lambda c: c.scene.cameras.append(CameraState("cam_main")), "camera-id-unique"),
        (lambda c: setattr(c.scene.cameras[0], "fov_deg", 200.0), "camera-fov-range"),
        (lambda c: setattr(c.scene.lighting, "intensity", -0.2),
         "lighting-intensity-range"),
        (lambda c: setattr(c.scene.lighting, "color_temp", 0.0),
         "lighting-color-temp-positive"),
        (lambda c: setattr(c.scene, "version", -3), "version-nonnegative-int"),
        (lambda c: c.data.provenance.pop("stack-s1-0000"), "episode-provenance-exists"),
        (lambda c: c.data.exports["hdf5-compact"].episode_ids.append("ghost"),
         "export-episodes-exist"),
        (lambda c: setattr(c.model.checkpoints[0], "parent_dataset", "nope"),
         "checkpoint-dataset-resolves"),
        (lambda c: setattr(c.model.code_assets[0], "status", "weird"),
         "code-status-known"),
        (lambda c: setattr(c.model.eval_reports[0], "success_rate", 1.5),
         "eval-success-rate-range"),
    ])
    def test_violation_detected(self, mutate, rule):
        ctx = _full_context()
        mutate(ctx)
        assert rule in {v.rule for v in validate_context(ctx)}

    def test_nonfinite_pose_flagged(self):
        ctx = _full_context()
        ctx.scene.entities[0].pose.position = (math.inf, 0.0, 0.0)
        assert "pose-finite" in {v.rule for v in validate_context(ctx)}

    def test_never_raises_on_garbage(self):
        ctx = _full_context()
        ctx.scene.relations.append(("broken",))  # wrong arity
        rules = {v.rule for v in validate_context(ctx)}
        assert "well-formed" in rules


class TestAccessors:
    def test_entity_lookup(self):
        scene = build_scene("table", "mug")
        assert scene.entity("mug_1").category == "mug"
        assert scene.entity("nope") is None
        assert [e.entity_id for e in scene.entities_of("table")] == ["table_1"]

    def test_known_datasets_tracks_history(self):
        data = DataState()
        data.record_export(ManifestRef("aaa", "hdf5-compact", "p1"))
        data.record_export(ManifestRef("bbb", "hdf5-compact", "p2"))
        # aaa was displaced in exports but stays resolvable for lineage
        assert data.known_datasets() == {"aaa", "bbb"}

    def test_report_for_prefers_completed(self):
        model = ModelState(eval_reports=[
            EvalReport("m", "b", 0.0, 0, 0.0, "failed"),
            EvalReport("m", "b", 0.75, 10, 5.0, "completed"),
            EvalReport("m", "other", 0.9, 10, 5.0, "completed"),
        ])
        got = model.report_for("m", "b")
        assert got.status == "completed" and got.success_rate == 0.75
        assert model.report_for("m", "missing") is None

    def test_report_for_falls_back_to_failed(self):
        model = ModelState(eval_reports=[EvalReport("m", "b", 0.0, 0, 0.0, "failed")])
        assert model.report_for("m", "b").status == "failed"

    def test_episodes_of_sorted(self):
        data = DataState(episodes=[
            EpisodeRef("t-s0-0001", "t", True, 5, 0),
            EpisodeRef("t-s0-0000", "t", True, 5, 0),
            EpisodeRef("u-s0-0000", "u", True, 5, 0),
        ])
        assert [e.episode_id for e in data.episodes_of("t")] == [
            "t-s0-0000", "t-s0-0001"]


class TestFloatFormatting:
    def test_floats_survive_json_round_trip(self):
        pose = Pose(position=(0.1 + 0.2, 1e-7, -0.0))
        back = Pose.from_dict(json.loads(canonical_json(pose.as_dict())))
        assert back.position == pose.position

    def test_ints_are_coerced_to_float(self):
        p = Pose(position=(1, 2, 3))
        assert all(isinstance(v, float) for v in p.position)
        l = LightingState(intensity=1)
        assert isinstance(l.intensity, float)
