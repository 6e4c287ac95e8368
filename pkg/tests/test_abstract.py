"""Abstract planning state: purity and summarization rules."""

from __future__ import annotations

from claw.abstract import AbstractState, abstraction
from claw.state import (Checkpoint, CodeAsset, DataState, EpisodeRef,
                        EvalReport, ManifestRef, ModelState,
                        OperationalContext, ProvenanceRecord)

from conftest import build_scene


def _ctx():
    scene = build_scene("table", "mug", "mug", robot="ur5", cameras=("cam_a",),
                        relations=[("mug_1", "on", "table_1")])
    # build_scene names by category; give the second mug its own id
    scene.entities[2].entity_id = "mug_2"
    data = DataState(
        episodes=[EpisodeRef("pick_mug-s0-0000", "pick_mug", True, 10, 0),
                  EpisodeRef("pick_mug-s0-0001", "pick_mug", False, 4, 0)],
        provenance={"pick_mug-s0-0000": ProvenanceRecord("main", 1, 0),
                    "pick_mug-s0-0001": ProvenanceRecord("main", 1, 0)},
    )
    data.record_export(ManifestRef("mani-a", "sequential-record", "p",
                                   ["pick_mug-s0-0000"], "x"))
    model = ModelState(
        code_assets=[CodeAsset("reward", "h" * 64, "valid"),
                     CodeAsset("scoring", "h" * 64, "invalid")],
        checkpoints=[Checkpoint("ckpt-1", "mani-a")],
        eval_reports=[EvalReport("model_alpha", "libero", 0.5, 10, 5.0),
                      EvalReport("model_alpha", "robotwin", 0.0, 0, 2.0, "failed")],
    )
    return OperationalContext(scene=scene, data=data, model=model)


class TestAbstraction:
    def test_summary_fields(self):
        a = abstraction(_ctx(), frozenset({"mug", "table"}))
        assert a.entity_counts == (("mug", 2), ("table", 1))
        assert a.count("mug") == 2 and a.count("vase") == 0
        assert a.relations == frozenset({("mug", "on", "table")})
        assert a.robot == "ur5"
        assert a.camera_ids == frozenset({"cam_a"})
        assert a.episodes_for("pick_mug") == 1  # failures do not count
        assert a.export_formats == frozenset({"sequential-record"})
        assert a.trained_formats == frozenset({"sequential-record"})
        assert a.code_ids == frozenset({"reward", "scoring"})
        assert a.code_valid == frozenset({"reward"})
        assert a.report_pairs == frozenset({("model_alpha", "libero")})
        assert a.resource_units == 7.0  # failed runs still cost
        assert a.asset_categories == frozenset({"mug", "table"})

    def test_pure_and_hashable(self):
        a = abstraction(_ctx())
        b = abstraction(_ctx())
        assert a == b and hash(a) == hash(b)
        assert abstraction(_ctx(), frozenset({"mug"})) != a

    def test_version_invisible(self):
        ctx = _ctx()
        before = abstraction(ctx)
        ctx.scene.version += 5
        assert abstraction(ctx) == before

    def test_checkpoint_against_retired_manifest(self):
        # a re-export displaces the manifest; the trained marker goes with it
        ctx = _ctx()
        ctx.data.record_export(ManifestRef("mani-b", "sequential-record", "p2",
                                           ["pick_mug-s0-0000"], "y"))
        a = abstraction(ctx)
        assert a.trained_formats == frozenset()
        assert a.export_formats == frozenset({"sequential-record"})


class TestAbstractTransforms:
    def test_add_remove_entity(self):
        s = AbstractState().add_entity("mug").add_entity("mug").add_entity("table")
        assert s.count("mug") == 2
        s = s.remove_entity("mug")
        assert s.count("mug") == 1
        s = s.remove_entity("mug")
        assert s.count("mug") == 0
        assert s.entity_counts == (("table", 1),)

    def test_last_instance_takes_relations(self):
        s = AbstractState(entity_counts=(("mug", 2), ("table", 1)),
                          relations=frozenset({("mug", "on", "table")}))
        assert s.remove_entity("mug").relations  # one mug left, relation stays
        assert s.remove_entity("mug").remove_entity("mug").relations == frozenset()

    def test_add_episodes(self):
        s = AbstractState().add_episodes("pick_mug", 3).add_episodes("pick_mug", 2)
        assert s.episodes_for("pick_mug") == 5

    def test_with_is_functional(self):
        s = AbstractState()
        t = s.with_(robot="franka", lighting_intensity=0.4)
        assert s.robot == "" and t.robot == "franka"
        assert t.lighting == {"intensity": 0.4, "color_temp": 4500.0}

    def test_as_dict_stable(self):
        a = abstraction(_ctx())
        assert a.as_dict() == abstraction(_ctx()).as_dict()
