"""Skill library semantics: schemas, preconditions, effects, frame property."""

from __future__ import annotations

import dataclasses

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from claw.abstract import AbstractState
from claw.assets import default_environment
from claw.errors import (DuplicateSkill, PreconditionFailure, SchemaMismatch,
                         UnknownSkill)
from claw.skills import (Cost, ParamSpec, SkillLibrary, SkillSpec,
                         apply_abstract_effect, check_preconditions,
                         load_library, make_call, postconditions_for,
                         validate_params)
from claw.state import OperationalContext

from conftest import build_scene

# which AbstractState fields each write group may touch
_GROUP_FIELDS = {
    "S": {"entity_counts", "relations", "robot", "lighting_intensity",
          "lighting_color_temp", "camera_ids"},
    "D": {"episode_counts", "export_formats"},
    "M": {"trained_formats", "code_ids", "code_valid", "report_pairs",
          "resource_units"},
    "A": {"asset_categories"},
}


def _spec(skill_id="s1", signature="sig", params=(), human=0.0, **kw):
    defaults = dict(family="scene-editing", effect_signature=signature,
                    binding="b", params=tuple(params), reads=frozenset("S"),
                    writes=frozenset("S"), preconditions=(), effect="noop",
                    cost=Cost(human=human))
    defaults.update(kw)
    return SkillSpec(skill_id=skill_id, **defaults)


class TestLibraryRegistry:
    def test_builtin_library_loads(self, lib):
        assert len(lib.ids()) == 19
        assert lib.has("add_entity") and lib.has("ingest_asset")
        with pytest.raises(UnknownSkill):
            lib.get("teleport")

    def test_signature_groups_sorted(self, lib):
        group = [s.skill_id for s in lib.by_signature("collect-episodes")]
        assert group == ["collect_episodes", "collect_episodes_alt"]
        assert lib.by_signature("no-such-signature") == []

    def test_duplicate_rejected(self):
        lib = SkillLibrary().register(_spec("a"))
        with pytest.raises(DuplicateSkill):
            lib.register(_spec("a"))

    def test_signature_requires_matching_schema(self):
        lib = SkillLibrary().register(
            _spec("a", params=[ParamSpec("x", "int", True)]))
        with pytest.raises(SchemaMismatch):
            lib.register(_spec("b", params=[ParamSpec("x", "string", True)]))
        # same schema is the substitutability contract
        lib.register(_spec("c", params=[ParamSpec("x", "int", True)]))

    def test_substitutes_share_schema_in_builtin(self, lib):
        for spec in lib.all():
            for sibling in lib.by_signature(spec.effect_signature):
                assert sibling.schema_key() == spec.schema_key()


class TestParamValidation:
    def test_required_and_unknown(self):
        spec = _spec(params=[ParamSpec("category", "category", True),
                             ParamSpec("count", "int", False)])
        validate_params(spec, {"category": "mug"})
        with pytest.raises(SchemaMismatch):
            validate_params(spec, {})
        with pytest.raises(SchemaMismatch):
            validate_params(spec, {"category": "mug", "surprise": 1})

    @pytest.mark.parametrize("type_name,good,bad", [
        ("int", 3, 3.5),
        ("int", 0, True),
        ("float", 2.5, "x"),
        ("bool", True, 1),
        ("relation", "on", "under"),
        ("format", "video-stub", "tarball"),
        ("source", "catalog", "torrent"),
        ("string", "hello", ""),
    ])
    def test_type_checks(self, type_name, good, bad):
        spec = _spec(params=[ParamSpec("v", type_name, True)])
        validate_params(spec, {"v": good})
        with pytest.raises(SchemaMismatch):
            validate_params(spec, {"v": bad})


class TestPreconditions:
    def test_concrete_entity_checks(self, lib, env):
        spec = lib.get("remove_entity")
        ctx = OperationalContext(scene=build_scene("table", "mug"))
        assert check_preconditions(spec, {"entity": "mug_1"}, ctx, env) == []
        assert check_preconditions(spec, {"entity": "mug"}, ctx, env) == []
        assert check_preconditions(spec, {"entity": "vase"}, ctx, env) == \
            ["entity-exists"]

    def test_asset_availability(self, lib, env):
        spec = lib.get("add_entity")
        ctx = OperationalContext()
        assert check_preconditions(spec, {"category": "mug"}, ctx, env) == []
        assert "asset-available" in check_preconditions(
            spec, {"category": "vase"}, ctx, env)
        env.assets.ingest({"kind": "catalog", "ref": "vase_01"})
        assert check_preconditions(spec, {"category": "vase"}, ctx, env) == []

    def test_task_entity_coverage(self, lib, env):
        spec = lib.get("collect_episodes")
        params = {"task": "set_table", "count": 1}
        bare = OperationalContext(scene=build_scene("table", "plate"))
        assert "task-entities-present" in check_preconditions(spec, params, bare, env)
        ready = OperationalContext(scene=build_scene("table", "plate", "mug"))
        assert check_preconditions(spec, params, ready, env) == []

    def test_abstract_effect_guards(self, lib, env):
        spec = lib.get("set_robot")
        with pytest.raises(PreconditionFailure):
            apply_abstract_effect(spec, {"model": "cyborg"}, AbstractState(), env)


class TestPostconditions:
    def test_collect_gets_success_check(self, lib):
        call = make_call(lib.get("collect_episodes"),
                         {"task": "pick_mug", "count": 3})
        checks = [c["check"] for c in call.postconditions]
        assert checks == ["episodes-added", "new-episodes-successful"]

    def test_spawn_with_relation(self, lib):
        post = postconditions_for(lib.get("add_entity"),
                                  {"category": "mug", "relation": "on",
                                   "anchor": "table_1"})
        assert post[0] == {"check": "entity-count-increased", "category": "mug"}
        assert post[1]["check"] == "relation-holds"

    def test_train_target_optional(self, lib):
        spec = lib.get("train_model")
        base = postconditions_for(spec, {"dataset_format": "video-stub"})
        assert [c["check"] for c in base] == ["checkpoint-added"]
        with_target = postconditions_for(
            spec, {"dataset_format": "video-stub", "target_loss": 0.3})
        assert [c["check"] for c in with_target] == ["checkpoint-added", "loss-at-most"]

    def test_call_round_trip(self, lib):
        call = make_call(lib.get("set_lighting"), {"intensity": 0.4})
        from claw.skills import SkillCall
        assert SkillCall.from_dict(call.as_dict()).canonical() == call.canonical()


# --- frame property: effects stay inside their declared write groups ---

_CATS = ("mug", "table", "block", "vase")
_TASKS = ("pick_mug", "pick_block", "stack_blocks")
_FMTS = ("hierarchical-container", "episode-folder", "sequential-record",
         "video-stub")

# read-only under the property tests, so sharing one instance is safe
_ENV = default_environment()


@st.composite
def abstract_states(draw):
    counts = draw(st.dictionaries(st.sampled_from(_CATS),
                                  st.integers(min_value=1, max_value=3),
                                  max_size=4))
    cats = sorted(counts)
    relations = frozenset()
    if len(cats) >= 2:
        relations = frozenset(draw(st.sets(
            st.tuples(st.sampled_from(cats), st.sampled_from(("on", "near")),
                      st.sampled_from(cats)), max_size=2)))
    exports = frozenset(draw(st.sets(st.sampled_from(_FMTS), max_size=2)))
    code = frozenset(draw(st.sets(st.sampled_from(("reward", "scoring")), max_size=2)))
    return AbstractState(
        entity_counts=tuple(sorted(counts.items())),
        relations=relations,
        robot=draw(st.sampled_from(("", "franka", "ur5"))),
        lighting_intensity=draw(st.sampled_from((0.2, 0.6, 1.0))),
        camera_ids=frozenset(draw(st.sets(st.sampled_from(("cam_a", "cam_b")),
                                          max_size=2))),
        episode_counts=tuple(sorted(draw(st.dictionaries(
            st.sampled_from(_TASKS), st.integers(min_value=1, max_value=5),
            max_size=2)).items())),
        export_formats=exports,
        trained_formats=frozenset(draw(st.sets(st.sampled_from(_FMTS), max_size=1))) & exports,
        code_ids=code,
        code_valid=frozenset(draw(st.sets(st.sampled_from(("reward", "scoring")),
                                          max_size=2))) & code,
        report_pairs=frozenset(draw(st.sets(st.tuples(
            st.sampled_from(("model_alpha", "model_beta")),
            st.sampled_from(("libero", "robotwin"))), max_size=2))),
        resource_units=float(draw(st.integers(min_value=0, max_value=40))),
        asset_categories=frozenset(_CATS) | frozenset({"plate", "bottle"}),
    )


@st.composite
def skill_invocations(draw):
    skill_id = draw(st.sampled_from((
        "detect_objects", "add_entity", "add_entity_alt", "remove_entity",
        "move_entity", "set_lighting", "set_robot", "add_camera",
        "remove_camera", "collect_episodes", "export_dataset",
        "edit_model_code", "train_model", "eval_model", "ingest_asset")))
    cat = draw(st.sampled_from(_CATS))
    params_by_skill = {
        "detect_objects": {},
        "add_entity": {"category": cat, "relation": "on", "anchor_category": "table"},
        "add_entity_alt": {"category": cat},
        "remove_entity": {"entity": cat},
        "move_entity": {"entity": cat, "relation": "near", "anchor": "table"},
        "set_lighting": {"intensity": draw(st.sampled_from((0.1, 0.5, 0.9)))},
        "set_robot": {"model": draw(st.sampled_from(("franka", "ur5")))},
        "add_camera": {"camera_id": "cam_new"},
        "remove_camera": {"camera_id": draw(st.sampled_from(("cam_a", "cam_b")))},
        "collect_episodes": {"task": draw(st.sampled_from(_TASKS)),
                             "count": draw(st.integers(min_value=1, max_value=4))},
        "export_dataset": {"format": draw(st.sampled_from(_FMTS))},
        "edit_model_code": {"asset_id": "reward", "content": "def reward(): return 1"},
        "train_model": {"dataset_format": draw(st.sampled_from(_FMTS)),
                        "epochs": draw(st.integers(min_value=1, max_value=5))},
        "eval_model": {"model": "model_alpha", "benchmark": "libero",
                       "episodes": draw(st.integers(min_value=1, max_value=10))},
        "ingest_asset": {"source": "catalog", "category": "lamp"},
    }
    return skill_id, params_by_skill[skill_id]


class TestFrameProperty:
    """An effect may only move fields covered by its writes declaration."""

    @settings(max_examples=200, deadline=None)
    @given(state=abstract_states(), invocation=skill_invocations())
    def test_untouched_groups_identical(self, lib, state, invocation):
        skill_id, params = invocation
        spec = lib.get(skill_id)
        try:
            after = apply_abstract_effect(spec, params, state, _ENV)
        except PreconditionFailure:
            assume(False)
            return
        allowed = set()
        for group in spec.writes:
            allowed |= _GROUP_FIELDS[group]
        for f in dataclasses.fields(AbstractState):
            if f.name not in allowed:
                assert getattr(after, f.name) == getattr(state, f.name), \
                    f"{skill_id} moved {f.name} outside writes={sorted(spec.writes)}"

    @settings(max_examples=50, deadline=None)
    @given(state=abstract_states(), invocation=skill_invocations())
    def test_effects_are_pure(self, lib, state, invocation):
        skill_id, params = invocation
        spec = lib.get(skill_id)
        try:
            a = apply_abstract_effect(spec, params, state, _ENV)
            b = apply_abstract_effect(spec, params, state, _ENV)
        except PreconditionFailure:
            assume(False)
            return
        assert a == b
