"""Skill library: typed specs, preconditions, abstract effects, costs.

A skill is data (loaded from a declarative JSON file) plus three registries of
behavior keyed by id: precondition predicates, abstract effect models, and
grounded bindings (the bindings themselves live in backends).  Skills sharing
an effect signature are substitutable and must accept the same schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .abstract import AbstractState
from .assets import Environment, default_environment, is_known_task, task_categories
from .errors import (DuplicateSkill, PreconditionFailure, SchemaMismatch, UnknownSkill,
                     UnknownTask)
from .formats import FORMAT_IDS
from .state import OperationalContext, RELATION_PREDICATES, canonical_json

EVAL_UNIT_COST = 1.0   # resource units per evaluation episode

SKILL_FAMILIES = (
    "object-recognition", "spatial-localization", "asset-retrieval",
    "scene-editing", "trajectory-generation", "data-transformation",
    "code-editing", "training-launch", "evaluation-dispatch",
)


@dataclass(frozen=True)
class Cost:
    human: float = 0.0
    sys_time: float = 1.0
    sys_tokens: float = 0.0

    @property
    def system(self) -> float:
        return self.sys_time + self.sys_tokens


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    required: bool = False


@dataclass(frozen=True)
class SkillSpec:
    skill_id: str
    family: str
    effect_signature: str
    binding: str
    params: tuple[ParamSpec, ...]
    reads: frozenset
    writes: frozenset
    preconditions: tuple[str, ...]
    effect: str
    cost: Cost

    def schema_key(self) -> tuple:
        return tuple(sorted((p.name, p.type, p.required) for p in self.params))


@dataclass
class SkillCall:
    skill_id: str
    params: dict = field(default_factory=dict)
    postconditions: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"skill_id": self.skill_id, "params": dict(sorted(self.params.items())),
                "postconditions": list(self.postconditions)}

    @classmethod
    def from_dict(cls, d: dict) -> "SkillCall":
        return cls(d["skill_id"], dict(d["params"]), list(d.get("postconditions", [])))

    def canonical(self) -> str:
        return canonical_json({"skill_id": self.skill_id,
                               "params": dict(sorted(self.params.items()))})


class SkillLibrary:
    """Immutable after session start; reads are safe to share."""

    def __init__(self):
        self._by_id: dict[str, SkillSpec] = {}
        self._by_signature: dict[str, list[str]] = {}

    def register(self, spec: SkillSpec) -> "SkillLibrary":
        if spec.skill_id in self._by_id:
            raise DuplicateSkill(f"skill {spec.skill_id!r} already registered")
        siblings = self._by_signature.get(spec.effect_signature, [])
        for sid in siblings:
            if self._by_id[sid].schema_key() != spec.schema_key():
                raise SchemaMismatch(
                    f"skill {spec.skill_id!r} shares signature "
                    f"{spec.effect_signature!r} with {sid!r} but schemas differ")
        self._by_id[spec.skill_id] = spec
        self._by_signature.setdefault(spec.effect_signature, []).append(spec.skill_id)
        self._by_signature[spec.effect_signature].sort()
        return self

    def get(self, skill_id: str) -> SkillSpec:
        spec = self._by_id.get(skill_id)
        if spec is None:
            raise UnknownSkill(f"no skill {skill_id!r}")
        return spec

    def has(self, skill_id: str) -> bool:
        return skill_id in self._by_id

    def by_signature(self, signature: str) -> list[SkillSpec]:
        return [self._by_id[sid] for sid in self._by_signature.get(signature, [])]

    def all(self) -> list[SkillSpec]:
        return [self._by_id[sid] for sid in sorted(self._by_id)]

    def ids(self) -> list[str]:
        return sorted(self._by_id)


# --- parameter schema validation ---

def validate_params(spec: SkillSpec, params: dict):
    """Raise SchemaMismatch unless params fit the spec's schema exactly."""
    problems = []
    known = {p.name: p for p in spec.params}
    for name in params:
        if name not in known:
            problems.append(f"unexpected parameter {name!r}")
    for p in spec.params:
        if p.name not in params:
            if p.required:
                problems.append(f"missing required parameter {p.name!r}")
            continue
        value = params[p.name]
        if not _type_ok(p.type, value):
            problems.append(f"parameter {p.name!r} is not a valid {p.type}")
    if problems:
        raise SchemaMismatch(f"{spec.skill_id}: " + "; ".join(problems),
                             problems=problems)


def _type_ok(type_name: str, value) -> bool:
    if type_name == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if type_name == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_name == "bool":
        return isinstance(value, bool)
    if type_name == "relation":
        return value in RELATION_PREDICATES
    if type_name == "format":
        return value in FORMAT_IDS
    if type_name == "source":
        return value in ("catalog", "file")
    # string-like: string, category, task, benchmark, model
    return isinstance(value, str) and len(value) > 0


# --- preconditions: concrete and abstract evaluation per id ---

def _category_of(params: dict, key: str, fallback_key: str) -> str | None:
    return params.get(fallback_key) or params.get(key)


def _entity_present(ctx: OperationalContext, mention: str) -> bool:
    scene = ctx.scene
    return scene.entity(mention) is not None or len(scene.entities_of(mention)) > 0


class _Pre:
    def __init__(self, concrete, abstract):
        self.concrete = concrete
        self.abstract = abstract


def _task_entities_ok(scene_categories, task_id: str) -> bool:
    try:
        return all(c in scene_categories for c in task_categories(task_id))
    except UnknownTask:
        return False


PRECONDITIONS: dict[str, _Pre] = {
    "asset-available": _Pre(
        lambda ctx, p, env: (p.get("category") or "") in env.asset_categories(),
        lambda st, p, env: (p.get("category") or "") in st.asset_categories),
    "entity-exists": _Pre(
        lambda ctx, p, env: _entity_present(ctx, p.get("entity", "")),
        lambda st, p, env: (_category_of(p, "entity", "category") or "")
        in st.entity_categories),
    "anchor-exists": _Pre(
        lambda ctx, p, env: "anchor" not in p or _entity_present(ctx, p["anchor"]),
        lambda st, p, env: "anchor" not in p
        or (_category_of(p, "anchor", "anchor_category") or "") in st.entity_categories),
    "camera-id-free": _Pre(
        lambda ctx, p, env: ctx.scene.camera(p.get("camera_id", "")) is None,
        lambda st, p, env: p.get("camera_id", "") not in st.camera_ids),
    "camera-exists": _Pre(
        lambda ctx, p, env: ctx.scene.camera(p.get("camera_id", "")) is not None,
        lambda st, p, env: p.get("camera_id", "") in st.camera_ids),
    "robot-known": _Pre(
        lambda ctx, p, env: p.get("model", "") in env.robots,
        lambda st, p, env: p.get("model", "") in env.robots),
    "scene-nonempty": _Pre(
        lambda ctx, p, env: len(ctx.scene.entities) > 0,
        lambda st, p, env: len(st.entity_counts) > 0),
    "task-known": _Pre(
        lambda ctx, p, env: is_known_task(p.get("task", "")),
        lambda st, p, env: is_known_task(p.get("task", ""))),
    "task-entities-present": _Pre(
        lambda ctx, p, env: _task_entities_ok(
            {e.category for e in ctx.scene.entities}, p.get("task", "")),
        lambda st, p, env: _task_entities_ok(st.entity_categories, p.get("task", ""))),
    "episodes-present": _Pre(
        lambda ctx, p, env: len(ctx.data.episodes) > 0,
        lambda st, p, env: len(st.episode_counts) > 0),
    "export-exists": _Pre(
        lambda ctx, p, env: p.get("dataset_format", "") in ctx.data.exports,
        lambda st, p, env: p.get("dataset_format", "") in st.export_formats),
    "benchmark-known": _Pre(
        lambda ctx, p, env: p.get("benchmark", "") in env.benchmarks,
        lambda st, p, env: p.get("benchmark", "") in env.benchmarks),
    "model-known": _Pre(
        lambda ctx, p, env: p.get("model", "") in env.models,
        lambda st, p, env: p.get("model", "") in env.models),
    # external sources are assumed reachable at planning time; the grounded
    # binding surfaces SourceUnavailable when they are not
    "source-available": _Pre(
        lambda ctx, p, env: p.get("source", "catalog") in ("catalog", "file"),
        lambda st, p, env: p.get("source", "catalog") in ("catalog", "file")),
}

_DEFAULT_ENV: Environment | None = None


def _env_or_default(env: Environment | None) -> Environment:
    global _DEFAULT_ENV
    if env is not None:
        return env
    if _DEFAULT_ENV is None:
        _DEFAULT_ENV = default_environment()
    return _DEFAULT_ENV


def check_preconditions(spec: SkillSpec, params: dict, ctx: OperationalContext,
                        env: Environment | None = None) -> list[str]:
    """Violated precondition ids for a concrete context; empty means go."""
    validate_params(spec, params)
    env = _env_or_default(env)
    return [pid for pid in spec.preconditions
            if not PRECONDITIONS[pid].concrete(ctx, params, env)]


def abstract_preconditions_ok(spec: SkillSpec, params: dict, state: AbstractState,
                              env: Environment | None = None) -> bool:
    env = _env_or_default(env)
    return all(PRECONDITIONS[pid].abstract(state, params, env)
               for pid in spec.preconditions)


# --- abstract effects per id ---

def _eff_noop(st: AbstractState, p: dict) -> AbstractState:
    return st


def _eff_add_entity(st: AbstractState, p: dict) -> AbstractState:
    cat = p["category"]
    st = st.add_entity(cat)
    if p.get("relation") and (p.get("anchor_category") or p.get("anchor")):
        anchor = p.get("anchor_category") or p.get("anchor")
        st = st.with_(relations=st.relations | {(cat, p["relation"], anchor)})
    return st


def _eff_remove_entity(st: AbstractState, p: dict) -> AbstractState:
    cat = _category_of(p, "entity", "category")
    if cat not in st.entity_categories:
        return st
    return st.remove_entity(cat)


def _eff_set_relation(st: AbstractState, p: dict) -> AbstractState:
    subj = _category_of(p, "entity", "category")
    anchor = _category_of(p, "anchor", "anchor_category")
    kept = frozenset(r for r in st.relations
                     if not (r[0] == subj and r[1] == p["relation"]))
    return st.with_(relations=kept | {(subj, p["relation"], anchor)})


def _eff_set_lighting(st: AbstractState, p: dict) -> AbstractState:
    kw = {}
    if "intensity" in p:
        kw["lighting_intensity"] = round(float(p["intensity"]), 6)
    if "color_temp" in p:
        kw["lighting_color_temp"] = round(float(p["color_temp"]), 6)
    return st.with_(**kw) if kw else st


def _eff_set_robot(st: AbstractState, p: dict) -> AbstractState:
    return st.with_(robot=p["model"])


def _eff_add_camera(st: AbstractState, p: dict) -> AbstractState:
    return st.with_(camera_ids=st.camera_ids | {p["camera_id"]})


def _eff_remove_camera(st: AbstractState, p: dict) -> AbstractState:
    return st.with_(camera_ids=st.camera_ids - {p["camera_id"]})


def _eff_collect(st: AbstractState, p: dict) -> AbstractState:
    return st.add_episodes(p["task"], int(p["count"]))


def _eff_export(st: AbstractState, p: dict) -> AbstractState:
    return st.with_(export_formats=st.export_formats | {p["format"]})


def _eff_edit_code(st: AbstractState, p: dict) -> AbstractState:
    a = p["asset_id"]
    return st.with_(code_ids=st.code_ids | {a}, code_valid=st.code_valid | {a})


def _eff_train(st: AbstractState, p: dict) -> AbstractState:
    return st.with_(trained_formats=st.trained_formats | {p["dataset_format"]})


def _eff_evaluate(st: AbstractState, p: dict) -> AbstractState:
    pair = (p["model"], p["benchmark"])
    return st.with_(report_pairs=st.report_pairs | {pair},
                    resource_units=st.resource_units + int(p["episodes"]) * EVAL_UNIT_COST)


def _eff_ingest(st: AbstractState, p: dict) -> AbstractState:
    return st.with_(asset_categories=st.asset_categories | {p["category"]})


EFFECTS = {
    "noop": _eff_noop,
    "add-entity": _eff_add_entity,
    "remove-entity": _eff_remove_entity,
    "set-relation": _eff_set_relation,
    "set-lighting": _eff_set_lighting,
    "set-robot": _eff_set_robot,
    "add-camera": _eff_add_camera,
    "remove-camera": _eff_remove_camera,
    "collect": _eff_collect,
    "export": _eff_export,
    "edit-code": _eff_edit_code,
    "train": _eff_train,
    "evaluate": _eff_evaluate,
    "ingest": _eff_ingest,
}


def apply_abstract_effect(spec: SkillSpec, params: dict, state: AbstractState,
                          env: Environment | None = None) -> AbstractState:
    """Pure forward model for planning; only descriptors within the skill's
    writes set may change (the frame property)."""
    validate_params(spec, params)
    if not abstract_preconditions_ok(spec, params, state, env):
        raise PreconditionFailure(
            f"{spec.skill_id}: preconditions do not hold abstractly")
    return EFFECTS[spec.effect](state, params)


# --- postconditions, instantiated from the spec at call construction ---

def postconditions_for(spec: SkillSpec, params: dict) -> list[dict]:
    sig = spec.effect_signature
    if sig == "add-entity":
        post = [{"check": "entity-count-increased", "category": params["category"]}]
        if params.get("relation") and (params.get("anchor") or params.get("anchor_category")):
            post.append({"check": "relation-holds",
                         "subject": params["category"], "predicate": params["relation"],
                         "object": params.get("anchor_category") or params["anchor"]})
        return post
    if sig == "remove-entity":
        return [{"check": "entity-removed", "entity": params["entity"],
                 "category": params.get("category")}]
    if sig == "set-relation":
        return [{"check": "relation-holds",
                 "subject": params.get("category") or params["entity"],
                 "predicate": params["relation"],
                 "object": params.get("anchor_category") or params["anchor"]}]
    if sig == "set-lighting":
        post = []
        if "intensity" in params:
            post.append({"check": "lighting-equals", "field": "intensity",
                         "value": float(params["intensity"])})
        if "color_temp" in params:
            post.append({"check": "lighting-equals", "field": "color_temp",
                         "value": float(params["color_temp"])})
        return post
    if sig == "set-robot":
        return [{"check": "robot-is", "model": params["model"]}]
    if sig == "add-camera":
        return [{"check": "camera-present", "camera_id": params["camera_id"]}]
    if sig == "remove-camera":
        return [{"check": "camera-absent", "camera_id": params["camera_id"]}]
    if sig == "collect-episodes":
        return [{"check": "episodes-added", "task": params["task"],
                 "count": int(params["count"])},
                {"check": "new-episodes-successful", "task": params["task"],
                 "count": int(params["count"])}]
    if sig == "export-format":
        return [{"check": "export-present", "format": params["format"]},
                {"check": "export-valid", "format": params["format"]}]
    if sig == "edit-code":
        return [{"check": "code-status", "asset_id": params["asset_id"],
                 "status": "valid"}]
    if sig == "launch-train":
        post = [{"check": "checkpoint-added", "format": params["dataset_format"]}]
        if params.get("target_loss") is not None:
            post.append({"check": "loss-at-most", "target": float(params["target_loss"])})
        return post
    if sig == "launch-eval":
        return [{"check": "report-completed", "model": params["model"],
                 "benchmark": params["benchmark"]}]
    if sig == "ingest-asset":
        return [{"check": "asset-available", "category": params["category"]}]
    return []


def make_call(spec: SkillSpec, params: dict) -> SkillCall:
    validate_params(spec, params)
    return SkillCall(spec.skill_id, dict(params), postconditions_for(spec, params))


# --- declarative loading ---

def _spec_from_dict(d: dict) -> SkillSpec:
    cost = d.get("cost", {})
    return SkillSpec(
        skill_id=d["skill_id"], family=d["family"],
        effect_signature=d["effect_signature"], binding=d["binding"],
        params=tuple(ParamSpec(p["name"], p["type"], p.get("required", False))
                     for p in d.get("params", [])),
        reads=frozenset(d.get("reads", [])), writes=frozenset(d.get("writes", [])),
        preconditions=tuple(d.get("preconditions", [])), effect=d.get("effect", "noop"),
        cost=Cost(cost.get("human", 0.0), cost.get("sys_time", 1.0),
                  cost.get("sys_tokens", 0.0)),
    )


def load_library(path: str | Path | None = None) -> SkillLibrary:
    """Library from a JSON skill file; default is the built-in set."""
    if path is None:
        raw = resources.files("claw").joinpath("data/builtin_skills.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    data = json.loads(raw)
    if data.get("schema") != "skill-library" or data.get("schema_version") != 1:
        raise SchemaMismatch("not a schema-version-1 skill library file")
    lib = SkillLibrary()
    for entry in data["skills"]:
        bad = [pid for pid in entry.get("preconditions", []) if pid not in PRECONDITIONS]
        if bad or entry.get("effect", "noop") not in EFFECTS:
            raise SchemaMismatch(
                f"skill {entry.get('skill_id')!r} references unknown behavior ids "
                f"{bad or [entry.get('effect')]}")
        lib.register(_spec_from_dict(entry))
    return lib
