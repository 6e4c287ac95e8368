"""Goal model: decidable predicates over scenes plus data/model/asset targets.

A goal is the machine-checkable reading of one user turn.  Scene requirements
are predicate objects that can be evaluated both against a concrete scene and
against the planner's abstract state; data and model requirements are
structured records consumed by the deviation metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .diffing import matches_any, scene_paths
from .errors import InconsistentGoal
from .state import SceneState


@dataclass(frozen=True)
class Ref:
    """A grounded reference: the user's mention plus whichever executable ids
    grounding resolved it to."""

    mention: str
    entity_id: str | None = None
    category: str | None = None
    asset_id: str | None = None

    def as_dict(self) -> dict:
        return {"mention": self.mention, "entity_id": self.entity_id,
                "category": self.category, "asset_id": self.asset_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Ref":
        return cls(d["mention"], d.get("entity_id"), d.get("category"), d.get("asset_id"))


def _entity_matches(scene: SceneState, ref: Ref) -> bool:
    if ref.entity_id is not None:
        return scene.entity(ref.entity_id) is not None
    if ref.category is not None:
        return len(scene.entities_of(ref.category)) > 0
    return False


class ScenePredicate:
    """Base class; subclasses are decidable in finite time on any scene."""

    kind = "predicate"

    def holds(self, scene: SceneState) -> bool:
        raise NotImplementedError

    def holds_abstract(self, abstract) -> bool:
        raise NotImplementedError

    def key(self) -> tuple:
        """Stable identity used for contradiction detection and sorting."""
        raise NotImplementedError

    def as_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{self.kind}({','.join(str(k) for k in self.key()[1:])})"

    def __eq__(self, other):
        return isinstance(other, ScenePredicate) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, repr=False, eq=False)
class EntityExists(ScenePredicate):
    ref: Ref
    kind = "entity-exists"

    def holds(self, scene):
        return _entity_matches(scene, self.ref)

    def holds_abstract(self, abstract):
        if self.ref.category is not None:
            return self.ref.category in abstract.entity_categories
        return False

    def key(self):
        return (self.kind, self.ref.entity_id or "", self.ref.category or "")

    def as_dict(self):
        return {"kind": self.kind, "ref": self.ref.as_dict()}


@dataclass(frozen=True, repr=False, eq=False)
class EntityAbsent(ScenePredicate):
    ref: Ref
    kind = "entity-absent"

    def holds(self, scene):
        return not _entity_matches(scene, self.ref)

    def holds_abstract(self, abstract):
        if self.ref.entity_id is not None and self.ref.category is not None:
            # id-level removal is approximated by category absence
            return self.ref.category not in abstract.entity_categories
        if self.ref.category is not None:
            return self.ref.category not in abstract.entity_categories
        return True

    def key(self):
        return (self.kind, self.ref.entity_id or "", self.ref.category or "")

    def as_dict(self):
        return {"kind": self.kind, "ref": self.ref.as_dict()}


def _relation_matches(scene: SceneState, s: Ref, predicate: str, o: Ref) -> bool:
    for rs, rp, ro in scene.relations:
        if rp != predicate:
            continue
        se = scene.entity(rs)
        oe = scene.entity(ro)
        s_ok = (s.entity_id == rs) if s.entity_id else (se is not None and se.category == s.category)
        o_ok = (o.entity_id == ro) if o.entity_id else (oe is not None and oe.category == o.category)
        if s_ok and o_ok:
            return True
    return False


@dataclass(frozen=True, repr=False, eq=False)
class RelationHolds(ScenePredicate):
    subject: Ref
    predicate: str
    object: Ref
    kind = "relation-holds"

    def holds(self, scene):
        return _relation_matches(scene, self.subject, self.predicate, self.object)

    def holds_abstract(self, abstract):
        return (self.subject.category, self.predicate, self.object.category) in abstract.relations

    def key(self):
        return (self.kind, self.subject.category or self.subject.entity_id or "",
                self.predicate, self.object.category or self.object.entity_id or "")

    def as_dict(self):
        return {"kind": self.kind, "subject": self.subject.as_dict(),
                "predicate": self.predicate, "object": self.object.as_dict()}


@dataclass(frozen=True, repr=False, eq=False)
class RelationAbsent(ScenePredicate):
    subject: Ref
    predicate: str
    object: Ref
    kind = "relation-absent"

    def holds(self, scene):
        return not _relation_matches(scene, self.subject, self.predicate, self.object)

    def holds_abstract(self, abstract):
        return (self.subject.category, self.predicate, self.object.category) not in abstract.relations

    def key(self):
        return ("relation-holds", self.subject.category or self.subject.entity_id or "",
                self.predicate, self.object.category or self.object.entity_id or "",
                "absent")

    def as_dict(self):
        return {"kind": self.kind, "subject": self.subject.as_dict(),
                "predicate": self.predicate, "object": self.object.as_dict()}


@dataclass(frozen=True, repr=False, eq=False)
class RobotIs(ScenePredicate):
    model: str
    kind = "robot-is"

    def holds(self, scene):
        return scene.robot is not None and scene.robot.model == self.model

    def holds_abstract(self, abstract):
        return abstract.robot == self.model

    def key(self):
        return (self.kind, self.model)

    def as_dict(self):
        return {"kind": self.kind, "model": self.model}


@dataclass(frozen=True, repr=False, eq=False)
class FieldEquals(ScenePredicate):
    """Exact equality on a settable scene field (``lighting.intensity`` etc.)."""

    path: str
    value: float
    kind = "field-equals"

    def holds(self, scene):
        if self.path == "lighting.intensity":
            return scene.lighting.intensity == self.value
        if self.path == "lighting.color_temp":
            return scene.lighting.color_temp == self.value
        return False

    def holds_abstract(self, abstract):
        return abstract.lighting.get(self.path.split(".", 1)[1]) == round(float(self.value), 6)

    def key(self):
        return (self.kind, self.path, repr(self.value))

    def as_dict(self):
        return {"kind": self.kind, "path": self.path, "value": self.value}


@dataclass(frozen=True, repr=False, eq=False)
class LightingInRange(ScenePredicate):
    field_name: str
    low: float
    high: float
    kind = "lighting-in-range"

    def holds(self, scene):
        value = getattr(scene.lighting, self.field_name, None)
        return value is not None and self.low <= value <= self.high

    def holds_abstract(self, abstract):
        value = abstract.lighting.get(self.field_name)
        return value is not None and self.low <= value <= self.high

    def key(self):
        return (self.kind, self.field_name, repr(self.low), repr(self.high))

    def as_dict(self):
        return {"kind": self.kind, "field": self.field_name, "low": self.low, "high": self.high}


@dataclass(frozen=True, repr=False, eq=False)
class CameraExists(ScenePredicate):
    camera_id: str
    kind = "camera-exists"

    def holds(self, scene):
        return scene.camera(self.camera_id) is not None

    def holds_abstract(self, abstract):
        return self.camera_id in abstract.camera_ids

    def key(self):
        return (self.kind, self.camera_id)

    def as_dict(self):
        return {"kind": self.kind, "camera_id": self.camera_id}


@dataclass(frozen=True, repr=False, eq=False)
class CameraAbsent(ScenePredicate):
    camera_id: str
    kind = "camera-absent"

    def holds(self, scene):
        return scene.camera(self.camera_id) is None

    def holds_abstract(self, abstract):
        return self.camera_id not in abstract.camera_ids

    def key(self):
        return ("camera-exists", self.camera_id, "absent")

    def as_dict(self):
        return {"kind": self.kind, "camera_id": self.camera_id}


@dataclass(frozen=True, repr=False, eq=False)
class CameraCountAtLeast(ScenePredicate):
    count: int
    kind = "camera-count"

    def holds(self, scene):
        return len(scene.cameras) >= self.count

    def holds_abstract(self, abstract):
        return len(abstract.camera_ids) >= self.count

    def key(self):
        return (self.kind, self.count)

    def as_dict(self):
        return {"kind": self.kind, "count": self.count}


_PREDICATE_TYPES = {
    "entity-exists": lambda d: EntityExists(Ref.from_dict(d["ref"])),
    "entity-absent": lambda d: EntityAbsent(Ref.from_dict(d["ref"])),
    "relation-holds": lambda d: RelationHolds(
        Ref.from_dict(d["subject"]), d["predicate"], Ref.from_dict(d["object"])),
    "relation-absent": lambda d: RelationAbsent(
        Ref.from_dict(d["subject"]), d["predicate"], Ref.from_dict(d["object"])),
    "robot-is": lambda d: RobotIs(d["model"]),
    "field-equals": lambda d: FieldEquals(d["path"], d["value"]),
    "lighting-in-range": lambda d: LightingInRange(d["field"], d["low"], d["high"]),
    "camera-exists": lambda d: CameraExists(d["camera_id"]),
    "camera-absent": lambda d: CameraAbsent(d["camera_id"]),
    "camera-count": lambda d: CameraCountAtLeast(d["count"]),
}


def predicate_from_dict(d: dict) -> ScenePredicate:
    return _PREDICATE_TYPES[d["kind"]](d)


# --- preserve scope ---

@dataclass
class PreserveScope:
    """Which scene paths an edit must leave untouched.

    ``all_except`` is the default for edits: everything not explicitly mutated
    is protected.  The member paths are resolved lazily against a baseline
    scene, because the path population only exists once there is a baseline.
    """

    mode: str = "none"  # none | all_except | explicit
    patterns: list[str] = field(default_factory=list)

    def preserved_paths(self, baseline: SceneState) -> list[str]:
        paths = sorted(scene_paths(baseline).keys())
        if self.mode == "none":
            return []
        if self.mode == "explicit":
            return [p for p in paths if matches_any(self.patterns, p)]
        return [p for p in paths if not matches_any(self.patterns, p)]

    def as_dict(self) -> dict:
        return {"mode": self.mode, "patterns": sorted(self.patterns)}

    @classmethod
    def from_dict(cls, d: dict) -> "PreserveScope":
        return cls(d["mode"], list(d["patterns"]))


# --- data / model / asset goal sections ---

@dataclass
class DataGoals:
    min_episodes: int = 0
    task_id: str | None = None
    required_formats: list[str] = field(default_factory=list)
    stability_threshold: float | None = None

    def as_dict(self) -> dict:
        return {"min_episodes": self.min_episodes, "task_id": self.task_id,
                "required_formats": sorted(self.required_formats),
                "stability_threshold": self.stability_threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "DataGoals":
        return cls(d["min_episodes"], d.get("task_id"), list(d["required_formats"]),
                   d.get("stability_threshold"))


@dataclass
class ModelGoals:
    required_reports: list[tuple[str, str]] = field(default_factory=list)
    target_metric: float | None = None
    train_format: str | None = None
    train_epochs: int = 3
    eval_episodes: int = 20
    resource_budget: float | None = None
    required_valid_code: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"required_reports": sorted([list(p) for p in self.required_reports]),
                "target_metric": self.target_metric, "train_format": self.train_format,
                "train_epochs": self.train_epochs, "eval_episodes": self.eval_episodes,
                "resource_budget": self.resource_budget,
                "required_valid_code": sorted(self.required_valid_code)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelGoals":
        return cls([tuple(p) for p in d["required_reports"]], d.get("target_metric"),
                   d.get("train_format"), d.get("train_epochs", 3),
                   d.get("eval_episodes", 20), d.get("resource_budget"),
                   list(d.get("required_valid_code", [])))


@dataclass
class AssetGoal:
    category: str
    source_kind: str = "catalog"   # catalog | file
    source_ref: str = ""
    unit: str = "m"

    def as_dict(self) -> dict:
        return {"category": self.category, "source_kind": self.source_kind,
                "source_ref": self.source_ref, "unit": self.unit}

    @classmethod
    def from_dict(cls, d: dict) -> "AssetGoal":
        return cls(d["category"], d["source_kind"], d["source_ref"], d.get("unit", "m"))


@dataclass
class GoalSpec:
    """The full target outcome implied by one intent."""

    scene_goals: list[ScenePredicate] = field(default_factory=list)
    preserve: PreserveScope = field(default_factory=PreserveScope)
    data_goals: DataGoals | None = None
    model_goals: ModelGoals | None = None
    asset_goals: list[AssetGoal] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "scene_goals": [p.as_dict() for p in self.scene_goals],
            "preserve": self.preserve.as_dict(),
            "data_goals": self.data_goals.as_dict() if self.data_goals else None,
            "model_goals": self.model_goals.as_dict() if self.model_goals else None,
            "asset_goals": [a.as_dict() for a in self.asset_goals],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GoalSpec":
        return cls(
            scene_goals=[predicate_from_dict(p) for p in d["scene_goals"]],
            preserve=PreserveScope.from_dict(d["preserve"]),
            data_goals=DataGoals.from_dict(d["data_goals"]) if d.get("data_goals") else None,
            model_goals=ModelGoals.from_dict(d["model_goals"]) if d.get("model_goals") else None,
            asset_goals=[AssetGoal.from_dict(a) for a in d.get("asset_goals", [])],
        )


def check_consistent(goal: GoalSpec):
    """Raise InconsistentGoal when one fact is both required and forbidden."""
    positive: dict[tuple, ScenePredicate] = {}
    negative: dict[tuple, ScenePredicate] = {}
    valued: dict[tuple, ScenePredicate] = {}
    for pred in goal.scene_goals:
        key = pred.key()
        if key[-1] == "absent":
            negative[key[:-1]] = pred
        elif pred.kind in ("field-equals", "robot-is"):
            ident = key[:2] if pred.kind == "field-equals" else (pred.kind,)
            if ident in valued and valued[ident].key() != key:
                raise InconsistentGoal(
                    f"conflicting requirements: {valued[ident]!r} vs {pred!r}")
            valued[ident] = pred
        else:
            positive[key] = pred
    for key, pred in negative.items():
        if key in positive:
            raise InconsistentGoal(
                f"predicate both required and forbidden: {positive[key]!r} vs {pred!r}")
