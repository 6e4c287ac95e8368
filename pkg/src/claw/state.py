"""Operational state model: scene, data, and model objects plus the context triple.

The context is the unit of snapshot and rollback, so everything here revolves
around one rule: logical equality must be decidable on bytes.  ``canonical_bytes``
renders a context as UTF-8 JSON with sorted keys, id-sorted lists, and
shortest-round-trip floats; any two contexts with the same logical content
produce the same bytes.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

from .errors import InvalidContext

STATE_SCHEMA_VERSION = 1

RELATION_PREDICATES = ("on", "in", "left_of", "right_of", "near")

QUAT_INGEST_TOLERANCE = 1e-3   # renormalize if within this of unit norm
QUAT_STRICT_TOLERANCE = 1e-6   # stored quaternions must be this close to unit


def _f(x) -> float:
    """Coerce to float so 0 and 0.0 canonicalize identically."""
    return float(x)


@dataclass
class Pose:
    """Position in meters plus a unit quaternion (w, x, y, z)."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        self.position = tuple(_f(v) for v in self.position)
        self.orientation = tuple(_f(v) for v in self.orientation)

    def as_dict(self) -> dict:
        return {"position": list(self.position), "orientation": list(self.orientation)}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(tuple(d["position"]), tuple(d["orientation"]))


def normalize_quaternion(q: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
    """Renormalize a quaternion that is within the ingestion tolerance of unit norm.

    Returns the input unchanged (never renormalized) when it is already strictly
    unit; raises ValueError when the norm is off by more than the tolerance.
    """
    norm = math.sqrt(sum(v * v for v in q))
    if abs(norm - 1.0) <= QUAT_STRICT_TOLERANCE:
        return tuple(_f(v) for v in q)
    if abs(norm - 1.0) > QUAT_INGEST_TOLERANCE:
        raise ValueError(f"quaternion norm {norm:.6f} outside ingestion tolerance")
    return tuple(_f(v / norm) for v in q)


@dataclass
class Entity:
    """One object instance in a scene; geometry lives behind ``asset_ref``."""

    entity_id: str
    category: str
    asset_ref: str = ""
    pose: Pose = field(default_factory=Pose)
    scale: float = 1.0

    def __post_init__(self):
        self.scale = _f(self.scale)

    def as_dict(self) -> dict:
        return {
            "id": self.entity_id,
            "category": self.category,
            "asset_ref": self.asset_ref,
            "pose": self.pose.as_dict(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Entity":
        return cls(d["id"], d["category"], d.get("asset_ref", ""),
                   Pose.from_dict(d["pose"]), d.get("scale", 1.0))


@dataclass
class RobotState:
    model: str
    base_pose: Pose = field(default_factory=Pose)
    joint_names: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"model": self.model, "base_pose": self.base_pose.as_dict(),
                "joint_names": list(self.joint_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "RobotState":
        return cls(d["model"], Pose.from_dict(d["base_pose"]), list(d["joint_names"]))


@dataclass
class LightingState:
    intensity: float = 0.6
    color_temp: float = 4500.0

    def __post_init__(self):
        self.intensity = _f(self.intensity)
        self.color_temp = _f(self.color_temp)

    def as_dict(self) -> dict:
        return {"intensity": self.intensity, "color_temp": self.color_temp}

    @classmethod
    def from_dict(cls, d: dict) -> "LightingState":
        return cls(d["intensity"], d["color_temp"])


@dataclass
class CameraState:
    camera_id: str
    pose: Pose = field(default_factory=Pose)
    fov_deg: float = 60.0

    def __post_init__(self):
        self.fov_deg = _f(self.fov_deg)

    def as_dict(self) -> dict:
        return {"id": self.camera_id, "pose": self.pose.as_dict(), "fov_deg": self.fov_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraState":
        return cls(d["id"], Pose.from_dict(d["pose"]), d["fov_deg"])


@dataclass
class SceneState:
    """A simulator scene: entities, relations, robot, lighting, cameras.

    ``version`` strictly increases on every mutation (including writes of
    identical values) so provenance records are unambiguous.
    """

    scene_id: str = "main"
    version: int = 0
    entities: list[Entity] = field(default_factory=list)
    relations: list[tuple[str, str, str]] = field(default_factory=list)
    robot: RobotState | None = None
    lighting: LightingState = field(default_factory=LightingState)
    cameras: list[CameraState] = field(default_factory=list)

    def entity(self, entity_id: str) -> Entity | None:
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        return None

    def entities_of(self, category: str) -> list[Entity]:
        return sorted((e for e in self.entities if e.category == category),
                      key=lambda e: e.entity_id)

    def camera(self, camera_id: str) -> CameraState | None:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        return None

    def as_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "version": self.version,
            "entities": [e.as_dict() for e in sorted(self.entities, key=lambda e: e.entity_id)],
            "relations": sorted(list(r) for r in self.relations),
            "robot": self.robot.as_dict() if self.robot else None,
            "lighting": self.lighting.as_dict(),
            "cameras": [c.as_dict() for c in sorted(self.cameras, key=lambda c: c.camera_id)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneState":
        return cls(
            scene_id=d["scene_id"],
            version=d["version"],
            entities=[Entity.from_dict(e) for e in d["entities"]],
            relations=[tuple(r) for r in d["relations"]],
            robot=RobotState.from_dict(d["robot"]) if d.get("robot") else None,
            lighting=LightingState.from_dict(d["lighting"]),
            cameras=[CameraState.from_dict(c) for c in d["cameras"]],
        )


@dataclass
class EpisodeRef:
    """Reference to a recorded episode; enough metadata to score it without
    loading step data."""

    episode_id: str
    task_id: str
    success: bool
    length: int
    seed: int

    def as_dict(self) -> dict:
        return {"id": self.episode_id, "task_id": self.task_id, "success": self.success,
                "length": self.length, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRef":
        return cls(d["id"], d["task_id"], d["success"], d["length"], d["seed"])


@dataclass
class ManifestRef:
    """Reference to an export manifest on disk; ``path`` is relative to the
    session root so restored contexts stay valid across hosts."""

    manifest_id: str
    format_id: str
    path: str
    episode_ids: list[str] = field(default_factory=list)
    checksum: str = ""

    def as_dict(self) -> dict:
        return {"manifest_id": self.manifest_id, "format_id": self.format_id,
                "path": self.path, "episode_ids": sorted(self.episode_ids),
                "checksum": self.checksum}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRef":
        return cls(d["manifest_id"], d["format_id"], d["path"],
                   list(d["episode_ids"]), d.get("checksum", ""))


@dataclass
class ProvenanceRecord:
    scene_id: str
    scene_version: int
    seed: int

    def as_dict(self) -> dict:
        return {"scene_id": self.scene_id, "scene_version": self.scene_version,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ProvenanceRecord":
        return cls(d["scene_id"], d["scene_version"], d["seed"])


@dataclass
class DataState:
    episodes: list[EpisodeRef] = field(default_factory=list)
    exports: dict[str, ManifestRef] = field(default_factory=dict)
    provenance: dict[str, ProvenanceRecord] = field(default_factory=dict)
    # every manifest id ever exported this session, in order; checkpoints may
    # reference retired manifests, so lineage must survive re-exports
    dataset_history: list[str] = field(default_factory=list)

    def episodes_of(self, task_id: str) -> list[EpisodeRef]:
        return sorted((e for e in self.episodes if e.task_id == task_id),
                      key=lambda e: e.episode_id)

    def record_export(self, ref: ManifestRef):
        self.exports[ref.format_id] = ref
        if ref.manifest_id not in self.dataset_history:
            self.dataset_history.append(ref.manifest_id)

    def known_datasets(self) -> set:
        return {r.manifest_id for r in self.exports.values()} | set(self.dataset_history)

    def as_dict(self) -> dict:
        return {
            "episodes": [e.as_dict() for e in sorted(self.episodes, key=lambda e: e.episode_id)],
            "exports": {k: v.as_dict() for k, v in sorted(self.exports.items())},
            "provenance": {k: v.as_dict() for k, v in sorted(self.provenance.items())},
            "dataset_history": list(self.dataset_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataState":
        return cls(
            episodes=[EpisodeRef.from_dict(e) for e in d["episodes"]],
            exports={k: ManifestRef.from_dict(v) for k, v in d["exports"].items()},
            provenance={k: ProvenanceRecord.from_dict(v) for k, v in d["provenance"].items()},
            dataset_history=list(d.get("dataset_history", [])),
        )


CODE_STATUSES = ("unvalidated", "valid", "invalid")


@dataclass
class CodeAsset:
    asset_id: str
    content_hash: str
    status: str = "unvalidated"

    def as_dict(self) -> dict:
        return {"id": self.asset_id, "content_hash": self.content_hash, "status": self.status}

    @classmethod
    def from_dict(cls, d: dict) -> "CodeAsset":
        return cls(d["id"], d["content_hash"], d["status"])


@dataclass
class Checkpoint:
    checkpoint_id: str
    parent_dataset: str
    metrics: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"id": self.checkpoint_id, "parent_dataset": self.parent_dataset,
                "metrics": {k: _f(v) for k, v in sorted(self.metrics.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        return cls(d["id"], d["parent_dataset"], dict(d["metrics"]))


@dataclass
class EvalReport:
    model_id: str
    benchmark_id: str
    success_rate: float
    episode_count: int
    resource_units: float
    status: str = "completed"

    def __post_init__(self):
        self.success_rate = _f(self.success_rate)
        self.resource_units = _f(self.resource_units)

    def as_dict(self) -> dict:
        return {"model_id": self.model_id, "benchmark_id": self.benchmark_id,
                "success_rate": self.success_rate, "episode_count": self.episode_count,
                "resource_units": self.resource_units, "status": self.status}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["model_id"], d["benchmark_id"], d["success_rate"],
                   d["episode_count"], d["resource_units"], d.get("status", "completed"))


@dataclass
class ModelState:
    code_assets: list[CodeAsset] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    eval_reports: list[EvalReport] = field(default_factory=list)

    def code_asset(self, asset_id: str) -> CodeAsset | None:
        for a in self.code_assets:
            if a.asset_id == asset_id:
                return a
        return None

    def report_for(self, model_id: str, benchmark_id: str) -> EvalReport | None:
        # failed attempts stay in the list for resource accounting; a later
        # completed run supersedes them for goal checks
        best = None
        for r in self.eval_reports:
            if r.model_id == model_id and r.benchmark_id == benchmark_id:
                if best is None or r.status == "completed":
                    best = r
        return best

    def as_dict(self) -> dict:
        return {
            "code_assets": [a.as_dict() for a in sorted(self.code_assets, key=lambda a: a.asset_id)],
            "checkpoints": [c.as_dict() for c in sorted(self.checkpoints, key=lambda c: c.checkpoint_id)],
            "eval_reports": [r.as_dict() for r in sorted(
                self.eval_reports, key=lambda r: (r.model_id, r.benchmark_id))],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        return cls(
            code_assets=[CodeAsset.from_dict(a) for a in d["code_assets"]],
            checkpoints=[Checkpoint.from_dict(c) for c in d["checkpoints"]],
            eval_reports=[EvalReport.from_dict(r) for r in d["eval_reports"]],
        )


@dataclass
class OperationalContext:
    """The triple every workflow reads and writes; snapshotting operates on
    this whole object, never on parts."""

    scene: SceneState = field(default_factory=SceneState)
    data: DataState = field(default_factory=DataState)
    model: ModelState = field(default_factory=ModelState)

    def clone(self) -> "OperationalContext":
        return copy.deepcopy(self)

    def as_dict(self) -> dict:
        return {
            "state_schema": STATE_SCHEMA_VERSION,
            "scene": self.scene.as_dict(),
            "data": self.data.as_dict(),
            "model": self.model.as_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperationalContext":
        if d.get("state_schema") != STATE_SCHEMA_VERSION:
            raise ValueError(f"unsupported state schema {d.get('state_schema')!r}")
        return cls(
            scene=SceneState.from_dict(d["scene"]),
            data=DataState.from_dict(d["data"]),
            model=ModelState.from_dict(d["model"]),
        )


# --- canonical serialization ---

def canonical_json(value) -> str:
    """Sorted-key, separator-free JSON with shortest-round-trip floats."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_bytes(ctx: OperationalContext, validate: bool = True) -> bytes:
    """Deterministic byte rendering of a context; raises InvalidContext when
    validation fails (skippable for diagnostic renderings)."""
    if validate:
        violations = validate_context(ctx)
        if violations:
            raise InvalidContext(violations)
    return canonical_json(ctx.as_dict()).encode("utf-8")


def context_from_bytes(raw: bytes) -> OperationalContext:
    return OperationalContext.from_dict(json.loads(raw.decode("utf-8")))


# --- validation ---

@dataclass
class Violation:
    path: str
    rule: str
    detail: str = ""

    def as_dict(self) -> dict:
        return {"path": self.path, "rule": self.rule, "detail": self.detail}


def _finite(*values) -> bool:
    try:
        return all(math.isfinite(float(v)) for v in values)
    except (TypeError, ValueError):
        return False


def validate_context(ctx: OperationalContext) -> list[Violation]:
    """Check every invariant and cross-reference; total, never raises.

    Returns an empty list iff the context is well-formed.
    """
    out: list[Violation] = []
    try:
        _validate_scene(ctx.scene, out)
        _validate_data(ctx.data, out)
        _validate_model(ctx.model, ctx.data, out)
    except Exception as exc:  # malformed structure is itself a violation
        out.append(Violation("context", "well-formed", repr(exc)))
    return out


def _validate_scene(scene: SceneState, out: list[Violation]):
    if not isinstance(scene.version, int) or scene.version < 0:
        out.append(Violation("scene.version", "version-nonnegative-int", str(scene.version)))
    seen_ids: set[str] = set()
    for e in scene.entities:
        path = f"scene.entities.{e.entity_id}"
        if e.entity_id in seen_ids:
            out.append(Violation(path, "entity-id-unique", e.entity_id))
        seen_ids.add(e.entity_id)
        if not _finite(*e.pose.position, *e.pose.orientation, e.scale):
            out.append(Violation(path, "pose-finite"))
            continue
        norm = math.sqrt(sum(v * v for v in e.pose.orientation))
        if abs(norm - 1.0) > QUAT_STRICT_TOLERANCE:
            out.append(Violation(path, "quaternion-unit-norm", f"norm={norm:.6f}"))
        if e.scale <= 0:
            out.append(Violation(path, "scale-positive", str(e.scale)))
    for rel in scene.relations:
        s, p, o = rel
        path = f"scene.relations.{s}:{p}:{o}"
        if p not in RELATION_PREDICATES:
            out.append(Violation(path, "relation-predicate-known", p))
        for end in (s, o):
            if end not in seen_ids:
                out.append(Violation(path, "relation-endpoint-exists", end))
    cam_ids: set[str] = set()
    for c in scene.cameras:
        path = f"scene.cameras.{c.camera_id}"
        if c.camera_id in cam_ids:
            out.append(Violation(path, "camera-id-unique", c.camera_id))
        cam_ids.add(c.camera_id)
        if not _finite(c.fov_deg) or not (0 < c.fov_deg < 180):
            out.append(Violation(path, "camera-fov-range", str(c.fov_deg)))
    if not _finite(scene.lighting.intensity) or not (0.0 <= scene.lighting.intensity <= 1.0):
        out.append(Violation("scene.lighting.intensity", "lighting-intensity-range",
                             str(scene.lighting.intensity)))
    if not _finite(scene.lighting.color_temp) or scene.lighting.color_temp <= 0:
        out.append(Violation("scene.lighting.color_temp", "lighting-color-temp-positive",
                             str(scene.lighting.color_temp)))


def _validate_data(data: DataState, out: list[Violation]):
    ep_ids = set()
    for ref in data.episodes:
        path = f"data.episodes.{ref.episode_id}"
        if ref.episode_id in ep_ids:
            out.append(Violation(path, "episode-id-unique"))
        ep_ids.add(ref.episode_id)
        if not isinstance(ref.length, int) or ref.length < 0:
            out.append(Violation(path, "episode-length-nonnegative", str(ref.length)))
        if ref.episode_id not in data.provenance:
            out.append(Violation(path, "episode-provenance-exists"))
    for fmt, ref in data.exports.items():
        path = f"data.exports.{fmt}"
        if ref.format_id != fmt:
            out.append(Violation(path, "export-format-key-matches", ref.format_id))
        for ep in ref.episode_ids:
            if ep not in ep_ids:
                out.append(Violation(path, "export-episodes-exist", ep))
    for ep in data.provenance:
        if ep not in ep_ids:
            out.append(Violation(f"data.provenance.{ep}", "provenance-episode-exists"))


def _validate_model(model: ModelState, data: DataState, out: list[Violation]):
    dataset_ids = data.known_datasets()
    seen = set()
    for a in model.code_assets:
        path = f"model.code_assets.{a.asset_id}"
        if a.asset_id in seen:
            out.append(Violation(path, "code-asset-id-unique"))
        seen.add(a.asset_id)
        if a.status not in CODE_STATUSES:
            out.append(Violation(path, "code-status-known", a.status))
    ck_ids = set()
    for c in model.checkpoints:
        path = f"model.checkpoints.{c.checkpoint_id}"
        if c.checkpoint_id in ck_ids:
            out.append(Violation(path, "checkpoint-id-unique"))
        ck_ids.add(c.checkpoint_id)
        if c.parent_dataset not in dataset_ids:
            out.append(Violation(path, "checkpoint-dataset-resolves", c.parent_dataset))
        if not all(_finite(v) for v in c.metrics.values()):
            out.append(Violation(path, "checkpoint-metrics-finite"))
    for r in model.eval_reports:
        path = f"model.eval_reports.{r.model_id}:{r.benchmark_id}"
        if not _finite(r.success_rate) or not (0.0 <= r.success_rate <= 1.0):
            out.append(Violation(path, "eval-success-rate-range", str(r.success_rate)))
        if not isinstance(r.episode_count, int) or r.episode_count < 0:
            out.append(Violation(path, "eval-episode-count-nonnegative", str(r.episode_count)))
        if r.status == "completed" and r.episode_count <= 0:
            out.append(Violation(path, "eval-completed-has-episodes"))
        if not _finite(r.resource_units) or r.resource_units < 0:
            out.append(Violation(path, "eval-resource-nonnegative", str(r.resource_units)))
