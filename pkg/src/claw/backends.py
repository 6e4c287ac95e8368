"""Platform adapters: grounding skill calls into backend actions.

A skill call names things symbolically (categories, relations, tasks); the
adapter resolves every symbol against the live context and environment into a
``GroundedAction`` whose args are plain ids, numbers, and paths.  The bundled
``MockBackend`` is fully deterministic: scene placement follows fixed offset
rules, trajectory collection interpolates waypoints, and training and
evaluation are closed forms over seeds.  Fault injection lives here too, so
executor tests exercise real verification failures rather than stubs.
"""

from __future__ import annotations

import copy
import hashlib
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from .assets import Environment, default_environment, task_categories
from .episodes import Episode, EpisodeStore, Step
from .errors import (BackendUnavailable, InvalidPlacement, MissingDataset,
                     SourceUnavailable, UnknownBenchmark, UnsupportedCapability)
from .formats import export_episodes, manifest_for
from .skills import EVAL_UNIT_COST, SkillCall, SkillLibrary, validate_params
from .state import (CameraState, Checkpoint, CodeAsset, Entity, EvalReport,
                    ManifestRef, OperationalContext, Pose, ProvenanceRecord,
                    RobotState, SceneState)

# Deterministic placement offsets, in meters.
NEAR_OFFSET = 0.2         # +x from the anchor
SIDE_OFFSET = 0.3         # +/-y for left_of / right_of
GRID_PITCH = 0.2          # free placement grid spacing
GOAL_TOLERANCE = 1e-3     # effector must end this close to the carry goal

DEFAULT_EXTENT = (0.1, 0.1, 0.1)
DEFAULT_EVAL_EPISODES = 10

MOCK_BINDINGS = (
    "inspect", "spawn-asset", "spawn-asset-alt", "remove-entity", "set-relation",
    "set-lighting", "set-robot", "set-camera", "collect", "collect-alt",
    "export", "export-alt", "edit-code", "train", "evaluate", "ingest",
)

# Collection motion profiles: (home, lift offset, segment lengths).  Segment
# lengths sum+1 is the episode length; the alternate collector moves through
# different waypoints so substituted runs are distinguishable but still valid.
_PROFILES = {
    "primary": {"home": (0.3, 0.0, 0.6), "lift": 0.25, "segments": (6, 6, 6, 5),
                "goal": (0.4, 0.3, 0.3)},
    "alt": {"home": (0.25, -0.05, 0.55), "lift": 0.2, "segments": (5, 5, 5, 4),
            "goal": (0.35, 0.25, 0.25)},
}


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    capabilities: frozenset
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"backend_id": self.backend_id,
                "capabilities": sorted(self.capabilities),
                "config": dict(sorted(self.config.items()))}


@dataclass
class GroundedAction:
    """A fully resolved request: no symbolic references remain in ``args``."""

    binding: str
    backend_id: str
    args: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"binding": self.binding, "backend_id": self.backend_id,
                "args": dict(sorted(self.args.items()))}


# --- symbol resolution ---

def _resolve_entity(scene: SceneState, mention: str | None) -> str | None:
    """Entity id if the mention is one; else lowest id of the category."""
    if not mention:
        return None
    if scene.entity(mention) is not None:
        return mention
    matches = scene.entities_of(mention)
    return matches[0].entity_id if matches else None


def _extent_of(env: Environment, entity: Entity) -> tuple:
    if entity.asset_ref and env.assets.has(entity.asset_ref):
        ext = env.assets.get(entity.asset_ref).extent
    else:
        ext = DEFAULT_EXTENT
    return tuple(v * entity.scale for v in ext)


def _allocate_entity_id(scene: SceneState, category: str) -> str:
    taken = {e.entity_id for e in scene.entities}
    n = 1
    while f"{category}_{n}" in taken:
        n += 1
    return f"{category}_{n}"


def bind(call: SkillCall, lib: SkillLibrary, env: Environment, backend,
         ctx: OperationalContext, seed: int | None = None) -> GroundedAction:
    """Ground ``call`` against the current context.

    Raises UnsupportedCapability when the backend lacks the skill's binding.
    Asset lookups may raise UnregisteredAsset.  Unresolvable anchors surface
    later as InvalidPlacement from the simulator, not here: binding only
    resolves what it can decide locally.
    """
    spec = lib.get(call.skill_id)
    validate_params(spec, call.params)
    if spec.binding not in backend.capabilities:
        raise UnsupportedCapability(
            f"backend {backend.backend_id!r} cannot perform {spec.binding!r}")
    p = call.params
    args: dict = {"skill_id": call.skill_id}
    scene = ctx.scene

    if spec.binding in ("spawn-asset", "spawn-asset-alt"):
        category = p["category"]
        asset = env.assets.get(p["asset"]) if p.get("asset") \
            else env.assets.best_for_category(category)
        args.update(
            category=category, asset_id=asset.asset_id,
            entity_id=_allocate_entity_id(scene, category),
            extent=[v * asset.scale for v in asset.extent], scale=asset.scale)
        if p.get("relation"):
            anchor = _resolve_entity(scene, p.get("anchor") or p.get("anchor_category"))
            args.update(relation=p["relation"], anchor_id=anchor)
            if anchor is not None:
                args["anchor_extent"] = list(_extent_of(env, scene.entity(anchor)))
    elif spec.binding == "remove-entity":
        args["entity_id"] = _resolve_entity(scene, p.get("entity") or p.get("category"))
    elif spec.binding == "set-relation":
        subject = _resolve_entity(scene, p.get("entity") or p.get("category"))
        anchor = _resolve_entity(scene, p.get("anchor") or p.get("anchor_category"))
        args.update(entity_id=subject, relation=p["relation"], anchor_id=anchor)
        if subject is not None:
            args["extent"] = list(_extent_of(env, scene.entity(subject)))
        if anchor is not None:
            args["anchor_extent"] = list(_extent_of(env, scene.entity(anchor)))
    elif spec.binding == "set-lighting":
        for k in ("intensity", "color_temp"):
            if p.get(k) is not None:
                args[k] = float(p[k])
    elif spec.binding == "set-robot":
        args.update(model=p["model"], joint_names=list(env.robots.get(p["model"], [])))
    elif spec.binding == "set-camera":
        args.update(camera_id=p["camera_id"], add=call.skill_id != "remove_camera")
        if call.skill_id != "remove_camera":
            args["fov_deg"] = float(p.get("fov_deg") or 60.0)
    elif spec.binding in ("collect", "collect-alt"):
        robot = scene.robot
        args.update(
            task=p["task"], count=int(p["count"]),
            seed=int(p["seed"]) if p.get("seed") is not None else int(seed or 0),
            start_index=len(ctx.data.episodes),
            joint_dim=len(robot.joint_names) if robot and robot.joint_names else 7,
            profile="alt" if spec.binding == "collect-alt" else "primary")
    elif spec.binding in ("export", "export-alt"):
        refs = ctx.data.episodes_of(p["task"]) if p.get("task") else \
            sorted(ctx.data.episodes, key=lambda r: r.episode_id)
        args.update(format=p["format"], episode_ids=[r.episode_id for r in refs])
    elif spec.binding == "edit-code":
        args.update(asset_id=p["asset_id"], content=p.get("content") or "")
    elif spec.binding == "train":
        fmt = p["dataset_format"]
        ref = ctx.data.exports.get(fmt)
        args.update(
            dataset_format=fmt, epochs=int(p.get("epochs") or 1),
            seed=int(p["seed"]) if p.get("seed") is not None else int(seed or 0),
            manifest_id=ref.manifest_id if ref else None,
            checksum=ref.checksum if ref else "")
        if p.get("target_loss") is not None:
            args["target_loss"] = float(p["target_loss"])
    elif spec.binding == "evaluate":
        args.update(
            model=p["model"], benchmark=p["benchmark"],
            episodes=int(p.get("episodes") or DEFAULT_EVAL_EPISODES),
            seed=int(p["seed"]) if p.get("seed") is not None else int(seed or 0))
    elif spec.binding == "ingest":
        args["source"] = {"kind": p.get("source") or "catalog",
                          "ref": p.get("ref") or "", "category": p["category"],
                          "unit": p.get("unit") or "m"}
    elif spec.binding == "inspect":
        args.update({k: v for k, v in p.items() if v is not None})
    else:
        raise UnsupportedCapability(f"no grounding rule for {spec.binding!r}")
    return GroundedAction(spec.binding, backend.backend_id, args)


# --- mock simulator ---

def _placement(relation: str, anchor_pos, anchor_ext, subject_ext) -> tuple:
    ax, ay, az = anchor_pos
    if relation == "on":
        return (ax, ay, round(az + anchor_ext[2] / 2 + subject_ext[2] / 2, 6))
    if relation == "in":
        return (ax, ay, az)
    if relation == "near":
        return (round(ax + NEAR_OFFSET, 6), ay, az)
    if relation == "left_of":
        return (ax, round(ay + SIDE_OFFSET, 6), az)
    if relation == "right_of":
        return (ax, round(ay - SIDE_OFFSET, 6), az)
    raise InvalidPlacement(f"unknown relation {relation!r}")


def _grid_position(scene: SceneState, subject_ext) -> tuple:
    k = len(scene.entities)
    return (round(GRID_PITCH * (k % 5) - 0.4, 6),
            round(GRID_PITCH * (k // 5) - 0.4, 6),
            round(subject_ext[2] / 2, 6))


def mock_sim_apply(action: GroundedAction, scene: SceneState) -> SceneState:
    """Apply one grounded scene mutation; pure, returns a new scene.

    Every application bumps ``version`` exactly once, including no-ops, so
    provenance stays unambiguous.
    """
    out = copy.deepcopy(scene)
    out.version += 1
    a = action.args
    binding = action.binding

    if binding in ("spawn-asset", "spawn-asset-alt"):
        subject_ext = tuple(a.get("extent") or DEFAULT_EXTENT)
        relation = a.get("relation")
        if relation:
            anchor_id = a.get("anchor_id")
            anchor = out.entity(anchor_id) if anchor_id else None
            if anchor is None:
                raise InvalidPlacement(f"no anchor in scene for {relation!r} placement")
            pos = _placement(relation, anchor.pose.position,
                             tuple(a.get("anchor_extent") or DEFAULT_EXTENT), subject_ext)
        else:
            pos = _grid_position(scene, subject_ext)
        out.entities.append(Entity(a["entity_id"], a["category"], a["asset_id"],
                                   Pose(position=pos), a.get("scale", 1.0)))
        if relation:
            out.relations.append((a["entity_id"], relation, a["anchor_id"]))
    elif binding == "remove-entity":
        eid = a.get("entity_id")
        out.entities = [e for e in out.entities if e.entity_id != eid]
        out.relations = [r for r in out.relations if eid not in (r[0], r[2])]
    elif binding == "set-relation":
        eid, anchor_id = a.get("entity_id"), a.get("anchor_id")
        subject = out.entity(eid) if eid else None
        anchor = out.entity(anchor_id) if anchor_id else None
        if subject is None or anchor is None:
            raise InvalidPlacement("set-relation needs both entities in the scene")
        subject.pose = Pose(position=_placement(
            a["relation"], anchor.pose.position,
            tuple(a.get("anchor_extent") or DEFAULT_EXTENT),
            tuple(a.get("extent") or DEFAULT_EXTENT)))
        # moving invalidates the subject's previous placement facts
        out.relations = [r for r in out.relations if r[0] != eid]
        out.relations.append((eid, a["relation"], anchor_id))
    elif binding == "set-lighting":
        if "intensity" in a:
            out.lighting.intensity = float(a["intensity"])
        if "color_temp" in a:
            out.lighting.color_temp = float(a["color_temp"])
    elif binding == "set-robot":
        out.robot = RobotState(a["model"], Pose(), list(a.get("joint_names") or []))
    elif binding == "set-camera":
        cid = a["camera_id"]
        out.cameras = [c for c in out.cameras if c.camera_id != cid]
        if a.get("add", True):
            out.cameras.append(CameraState(
                cid, Pose(position=(0.0, 0.0, 1.5)), a.get("fov_deg", 60.0)))
    else:
        raise BackendUnavailable(f"mock simulator has no rule for {binding!r}")
    return out


# --- mock trajectory collection ---

def _segment(a: tuple, b: tuple, n: int) -> list[tuple]:
    pts = []
    for k in range(1, n + 1):
        t = k / n
        pts.append(tuple(round(a[i] + (b[i] - a[i]) * t, 6) for i in range(3)))
    return pts


def _episode_seed(task: str, scene: SceneState, seed: int, index: int) -> int:
    key = f"{task}|{scene.scene_id}|{scene.version}|{seed}|{index}"
    return int(hashlib.sha256(key.encode()).hexdigest()[:8], 16)


def mock_collect(task: str, count: int, scene: SceneState, seed: int,
                 fault_rate: float = 0.0, start_index: int = 0,
                 joint_dim: int = 7, profile: str = "primary") -> list[Episode]:
    """Deterministic scripted collection: home -> approach -> grasp -> lift ->
    carry goal,* interpolated to a fixed step count.

    An episode succeeds iff its final effector position lands within
    GOAL_TOLERANCE of the carry goal; injected faults truncate the trajectory,
    which fails that check honestly rather than flipping a flag.
    """
    prof = _PROFILES[profile]
    categories = task_categories(task)
    targets = scene.entities_of(categories[0])
    target = targets[0].pose.position if targets else (0.3, 0.0, 0.1)
    approach = (target[0], target[1], round(target[2] + 0.2, 6))
    grasp = (target[0], target[1], round(target[2] + 0.05, 6))
    lift = (target[0], target[1], round(target[2] + prof["lift"], 6))
    waypoints = [prof["home"], approach, grasp, lift, prof["goal"]]
    segments = prof["segments"]
    path = [prof["home"]]
    for i, n in enumerate(segments):
        path.extend(_segment(waypoints[i], waypoints[i + 1], n))
    total = len(path)
    grasp_idx = 1 + segments[0] + segments[1]

    episodes = []
    for i in range(count):
        index = start_index + i
        ep_id = f"{task}-s{seed}-{index:04d}"
        ep_rng = random.Random(_episode_seed(task, scene, seed, index))
        jitter = round((ep_rng.random() - 0.5) * 0.02, 6)
        faulted = fault_rate > 0 and ep_rng.random() < fault_rate
        cut = 6 + ep_rng.randrange(max(2, total // 2)) if faulted else total
        steps = []
        for t in range(min(cut, total)):
            x, y, z = path[t]
            joints = [round(0.1 * j - 0.3 + 0.02 * math.sin(0.3 * t + j) + jitter, 6)
                      for j in range(joint_dim)]
            gripper = 1.0 if grasp_idx <= t < total - 1 else 0.0
            steps.append(Step(t, joints, [x, y, z, 1.0, 0.0, 0.0, 0.0], gripper,
                              f"frames/{ep_id}/{t:04d}.png"))
        final = steps[-1].effector[:3] if steps else (math.inf,) * 3
        dist = math.sqrt(sum((final[i] - prof["goal"][i]) ** 2 for i in range(3)))
        episodes.append(Episode(ep_id, task, seed, steps, success=dist <= GOAL_TOLERANCE))
    return episodes


# --- mock training / evaluation ---

def mock_train(parent_dataset: str, epochs: int, seed: int,
               checksum: str = "") -> Checkpoint:
    """Closed-form loss curve with a small seeded residual; exactly
    reproducible from (dataset id, checksum, epochs, seed)."""
    if not parent_dataset:
        raise MissingDataset("training requires an exported dataset")
    noise = int(hashlib.sha256(f"{checksum}|{seed}".encode()).hexdigest()[:6], 16) % 1000
    loss = round(0.9 * (0.7 ** epochs) + noise / 10000, 6)
    ckpt_id = f"ckpt-{parent_dataset[:8]}-e{epochs}-s{seed}"
    return Checkpoint(ckpt_id, parent_dataset,
                      {"loss": loss, "epochs": float(epochs)})


def mock_evaluate(model: str, benchmark: str, episodes: int, seed: int,
                  benchmarks=None) -> EvalReport:
    if benchmarks is not None and benchmark not in benchmarks:
        raise UnknownBenchmark(f"unknown benchmark {benchmark!r}")
    digest = hashlib.sha256(f"{model}|{benchmark}|{seed}".encode()).hexdigest()
    rate = round(int(digest[:8], 16) / 0xFFFFFFFF, 4)
    return EvalReport(model, benchmark, rate, episodes,
                      episodes * EVAL_UNIT_COST, "completed")


def code_status(content: str) -> str:
    """Mock static check: code is valid unless it carries a bug marker."""
    if not content.strip():
        return "invalid"
    return "invalid" if "BUG" in content else "valid"


# --- the deterministic backend ---

class MockBackend:
    """In-process backend covering every builtin binding.

    ``fault_rates`` maps a skill id (or binding id) to a probability; faults
    are drawn from one seeded stream in application order, so a run is
    reproducible from (seed, fault_rates, action sequence).
    """

    backend_id = "mock"

    def __init__(self, env: Environment | None = None,
                 episode_store: EpisodeStore | None = None,
                 export_root: str | Path | None = None,
                 seed: int = 0, fault_rates: dict | None = None):
        self.env = env or default_environment()
        self.episode_store = episode_store
        self.export_root = Path(export_root) if export_root is not None else None
        self.seed = seed
        self.fault_rates = dict(fault_rates or {})
        self._rng = random.Random(seed)
        self._mem_episodes: dict[str, Episode] = {}

    @property
    def capabilities(self) -> frozenset:
        return frozenset(MOCK_BINDINGS)

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(self.backend_id, self.capabilities,
                                 {"seed": self.seed})

    # episode persistence falls back to memory so the backend works standalone
    def _store_episode(self, ep: Episode):
        self._mem_episodes[ep.episode_id] = ep
        if self.episode_store is not None:
            self.episode_store.put(ep)

    def get_episode(self, episode_id: str) -> Episode:
        if episode_id in self._mem_episodes:
            return self._mem_episodes[episode_id]
        if self.episode_store is not None and self.episode_store.has(episode_id):
            return self.episode_store.get(episode_id)
        raise MissingDataset(f"episode {episode_id!r} is not stored")

    def get_episodes(self, episode_ids) -> list[Episode]:
        return [self.get_episode(i) for i in episode_ids]

    def _fault_fires(self, args: dict, binding: str) -> bool:
        rate = self.fault_rates.get(args.get("skill_id", ""),
                                    self.fault_rates.get(binding, 0.0))
        if rate <= 0:
            return False
        return self._rng.random() < rate

    def apply(self, action: GroundedAction,
              ctx: OperationalContext) -> tuple[OperationalContext, dict]:
        """Execute one grounded action; returns (new context, details).

        Never mutates ``ctx``.  Injected faults produce states whose
        postconditions fail verification; they do not raise.
        """
        binding = action.binding
        if binding not in self.capabilities:
            raise BackendUnavailable(f"mock backend cannot perform {binding!r}")
        fault = self._fault_fires(action.args, binding)
        out = ctx.clone()
        details: dict = {"binding": binding, "fault_injected": fault}

        if binding in ("spawn-asset", "spawn-asset-alt", "remove-entity",
                       "set-relation", "set-lighting", "set-robot", "set-camera"):
            if fault:
                # the platform "acted" but the change did not take
                out.scene.version += 1
            else:
                out.scene = mock_sim_apply(action, ctx.scene)
            details["scene_version"] = out.scene.version
        elif binding in ("collect", "collect-alt"):
            a = action.args
            rate = 1.0 if fault else 0.0
            eps = mock_collect(a["task"], a["count"], ctx.scene, a["seed"],
                               fault_rate=rate, start_index=a["start_index"],
                               joint_dim=a["joint_dim"], profile=a["profile"])
            for ep in eps:
                self._store_episode(ep)
                out.data.episodes.append(ep.ref())
                out.data.provenance[ep.episode_id] = ProvenanceRecord(
                    ctx.scene.scene_id, ctx.scene.version, a["seed"])
            details.update(episode_ids=[e.episode_id for e in eps],
                           successes=sum(e.success for e in eps))
        elif binding in ("export", "export-alt"):
            details.update(self._apply_export(action.args, out, fault))
        elif binding == "edit-code":
            a = action.args
            content = a["content"]
            status = "invalid" if fault else code_status(content)
            digest = hashlib.sha256(content.encode()).hexdigest()
            asset = out.model.code_asset(a["asset_id"])
            if asset is None:
                out.model.code_assets.append(CodeAsset(a["asset_id"], digest, status))
            else:
                asset.content_hash, asset.status = digest, status
            details.update(asset_id=a["asset_id"], status=status)
        elif binding == "train":
            a = action.args
            if not a.get("manifest_id"):
                raise MissingDataset(
                    f"no export in format {a['dataset_format']!r} to train on")
            ckpt = mock_train(a["manifest_id"], a["epochs"], a["seed"], a["checksum"])
            if fault:
                # diverged run: loss lands an order of magnitude high
                ckpt.metrics["loss"] = round(ckpt.metrics["loss"] * 10 + 1.0, 6)
            out.model.checkpoints = [c for c in out.model.checkpoints
                                     if c.checkpoint_id != ckpt.checkpoint_id]
            out.model.checkpoints.append(ckpt)
            details.update(checkpoint_id=ckpt.checkpoint_id, loss=ckpt.metrics["loss"])
        elif binding == "evaluate":
            a = action.args
            report = mock_evaluate(a["model"], a["benchmark"], a["episodes"],
                                   a["seed"], self.env.benchmarks)
            if fault:
                report = EvalReport(a["model"], a["benchmark"], 0.0, 0, 0.0, "failed")
            out.model.eval_reports.append(report)
            details.update(success_rate=report.success_rate, status=report.status)
        elif binding == "ingest":
            if fault:
                raise SourceUnavailable("ingest source did not respond")
            rec = self.env.assets.ingest(action.args["source"], self.backend_id)
            details.update(asset_id=rec.asset_id, category=rec.category)
        elif binding == "inspect":
            details["observation"] = self._observe(action.args, ctx)
        return out, details

    def _apply_export(self, a: dict, out: OperationalContext, fault: bool) -> dict:
        fmt = a["format"]
        eps = self.get_episodes(a["episode_ids"])
        manifest = manifest_for(eps, fmt)
        rel = f"exports/{fmt}/{manifest.manifest_id[:12]}"
        if self.export_root is not None:
            written = export_episodes(eps, fmt, self.export_root / rel)
            if fault:
                self._corrupt_one_file(written)
        ref = ManifestRef(manifest.manifest_id, fmt, rel,
                          list(a["episode_ids"]), manifest.checksum())
        out.data.record_export(ref)
        return {"manifest_id": manifest.manifest_id, "path": rel,
                "files": len(manifest.files)}

    @staticmethod
    def _corrupt_one_file(manifest) -> None:
        # flip one byte in the first data file; checksums then disagree
        for rel in sorted(manifest.files):
            if rel == "manifest.json":
                continue
            path = manifest.root / rel
            raw = bytearray(path.read_bytes())
            if raw:
                raw[0] ^= 0xFF
                path.write_bytes(bytes(raw))
                return

    def _observe(self, a: dict, ctx: OperationalContext) -> dict:
        category = a.get("category")
        entities = ctx.scene.entities_of(category) if category else \
            sorted(ctx.scene.entities, key=lambda e: e.entity_id)
        mention = a.get("entity")
        if mention:
            eid = _resolve_entity(ctx.scene, mention)
            entities = [ctx.scene.entity(eid)] if eid else []
        return {
            "entities": [{"id": e.entity_id, "category": e.category,
                          "position": list(e.pose.position)} for e in entities],
            "assets": sorted(r.asset_id for r in
                             (self.env.assets.for_category(category) if category
                              else [])),
            "scene_version": ctx.scene.version,
        }
