"""Deterministic planning-instance generator shared by the planner tests and
the acceptance gate.  Instances are small enough for exhaustive enumeration."""

from __future__ import annotations

import random

from claw.goals import (AssetGoal, CameraCountAtLeast, CameraExists, DataGoals,
                        EntityAbsent, EntityExists, FieldEquals, GoalSpec,
                        ModelGoals, Ref, RelationHolds, RobotIs)
from claw.planner import CostModel
from claw.state import (EpisodeRef, ManifestRef, OperationalContext,
                        ProvenanceRecord)

from conftest import build_scene

_SPAWNABLE = ("mug", "block", "plate", "bottle", "bowl")
_FORMATS = ("hierarchical-container", "episode-folder", "sequential-record",
            "video-stub")


def _ctx_with_episodes(task: str, count: int, length: int = 10) -> OperationalContext:
    cats = {"pick_mug": ["table", "mug"], "pick_block": ["table", "block"]}[task]
    ctx = OperationalContext(scene=build_scene(*cats))
    for i in range(count):
        eid = f"{task}-s0-{i:04d}"
        ctx.data.episodes.append(EpisodeRef(eid, task, True, length, 0))
        ctx.data.provenance[eid] = ProvenanceRecord("main", 0, 0)
    return ctx


def _ctx_with_export(fmt: str, task: str = "pick_mug") -> OperationalContext:
    ctx = _ctx_with_episodes(task, 2)
    ids = [e.episode_id for e in ctx.data.episodes]
    ctx.data.record_export(ManifestRef(f"mani-{fmt}", fmt, f"exports/{fmt}/x",
                                       ids, "deadbeef"))
    return ctx


def _exists(category: str) -> EntityExists:
    return EntityExists(Ref(category, category=category))


def make_instance(index: int) -> dict:
    """Instance ``index`` of the fixed corpus; stable across runs."""
    rng = random.Random(1000 + index)
    fam = index % 14
    depth = 4
    ctx = OperationalContext(scene=build_scene("table"))
    extras: dict = {}

    if fam == 0:
        value = round(rng.choice([0.2, 0.35, 0.5, 0.8]), 6)
        goal = GoalSpec(scene_goals=[FieldEquals("lighting.intensity", value)])
        depth = 3
    elif fam == 1:
        goal = GoalSpec(scene_goals=[_exists(rng.choice(_SPAWNABLE))])
        ctx = OperationalContext() if rng.random() < 0.5 else ctx
        depth = 3
    elif fam == 2:
        # asset must be ingested before it can be spawned
        cat = rng.choice(("vase", "lamp", "toy_robot"))
        goal = GoalSpec(scene_goals=[_exists(cat)])
    elif fam == 3:
        cat = rng.choice(("mug", "block"))
        ctx = OperationalContext(scene=build_scene("table", cat))
        goal = GoalSpec(scene_goals=[EntityAbsent(Ref(cat, category=cat))])
        depth = 3
    elif fam == 4:
        present = rng.choice(("both", "table-only", "none"))
        if present == "both":
            ctx = OperationalContext(scene=build_scene("table", "mug"))
        elif present == "none":
            ctx = OperationalContext()
        goal = GoalSpec(scene_goals=[RelationHolds(
            Ref("mug", category="mug"), "on", Ref("table", category="table"))])
        depth = 5 if present == "none" else 4
    elif fam == 5:
        goal = GoalSpec(scene_goals=[RobotIs(rng.choice(("franka", "ur5", "aloha")))])
        depth = 3
    elif fam == 6:
        if rng.random() < 0.5:
            goal = GoalSpec(scene_goals=[CameraExists(f"cam_{rng.randrange(3)}")])
            depth = 3
        else:
            goal = GoalSpec(scene_goals=[CameraCountAtLeast(2)])
            depth = 4
    elif fam == 7:
        task = rng.choice(("pick_mug", "pick_block"))
        count = rng.randrange(1, 4)
        ready = rng.random() < 0.5
        if ready:
            cats = {"pick_mug": ("table", "mug"), "pick_block": ("table", "block")}[task]
            ctx = OperationalContext(scene=build_scene(*cats))
            depth = 3
        goal = GoalSpec(data_goals=DataGoals(min_episodes=count, task_id=task))
        if rng.random() < 0.5:
            extras = {"seed": rng.randrange(100)}
    elif fam == 8:
        fmt = rng.choice(_FORMATS)
        ctx = _ctx_with_episodes("pick_mug", 2)
        goal = GoalSpec(data_goals=DataGoals(required_formats=[fmt]))
        depth = 3
    elif fam == 9:
        fmt = rng.choice(_FORMATS)
        ctx = _ctx_with_export(fmt)
        goal = GoalSpec(model_goals=ModelGoals(
            train_format=fmt, train_epochs=rng.randrange(1, 4),
            target_metric=rng.choice([None, 0.3])))
        depth = 3
    elif fam == 10:
        ctx = OperationalContext()
        goal = GoalSpec(model_goals=ModelGoals(
            required_reports=[(rng.choice(("model_alpha", "model_beta")),
                               rng.choice(("libero", "robotwin", "simplerenv")))],
            eval_episodes=rng.randrange(5, 15)))
        if rng.random() < 0.5:
            extras = {"seed": rng.randrange(100)}
        depth = 3
    elif fam == 11:
        goal = GoalSpec(asset_goals=[AssetGoal(rng.choice(("vase", "lamp", "toy_robot")))],
                        scene_goals=[])
        ctx = OperationalContext()
        depth = 2
    elif fam == 12:
        goal = GoalSpec(model_goals=ModelGoals(required_valid_code=["reward_fn"]))
        depth = 2
        if rng.random() < 0.5:
            extras = {"code_content": "def reward(sample):\n    return 1.0\n"}
    else:
        combo = rng.choice(("scene", "data", "mixed"))
        if combo == "scene":
            goal = GoalSpec(scene_goals=[
                FieldEquals("lighting.intensity", 0.4),
                _exists(rng.choice(_SPAWNABLE))])
        elif combo == "data":
            ctx = OperationalContext(scene=build_scene("table", "mug"))
            goal = GoalSpec(data_goals=DataGoals(
                min_episodes=1, task_id="pick_mug",
                required_formats=[rng.choice(_FORMATS)]))
        else:
            goal = GoalSpec(scene_goals=[RobotIs("franka"),
                                         CameraExists("cam_main")])
        depth = 4

    cost = CostModel(alpha=1.0, lam=rng.choice([5.0, 10.0, 20.0]),
                     max_depth=depth)
    return {"name": f"instance-{index:02d}-fam{fam}", "goal": goal, "ctx": ctx,
            "cost": cost, "extras": extras}


def make_instances(n: int = 50) -> list[dict]:
    return [make_instance(i) for i in range(n)]
