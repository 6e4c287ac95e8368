"""Shared fixtures: libraries, environments, and ready-made contexts."""

from __future__ import annotations

import pytest

from claw.assets import default_environment
from claw.backends import MockBackend, bind
from claw.planner import CostModel
from claw.skills import load_library, make_call
from claw.state import (CameraState, Entity, LightingState, OperationalContext,
                        Pose, RobotState, SceneState)


@pytest.fixture(scope="session")
def lib():
    return load_library()


@pytest.fixture
def env():
    # fresh per test: ingest mutates the asset library
    return default_environment()


@pytest.fixture
def cost():
    return CostModel()


def build_scene(*categories, robot=None, cameras=(), relations=(),
                version=0) -> SceneState:
    """Scene with one entity per category, placed on a grid."""
    entities = []
    for i, cat in enumerate(categories):
        entities.append(Entity(f"{cat}_1", cat, f"{cat}_01",
                               Pose(position=(0.2 * i, 0.0, 0.1))))
    scene = SceneState(
        version=version, entities=entities, relations=list(relations),
        robot=RobotState(robot, Pose(), [f"joint_{i}" for i in range(7)])
        if robot else None,
        lighting=LightingState(),
        cameras=[CameraState(c) for c in cameras])
    return scene


@pytest.fixture
def table_mug_ctx():
    scene = build_scene("table", "mug", robot="franka",
                        relations=[("mug_1", "on", "table_1")], version=3)
    return OperationalContext(scene=scene)


class Runner:
    """Drives skills straight through bind/apply for backend-level tests."""

    def __init__(self, lib, env, backend=None, ctx=None, seed=0):
        self.lib = lib
        self.env = env
        self.backend = backend or MockBackend(env=env, seed=seed)
        self.ctx = ctx or OperationalContext()

    def do(self, skill_id, **params):
        call = make_call(self.lib.get(skill_id), params)
        action = bind(call, self.lib, self.env, self.backend, self.ctx)
        self.ctx, details = self.backend.apply(action, self.ctx)
        return details


@pytest.fixture
def runner(lib, env):
    return Runner(lib, env)
