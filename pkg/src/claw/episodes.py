"""Trajectory episode model and the on-disk episode store.

An episode is an ordered list of timestamped steps (joint vector, effector
pose, gripper, camera-frame reference) plus a success flag.  Episodes are
immutable once recorded and content-hashable, so operational contexts can
hold lightweight references and still roll back exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .state import EpisodeRef, canonical_json


@dataclass
class Step:
    timestep: int
    joints: list[float]
    effector: list[float]          # x, y, z, qw, qx, qy, qz
    gripper: float
    frame_ref: str

    def __post_init__(self):
        self.joints = [float(v) for v in self.joints]
        self.effector = [float(v) for v in self.effector]
        self.gripper = float(self.gripper)

    def as_dict(self) -> dict:
        return {"timestep": self.timestep, "joints": self.joints,
                "effector": self.effector, "gripper": self.gripper,
                "frame_ref": self.frame_ref}

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(d["timestep"], d["joints"], d["effector"], d["gripper"], d["frame_ref"])


@dataclass
class Episode:
    episode_id: str
    task_id: str
    seed: int
    steps: list[Step] = field(default_factory=list)
    success: bool = False

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def joint_dim(self) -> int:
        return len(self.steps[0].joints) if self.steps else 0

    def as_dict(self) -> dict:
        return {"episode_id": self.episode_id, "task_id": self.task_id,
                "seed": self.seed, "success": self.success,
                "steps": [s.as_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(d["episode_id"], d["task_id"], d["seed"],
                   [Step.from_dict(s) for s in d["steps"]], d["success"])

    def content_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.as_dict()).encode()).hexdigest()

    def ref(self) -> EpisodeRef:
        return EpisodeRef(self.episode_id, self.task_id, self.success,
                          self.length, self.seed)


EpisodeSet = list


def validate_episode(ep: Episode) -> list[str]:
    """Structural checks; returns human-readable problem strings."""
    problems = []
    expected_t = 0
    dim = ep.joint_dim
    for s in ep.steps:
        if s.timestep != expected_t:
            problems.append(f"{ep.episode_id}: timestep {s.timestep} != {expected_t}")
        expected_t += 1
        if len(s.joints) != dim:
            problems.append(f"{ep.episode_id}: joint dim {len(s.joints)} != {dim}")
        if not (0.0 <= s.gripper <= 1.0):
            problems.append(f"{ep.episode_id}: gripper {s.gripper} out of range")
    return problems


class EpisodeStore:
    """Directory of immutable ``<episode_id>.json`` files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, ep: Episode):
        path = self.root / f"{ep.episode_id}.json"
        if not path.exists():
            path.write_text(canonical_json(ep.as_dict()), "utf-8")

    def get(self, episode_id: str) -> Episode:
        path = self.root / f"{episode_id}.json"
        return Episode.from_dict(json.loads(path.read_text("utf-8")))

    def has(self, episode_id: str) -> bool:
        return (self.root / f"{episode_id}.json").exists()

    def get_many(self, episode_ids) -> list[Episode]:
        return [self.get(i) for i in episode_ids]
