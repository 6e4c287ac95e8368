"""Scene path model and structured diffs.

A scene is flattened to a map of dotted paths to canonical JSON values:

    scene_id, entities.<id>, relations.<s>:<p>:<o>, robot,
    lighting.intensity, lighting.color_temp, cameras.<id>

``version`` is bookkeeping, not content, and is deliberately excluded so that
preservation scoring and diffs compare what the user cares about.  The same
path vocabulary feeds preservation deviation, the diff API payload, and the
console's diff viewer: one diff implementation for all three.
"""

from __future__ import annotations

from fnmatch import fnmatchcase

from .state import SceneState, canonical_json


def scene_paths(scene: SceneState) -> dict[str, str]:
    """Flatten a scene to ``{path: canonical value}``."""
    paths: dict[str, str] = {"scene_id": canonical_json(scene.scene_id)}
    for e in scene.entities:
        paths[f"entities.{e.entity_id}"] = canonical_json(e.as_dict())
    for s, p, o in scene.relations:
        paths[f"relations.{s}:{p}:{o}"] = canonical_json(True)
    paths["robot"] = canonical_json(scene.robot.as_dict() if scene.robot else None)
    paths["lighting.intensity"] = canonical_json(scene.lighting.intensity)
    paths["lighting.color_temp"] = canonical_json(scene.lighting.color_temp)
    for c in scene.cameras:
        paths[f"cameras.{c.camera_id}"] = canonical_json(c.as_dict())
    return paths


def path_matches(pattern: str, path: str) -> bool:
    """Glob patterns use fnmatch; plain patterns match themselves and any
    sub-path (``lighting`` covers ``lighting.intensity``)."""
    if "*" in pattern or "?" in pattern:
        return fnmatchcase(path, pattern)
    return path == pattern or path.startswith(pattern + ".") or path.startswith(pattern + ":")


def matches_any(patterns, path: str) -> bool:
    return any(path_matches(p, path) for p in patterns)


def diff_scenes(before: SceneState, after: SceneState) -> dict:
    """Structured diff between two scenes over the shared path vocabulary."""
    a = scene_paths(before)
    b = scene_paths(after)
    added = sorted(p for p in b if p not in a)
    removed = sorted(p for p in a if p not in b)
    changed = sorted(p for p in a if p in b and a[p] != b[p])
    return {
        "added": [{"path": p, "value": b[p]} for p in added],
        "removed": [{"path": p, "value": a[p]} for p in removed],
        "changed": [{"path": p, "old": a[p], "new": b[p]} for p in changed],
    }
