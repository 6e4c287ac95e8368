"""Abstract planning state: a finite, hashable summary of a context.

The planner searches over these instead of full contexts.  Abstraction is a
pure function, so two contexts with equal canonical bytes always abstract to
the same state; skill effect models transform abstract states without
touching any backend.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

from .state import OperationalContext


def _bump(counts: tuple, key: str, delta: int) -> tuple:
    current = dict(counts)
    current[key] = current.get(key, 0) + delta
    return tuple(sorted((k, n) for k, n in current.items() if n > 0))


@dataclass(frozen=True)
class AbstractState:
    entity_counts: tuple = ()              # (category, count), sorted
    relations: frozenset = frozenset()     # (subject category, predicate, object category)
    robot: str = ""
    lighting_intensity: float = 0.6
    lighting_color_temp: float = 4500.0
    camera_ids: frozenset = frozenset()
    episode_counts: tuple = ()             # (task id, successful episodes), sorted
    export_formats: frozenset = frozenset()
    trained_formats: frozenset = frozenset()
    code_ids: frozenset = frozenset()
    code_valid: frozenset = frozenset()
    report_pairs: frozenset = frozenset()  # (model id, benchmark id), completed
    resource_units: float = 0.0
    asset_categories: frozenset = frozenset()

    @property
    def entity_categories(self) -> frozenset:
        return frozenset(c for c, n in self.entity_counts if n > 0)

    @property
    def lighting(self) -> dict:
        return {"intensity": self.lighting_intensity,
                "color_temp": self.lighting_color_temp}

    def count(self, category: str) -> int:
        return dict(self.entity_counts).get(category, 0)

    def episodes_for(self, task_id: str) -> int:
        return dict(self.episode_counts).get(task_id, 0)

    def with_(self, **kw) -> "AbstractState":
        return replace(self, **kw)

    def add_entity(self, category: str) -> "AbstractState":
        return replace(self, entity_counts=_bump(self.entity_counts, category, 1))

    def remove_entity(self, category: str) -> "AbstractState":
        counts = _bump(self.entity_counts, category, -1)
        relations = self.relations
        if not any(c == category for c, n in counts):
            # last instance gone: category-level relations cannot survive
            relations = frozenset(r for r in relations
                                  if r[0] != category and r[2] != category)
        return replace(self, entity_counts=counts, relations=relations)

    def add_episodes(self, task_id: str, n: int) -> "AbstractState":
        return replace(self, episode_counts=_bump(self.episode_counts, task_id, n))

    def as_dict(self) -> dict:
        return {
            "entity_counts": [list(p) for p in self.entity_counts],
            "relations": sorted(list(r) for r in self.relations),
            "robot": self.robot,
            "lighting": self.lighting,
            "camera_ids": sorted(self.camera_ids),
            "episode_counts": [list(p) for p in self.episode_counts],
            "export_formats": sorted(self.export_formats),
            "trained_formats": sorted(self.trained_formats),
            "code_ids": sorted(self.code_ids),
            "code_valid": sorted(self.code_valid),
            "report_pairs": sorted(list(p) for p in self.report_pairs),
            "resource_units": self.resource_units,
            "asset_categories": sorted(self.asset_categories),
        }


def abstraction(ctx: OperationalContext,
                asset_categories: frozenset = frozenset()) -> AbstractState:
    """Summarize a context for planning.  Pure; equal canonical contexts give
    equal abstract states (given the same asset availability)."""
    scene = ctx.scene
    by_id = {e.entity_id: e.category for e in scene.entities}
    counts = Counter(by_id.values())
    relations = frozenset(
        (by_id[s], p, by_id[o]) for s, p, o in scene.relations
        if s in by_id and o in by_id)

    successes: Counter = Counter()
    for ep in ctx.data.episodes:
        if ep.success:
            successes[ep.task_id] += 1

    manifest_ids = {ref.manifest_id: fmt for fmt, ref in ctx.data.exports.items()}
    trained = frozenset(manifest_ids[c.parent_dataset]
                        for c in ctx.model.checkpoints
                        if c.parent_dataset in manifest_ids)

    return AbstractState(
        entity_counts=tuple(sorted(counts.items())),
        relations=relations,
        robot=scene.robot.model if scene.robot else "",
        lighting_intensity=round(scene.lighting.intensity, 6),
        lighting_color_temp=round(scene.lighting.color_temp, 6),
        camera_ids=frozenset(c.camera_id for c in scene.cameras),
        episode_counts=tuple(sorted(successes.items())),
        export_formats=frozenset(ctx.data.exports),
        trained_formats=trained,
        code_ids=frozenset(a.asset_id for a in ctx.model.code_assets),
        code_valid=frozenset(a.asset_id for a in ctx.model.code_assets
                             if a.status == "valid"),
        report_pairs=frozenset((r.model_id, r.benchmark_id)
                               for r in ctx.model.eval_reports
                               if r.status == "completed"),
        resource_units=sum(r.resource_units for r in ctx.model.eval_reports),
        asset_categories=frozenset(asset_categories),
    )
