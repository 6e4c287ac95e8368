"""Deviation metrics: how far a context sits from a goal.

Nine normalized terms, each in [0, 1], grouped into three families (scene,
data, model).  The weighted family sums add up to the scalar distance the
planner minimizes and the executor verifies against.  Every term is 0 when
the goal does not constrain it, so unconstrained aspects never contribute.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .diffing import diff_scenes, scene_paths
from .formats import ExportManifest, check_format
from .goals import GoalSpec
from .state import OperationalContext, SceneState


@dataclass(frozen=True)
class DeviationWeights:
    """Family-internal weights; all default to 1 (equal emphasis)."""
    preserve: float = 1.0     # rho
    stability: float = 1.0    # eta
    format: float = 1.0       # kappa
    train: float = 1.0        # mu
    eval: float = 1.0         # nu
    resource: float = 1.0     # xi


@dataclass
class DeviationReport:
    terms: dict[str, float] = field(default_factory=dict)
    families: dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    def as_dict(self) -> dict:
        return {"terms": dict(self.terms), "families": dict(self.families),
                "total": self.total}


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def goal_term(scene: SceneState, goal: GoalSpec) -> float:
    """Fraction of scene predicates not yet satisfied."""
    preds = goal.scene_goals
    if not preds:
        return 0.0
    unmet = sum(1 for p in preds if not p.holds(scene))
    return unmet / len(preds)


def preserve_term(scene: SceneState, goal: GoalSpec,
                  baseline: SceneState | None) -> float:
    """Fraction of protected baseline paths that changed or vanished."""
    if baseline is None:
        return 0.0
    preserved = goal.preserve.preserved_paths(baseline)
    if not preserved:
        return 0.0
    before = scene_paths(baseline)
    after = scene_paths(scene)
    touched = sum(1 for p in preserved
                  if before.get(p) != after.get(p))
    return touched / len(preserved)


def task_term(ctx: OperationalContext, goal: GoalSpec) -> float:
    dg = goal.data_goals
    if dg is None or dg.min_episodes <= 0 or dg.task_id is None:
        return 0.0
    n = dg.min_episodes
    of_task = [e for e in ctx.data.episodes if e.task_id == dg.task_id]
    failures = sum(1 for e in of_task if not e.success)
    shortfall = max(0, n - len(of_task))
    return min(1.0, (failures + shortfall) / n)


def stability_term(ctx: OperationalContext, goal: GoalSpec) -> float:
    """Coefficient of variation of episode length for the target task."""
    dg = goal.data_goals
    if dg is None or dg.task_id is None:
        return 0.0
    lengths = [e.length for e in ctx.data.episodes if e.task_id == dg.task_id]
    if len(lengths) <= 1:
        return 0.0
    mean = statistics.mean(lengths)
    if mean == 0:
        return 0.0
    return min(1.0, statistics.pstdev(lengths) / mean)


def format_term(ctx: OperationalContext, goal: GoalSpec,
                export_root: Path | None = None) -> float:
    """Mean schema-violation fraction over required export formats.

    A required format with no export counts as fully violated.  Without an
    export_root only state-level presence is checked (used by the planner,
    which cannot touch disk).
    """
    dg = goal.data_goals
    if dg is None or not dg.required_formats:
        return 0.0
    scores = []
    for fmt in dg.required_formats:
        ref = ctx.data.exports.get(fmt)
        if ref is None:
            scores.append(1.0)
            continue
        if export_root is None:
            scores.append(0.0)
            continue
        try:
            manifest = ExportManifest.load(Path(export_root) / ref.path)
        except (OSError, ValueError, KeyError):
            scores.append(1.0)
            continue
        scores.append(check_format(manifest).score)
    return sum(scores) / len(scores)


def code_term(ctx: OperationalContext, goal: GoalSpec) -> float:
    mg = goal.model_goals
    if mg is None or not mg.required_valid_code:
        return 0.0
    bad = 0
    for asset_id in mg.required_valid_code:
        asset = ctx.model.code_asset(asset_id)
        if asset is None or asset.status != "valid":
            bad += 1
    return bad / len(mg.required_valid_code)


def train_term(ctx: OperationalContext, goal: GoalSpec) -> float:
    """Relative excess of the best checkpoint loss over the target loss.

    Active when the goal names a target loss or a training format; a named
    format restricts which checkpoints count (via the format's current
    manifest).  No qualifying checkpoint scores 1.
    """
    mg = goal.model_goals
    if mg is None or (mg.target_metric is None and mg.train_format is None):
        return 0.0
    checkpoints = ctx.model.checkpoints
    if mg.train_format is not None:
        ref = ctx.data.exports.get(mg.train_format)
        wanted = ref.manifest_id if ref else None
        checkpoints = [c for c in checkpoints if c.parent_dataset == wanted]
    losses = [c.metrics["loss"] for c in checkpoints if "loss" in c.metrics]
    if not losses:
        return 1.0
    if mg.target_metric is None:
        return 0.0
    best = min(losses)
    target = mg.target_metric
    if target <= 0:
        return 0.0 if best <= target else 1.0
    return _clip01((best - target) / target)


def eval_term(ctx: OperationalContext, goal: GoalSpec) -> float:
    mg = goal.model_goals
    if mg is None or not mg.required_reports:
        return 0.0
    missing = 0
    for model_id, bench_id in mg.required_reports:
        report = ctx.model.report_for(model_id, bench_id)
        if report is None or report.status != "completed":
            missing += 1
    return missing / len(mg.required_reports)


def resource_term(ctx: OperationalContext, goal: GoalSpec) -> float:
    """Relative overshoot of evaluation spend past the budget."""
    mg = goal.model_goals
    if mg is None or mg.resource_budget is None:
        return 0.0
    used = sum(r.resource_units for r in ctx.model.eval_reports)
    budget = mg.resource_budget
    if budget <= 0:
        return 1.0 if used > 0 else 0.0
    return _clip01((used - budget) / budget)


def measure_deviation(ctx: OperationalContext, goal: GoalSpec | None, *,
                      baseline_scene: SceneState | None = None,
                      weights: DeviationWeights | None = None,
                      export_root: Path | None = None) -> DeviationReport:
    """Full deviation breakdown of ``ctx`` against ``goal``.

    baseline_scene anchors preservation checks (normally the pre-workflow
    snapshot); export_root resolves manifest paths for on-disk format checks.
    """
    w = weights or DeviationWeights()
    report = DeviationReport()
    if goal is None:
        report.terms = {k: 0.0 for k in ("goal", "preserve", "task", "stability",
                                         "format", "code", "train", "eval", "resource")}
        report.families = {"scene": 0.0, "data": 0.0, "model": 0.0}
        return report

    t = report.terms
    t["goal"] = goal_term(ctx.scene, goal)
    t["preserve"] = preserve_term(ctx.scene, goal, baseline_scene)
    t["task"] = task_term(ctx, goal)
    t["stability"] = stability_term(ctx, goal)
    t["format"] = format_term(ctx, goal, export_root)
    t["code"] = code_term(ctx, goal)
    t["train"] = train_term(ctx, goal)
    t["eval"] = eval_term(ctx, goal)
    t["resource"] = resource_term(ctx, goal)

    fam = report.families
    fam["scene"] = t["goal"] + w.preserve * t["preserve"]
    fam["data"] = t["task"] + w.stability * t["stability"] + w.format * t["format"]
    fam["model"] = (t["code"] + w.train * t["train"] + w.eval * t["eval"]
                    + w.resource * t["resource"])
    report.total = fam["scene"] + fam["data"] + fam["model"]
    return report


def scene_change_summary(baseline: SceneState, current: SceneState) -> dict:
    """Diff payload used by the trace and service layers."""
    return diff_scenes(baseline, current)
