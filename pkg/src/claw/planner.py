"""Workflow search: minimize skill cost plus weighted predicted deviation.

The planner searches sequences of grounded skill calls over abstract states.
Objective J = sum(human cost) + alpha * sum(system cost) + lambda * d(final
state, goal).  Any prefix is a legal stop, so the search keeps the best node
seen anywhere, not just at goal states.  Candidate generation is goal-directed
and finite; the enumeration oracle in the test suite shares it, along with
the per-step cost and predicted-deviation helpers, so objective values are
comparable as exact floats.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass, field

from .abstract import AbstractState, abstraction
from .assets import Environment, task_categories
from .deviation import DeviationWeights
from .errors import NoApplicableSkills, PlanningBudgetExceeded, UnknownTask
from .goals import GoalSpec, check_consistent
from .skills import (EFFECTS, SkillCall, SkillLibrary, SkillSpec,
                     abstract_preconditions_ok, make_call)
from .state import OperationalContext, canonical_json

DEFAULT_CODE_TEMPLATE = "def policy(observation):\n    return observation.best_action()\n"


@dataclass(frozen=True)
class CostModel:
    alpha: float = 1.0
    lam: float = 10.0
    weights: DeviationWeights = field(default_factory=DeviationWeights)
    max_depth: int = 16
    expansion_budget: int = 100000


@dataclass
class ObjectiveBreakdown:
    human: float = 0.0
    sys_time: float = 0.0
    sys_tokens: float = 0.0
    deviation: float = 0.0
    j: float = 0.0

    def as_dict(self) -> dict:
        return {"human": self.human, "sys_time": self.sys_time,
                "sys_tokens": self.sys_tokens, "predicted_deviation": self.deviation,
                "j": self.j}


@dataclass
class Workflow:
    workflow_id: str
    intent_id: str
    calls: list[SkillCall]
    objective: ObjectiveBreakdown
    context_hash: str = ""

    def as_dict(self) -> dict:
        return {"workflow_id": self.workflow_id, "intent_id": self.intent_id,
                "calls": [c.as_dict() for c in self.calls],
                "objective": self.objective.as_dict(),
                "context_hash": self.context_hash}


def step_cost(spec: SkillSpec, cost: CostModel) -> float:
    return spec.cost.human + cost.alpha * (spec.cost.sys_time + spec.cost.sys_tokens)


def predicted_deviation(state: AbstractState, goal: GoalSpec,
                        weights: DeviationWeights) -> float:
    """Optimistic deviation of an abstract state: preservation and stability
    are assumed clean, collection is assumed to succeed.  Includes a
    planning-only asset-availability deficit so ingestion is goal-directed."""
    total = 0.0
    preds = goal.scene_goals
    if preds:
        unmet = sum(1 for p in preds if not p.holds_abstract(state))
        total += unmet / len(preds)

    dg = goal.data_goals
    if dg is not None:
        if dg.min_episodes > 0 and dg.task_id is not None:
            shortfall = max(0, dg.min_episodes - state.episodes_for(dg.task_id))
            total += min(1.0, shortfall / dg.min_episodes)
        if dg.required_formats:
            missing = sum(1 for f in dg.required_formats
                          if f not in state.export_formats)
            total += weights.format * (missing / len(dg.required_formats))

    mg = goal.model_goals
    if mg is not None:
        if mg.required_valid_code:
            bad = sum(1 for a in mg.required_valid_code if a not in state.code_valid)
            total += bad / len(mg.required_valid_code)
        wants_training = mg.target_metric is not None or mg.train_format is not None
        if wants_training:
            if mg.train_format is not None:
                trained = mg.train_format in state.trained_formats
            else:
                trained = len(state.trained_formats) > 0
            total += weights.train * (0.0 if trained else 1.0)
        if mg.required_reports:
            missing = sum(1 for pair in mg.required_reports
                          if tuple(pair) not in state.report_pairs)
            total += weights.eval * (missing / len(mg.required_reports))
        if mg.resource_budget is not None and mg.resource_budget > 0:
            over = (state.resource_units - mg.resource_budget) / mg.resource_budget
            total += weights.resource * min(1.0, max(0.0, over))

    if goal.asset_goals:
        missing = sum(1 for ag in goal.asset_goals
                      if ag.category not in state.asset_categories)
        total += missing / len(goal.asset_goals)
    return total


def _emit(out: list, lib: SkillLibrary, signature: str, params: dict):
    for spec in lib.by_signature(signature):
        out.append((spec, params))


def _spawn_or_ingest(out, lib, state, category, relation=None, anchor=None):
    if category in state.asset_categories:
        params = {"category": category}
        if relation and anchor:
            params.update(relation=relation, anchor=anchor, anchor_category=anchor)
        _emit(out, lib, "add-entity", params)
    else:
        _emit(out, lib, "ingest-asset", {"category": category, "source": "catalog"})


def candidate_calls(goal: GoalSpec, state: AbstractState, lib: SkillLibrary,
                    env: Environment, extras: dict | None = None) -> list:
    """Finite, goal-directed (spec, params) candidates applicable in state.

    Deterministically ordered; shared by the planner and the enumeration
    oracle so both search exactly the same tree.
    """
    extras = extras or {}
    raw: list = []

    for pred in goal.scene_goals:
        if pred.holds_abstract(state):
            continue
        kind = pred.kind
        if kind == "entity-exists":
            if pred.ref.category:
                _spawn_or_ingest(raw, lib, state, pred.ref.category)
        elif kind == "entity-absent":
            params = {"entity": pred.ref.entity_id or pred.ref.category or pred.ref.mention}
            if pred.ref.category:
                params["category"] = pred.ref.category
            _emit(raw, lib, "remove-entity", params)
        elif kind == "relation-holds":
            s_cat, o_cat = pred.subject.category, pred.object.category
            if o_cat and o_cat not in state.entity_categories:
                _spawn_or_ingest(raw, lib, state, o_cat)
            if s_cat and s_cat not in state.entity_categories:
                if o_cat in state.entity_categories:
                    _spawn_or_ingest(raw, lib, state, s_cat,
                                     relation=pred.predicate, anchor=o_cat)
                else:
                    _spawn_or_ingest(raw, lib, state, s_cat)
            elif s_cat and o_cat and o_cat in state.entity_categories:
                _emit(raw, lib, "set-relation", {
                    "entity": pred.subject.entity_id or s_cat, "category": s_cat,
                    "relation": pred.predicate,
                    "anchor": pred.object.entity_id or o_cat, "anchor_category": o_cat})
        elif kind == "relation-absent":
            # no direct un-relate primitive: removing the subject is the
            # fallback; re-anchoring moves come from paired positive goals
            params = {"entity": pred.subject.entity_id or pred.subject.category or ""}
            if pred.subject.category:
                params["category"] = pred.subject.category
            if params["entity"]:
                _emit(raw, lib, "remove-entity", params)
        elif kind == "robot-is":
            _emit(raw, lib, "set-robot", {"model": pred.model})
        elif kind == "field-equals":
            field_name = pred.path.split(".", 1)[1]
            _emit(raw, lib, "set-lighting", {field_name: pred.value})
        elif kind == "lighting-in-range":
            midpoint = round((pred.low + pred.high) / 2.0, 6)
            _emit(raw, lib, "set-lighting", {pred.field_name: midpoint})
        elif kind == "camera-exists":
            _emit(raw, lib, "add-camera", {"camera_id": pred.camera_id})
        elif kind == "camera-absent":
            _emit(raw, lib, "remove-camera", {"camera_id": pred.camera_id})
        elif kind == "camera-count":
            index = 1
            while f"cam{index}" in state.camera_ids:
                index += 1
            _emit(raw, lib, "add-camera", {"camera_id": f"cam{index}"})

    dg = goal.data_goals
    if dg is not None:
        if dg.task_id is not None and dg.min_episodes > state.episodes_for(dg.task_id):
            try:
                for cat in task_categories(dg.task_id):
                    if cat not in state.entity_categories:
                        _spawn_or_ingest(raw, lib, state, cat)
            except UnknownTask:
                pass
            params = {"task": dg.task_id,
                      "count": dg.min_episodes - state.episodes_for(dg.task_id)}
            if "seed" in extras:
                params["seed"] = extras["seed"]
            _emit(raw, lib, "collect-episodes", params)
        for fmt in sorted(set(dg.required_formats) - state.export_formats):
            _emit(raw, lib, "export-format", {"format": fmt})

    mg = goal.model_goals
    if mg is not None:
        for asset_id in sorted(set(mg.required_valid_code) - state.code_valid):
            _emit(raw, lib, "edit-code", {
                "asset_id": asset_id,
                "content": extras.get("code_content", DEFAULT_CODE_TEMPLATE)})
        if mg.target_metric is not None or mg.train_format is not None:
            if mg.train_format is not None:
                needed = [mg.train_format]
            else:
                pool = set(state.export_formats)
                if dg is not None:
                    pool |= set(dg.required_formats)
                needed = sorted(pool)
            for fmt in needed:
                if fmt in state.trained_formats:
                    continue
                params = {"dataset_format": fmt, "epochs": mg.train_epochs}
                if mg.target_metric is not None:
                    params["target_loss"] = mg.target_metric
                if "seed" in extras:
                    params["seed"] = extras["seed"]
                _emit(raw, lib, "launch-train", params)
        for model_id, bench_id in sorted(set(map(tuple, mg.required_reports))
                                         - state.report_pairs):
            params = {"model": model_id, "benchmark": bench_id,
                      "episodes": mg.eval_episodes}
            if "seed" in extras:
                params["seed"] = extras["seed"]
            _emit(raw, lib, "launch-eval", params)

    for ag in goal.asset_goals:
        if ag.category in state.asset_categories:
            continue
        params = {"category": ag.category, "source": ag.source_kind}
        if ag.source_ref:
            params["ref"] = ag.source_ref
        _emit(raw, lib, "ingest-asset", params)

    seen = set()
    out = []
    for spec, params in raw:
        key = (spec.skill_id, canonical_json(params))
        if key in seen:
            continue
        seen.add(key)
        if abstract_preconditions_ok(spec, params, state, env):
            out.append((spec, params))
    out.sort(key=lambda c: (c[0].skill_id, canonical_json(c[1])))
    return out


@dataclass
class _Best:
    j: float
    length: int
    lex: tuple
    seq: tuple
    sums: tuple
    deviation: float

    def beats(self, j, length, lex) -> bool:
        return (self.j, self.length, self.lex) <= (j, length, lex)


def _search(goal: GoalSpec, state0: AbstractState, lib: SkillLibrary,
            cost: CostModel, env: Environment, extras: dict | None,
            exclude_first: tuple | None = None) -> _Best:
    """Exhaustive best-first over the candidate tree with dominance pruning.

    Every reachable node is a legal stopping point; dominance keeps the
    cheapest (then lexicographically first) path per (state, depth).
    """
    weights = cost.weights
    d0 = predicted_deviation(state0, goal, weights)
    best = _Best(cost.lam * d0, 0, (), (), (0.0, 0.0, 0.0), d0)

    counter = itertools.count()
    heap: list = []
    seen: dict = {(state0, 0): (0.0, ())}
    # heap entries: (f, length, lex, tiebreak, state, g, sums, seq)
    heapq.heappush(heap, (cost.lam * d0, 0, (), next(counter), state0,
                          0.0, (0.0, 0.0, 0.0), ()))
    expansions = 0
    root_candidates = 0

    while heap:
        f, length, lex, _, state, g, sums, seq = heapq.heappop(heap)
        if seen.get((state, length), (None, None)) != (g, lex):
            continue  # superseded by a dominating path
        if length >= cost.max_depth:
            continue
        expansions += 1
        if expansions > cost.expansion_budget:
            raise PlanningBudgetExceeded(
                f"exceeded {cost.expansion_budget} node expansions")
        for spec, params in candidate_calls(goal, state, lib, env, extras):
            if (length == 0 and exclude_first is not None
                    and (spec.skill_id, canonical_json(params)) == exclude_first):
                continue
            if length == 0:
                root_candidates += 1
            nxt = EFFECTS[spec.effect](state, params)
            g2 = g + step_cost(spec, cost)
            sums2 = (sums[0] + spec.cost.human, sums[1] + spec.cost.sys_time,
                     sums[2] + spec.cost.sys_tokens)
            lex2 = lex + ((spec.skill_id, canonical_json(params)),)
            key = (nxt, length + 1)
            old = seen.get(key)
            if old is not None and (old[0] < g2 or (old[0] == g2 and old[1] <= lex2)):
                continue
            seen[key] = (g2, lex2)
            d2 = predicted_deviation(nxt, goal, weights)
            j2 = g2 + cost.lam * d2
            if not best.beats(j2, length + 1, lex2):
                best = _Best(j2, length + 1, lex2, seq + ((spec, params),), sums2, d2)
            heapq.heappush(heap, (j2, length + 1, lex2, next(counter), nxt,
                                  g2, sums2, seq + ((spec, params),)))

    if d0 > 0 and root_candidates == 0 and not best.seq:
        raise NoApplicableSkills("no skill is applicable toward this goal")
    return best


def _workflow_id(intent_id: str, calls: list[SkillCall]) -> str:
    body = canonical_json({"intent": intent_id,
                           "calls": [c.as_dict() for c in calls]})
    return hashlib.sha256(body.encode()).hexdigest()[:16]


def _build(best: _Best, intent_id: str, cost: CostModel) -> Workflow:
    calls = [make_call(spec, params) for spec, params in best.seq]
    objective = ObjectiveBreakdown(
        human=best.sums[0], sys_time=best.sums[1], sys_tokens=best.sums[2],
        deviation=best.deviation, j=best.j)
    return Workflow(_workflow_id(intent_id, calls), intent_id, calls, objective)


def plan(intent, goal: GoalSpec, ctx: OperationalContext, lib: SkillLibrary,
         cost: CostModel, env: Environment | None = None,
         extras: dict | None = None) -> Workflow:
    """Best workflow for the goal from ctx; exact on small instances.

    intent may be an IntentRepresentation or a bare string id (provenance
    only).  Raises NoApplicableSkills / PlanningBudgetExceeded.
    """
    from .assets import default_environment
    env = env or default_environment()
    check_consistent(goal)
    intent_id = getattr(intent, "intent_id", None) or str(intent)
    if extras is None:
        extras = getattr(intent, "parameters", None) or {}
        extras = {k: extras[k] for k in ("seed", "code_content") if k in extras}
    state0 = abstraction(ctx, env.asset_categories())
    best = _search(goal, state0, lib, cost, env, extras)
    return _build(best, intent_id, cost)


def replan(wf: Workflow, failed_index: int, verdict, ctx_now: OperationalContext,
           lib: SkillLibrary, cost: CostModel, goal: GoalSpec,
           env: Environment | None = None, extras: dict | None = None) -> Workflow:
    """Fresh plan from the current context with the failed call barred from
    the first position."""
    from .assets import default_environment
    env = env or default_environment()
    failed = wf.calls[failed_index]
    exclude = (failed.skill_id, canonical_json(dict(sorted(failed.params.items()))))
    state0 = abstraction(ctx_now, env.asset_categories())
    best = _search(goal, state0, lib, cost, env, extras, exclude_first=exclude)
    return _build(best, wf.intent_id, cost)


def estimate_cost(wf: Workflow, cost: CostModel, lib: SkillLibrary,
                  goal: GoalSpec | None = None,
                  state: AbstractState | None = None,
                  env: Environment | None = None) -> ObjectiveBreakdown:
    """Recompute the objective breakdown of a workflow from its annotations.

    With a goal and start state, the predicted deviation is the fold of the
    abstract effects; otherwise deviation is reported as zero.
    """
    human = sys_time = sys_tokens = 0.0
    current = state
    for call in wf.calls:
        spec = lib.get(call.skill_id)
        human += spec.cost.human
        sys_time += spec.cost.sys_time
        sys_tokens += spec.cost.sys_tokens
        if current is not None:
            current = EFFECTS[spec.effect](current, call.params)
    deviation = 0.0
    if goal is not None and current is not None:
        deviation = predicted_deviation(current, goal, cost.weights)
    j = human + cost.alpha * (sys_time + sys_tokens) + cost.lam * deviation
    return ObjectiveBreakdown(human, sys_time, sys_tokens, deviation, j)


def workflow_deltas(wf: Workflow, state0: AbstractState, lib: SkillLibrary) -> list[dict]:
    """Per-step abstract state changes for dry-run display."""
    deltas = []
    current = state0
    for index, call in enumerate(wf.calls):
        spec = lib.get(call.skill_id)
        nxt = EFFECTS[spec.effect](current, call.params)
        before, after = current.as_dict(), nxt.as_dict()
        changed = {k: {"before": before[k], "after": after[k]}
                   for k in before if before[k] != after[k]}
        deltas.append({"step": index, "skill_id": call.skill_id,
                       "params": call.params, "changes": changed})
        current = nxt
    return deltas
