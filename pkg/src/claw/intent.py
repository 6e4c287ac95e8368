"""Turn understanding: DSL parsing, reference grounding, goal derivation.

The default front end is a deterministic command DSL (grammar in
``docs/dsl.md``); anything it cannot parse goes to a pluggable inference
backend, whose default rejects.  Grounding maps mentions (categories, ids,
formats, benchmarks) to executable references against the current context and
asset library; ambiguity is always an error, never a guess.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .assets import EXTERNAL_CATALOG, Environment, default_environment, task_categories
from .errors import (AmbiguousReference, InconsistentGoal, UnknownReference,
                     UnknownTask, UnparsableIntent)
from .formats import FORMAT_IDS
from .goals import (AssetGoal, CameraAbsent, CameraExists, DataGoals, EntityAbsent,
                    EntityExists, FieldEquals, GoalSpec, ModelGoals, PreserveScope,
                    Ref, RelationAbsent, RelationHolds, RobotIs, check_consistent)
from .state import OperationalContext, canonical_json

GRAMMAR_HINT = ("expected: CREATE [scene] WITH <items> | EDIT [scene] <ops> "
                "[PRESERVE all EXCEPT <refs>] | EDIT code <id> CONTENT \"...\" | "
                "COLLECT <n> episodes OF task <id> [EXPORT <fmts>] | "
                "CONVERT dataset TO <fmts> | TRAIN model ON <fmt> [EPOCHS n] "
                "[TARGET x] | EVALUATE <models> ON benchmark <id> [EPISODES n] "
                "[BUDGET n] | INGEST <category> [FROM catalog|file <ref>]")

RELATION_WORDS = {"ON": "on", "IN": "in", "NEAR": "near",
                  "LEFT_OF": "left_of", "RIGHT_OF": "right_of"}

_CLAUSE_STARTERS = {"WITH", "SET", "ADD", "REMOVE", "PRESERVE", "OF", "EXPORT",
                    "EPISODES", "EPOCHS", "TARGET", "SEED", "BUDGET", "FROM",
                    "UNIT", "CONTENT", "TO"}


@dataclass
class UserTurn:
    text: str = ""
    observation: list | None = None     # [{category, position, relations}]
    attachments: list = field(default_factory=list)

    def __post_init__(self):
        if not self.text.strip() and not self.observation:
            raise UnparsableIntent("empty turn: no text and no observation")


@dataclass
class DialogueContext:
    turns: list = field(default_factory=list)   # (UserTurn, summary, snapshot id)

    def append(self, turn, summary: str, snapshot_id: str):
        self.turns.append((turn, summary, snapshot_id))


@dataclass
class IntentRepresentation:
    intent_id: str
    intent_class: str
    text: str
    parameters: dict
    grounded_refs: dict = field(default_factory=dict)
    goal: GoalSpec | None = None
    targets: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"intent_id": self.intent_id, "intent_class": self.intent_class,
                "parameters": self.parameters, "grounded_refs": self.grounded_refs,
                "targets": sorted(self.targets),
                "goal": self.goal.as_dict() if self.goal else None}


class InferenceBackend:
    """Fallback for turns the DSL cannot parse.  The default rejects; a real
    model can be attached by implementing infer()."""

    def infer(self, turn: UserTurn, dialog: DialogueContext,
              ctx: OperationalContext) -> IntentRepresentation:
        raise UnparsableIntent(
            f"cannot parse {turn.text!r} and no inference backend is attached",
            hint=GRAMMAR_HINT)


# --- tokenization ---

_TOKEN_RE = re.compile(r'"[^"]*"|[A-Za-z0-9][A-Za-z0-9_.\-]*|[=,:]')
_INT_RE = re.compile(r"^[0-9]+$")
_FLOAT_RE = re.compile(r"^[0-9]+\.[0-9]*$|^\.[0-9]+$|^[0-9]*\.[0-9]+$")


class _Cursor:
    def __init__(self, text: str):
        self.tokens = _TOKEN_RE.findall(text)
        self.pos = 0

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def peek_is(self, *keywords: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.upper() in keywords

    def next(self) -> str:
        if self.at_end():
            raise UnparsableIntent("unexpected end of command", hint=GRAMMAR_HINT)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def accept(self, *keywords: str) -> bool:
        if self.peek_is(*keywords):
            self.pos += 1
            return True
        return False

    def expect(self, keyword: str) -> str:
        tok = self.peek()
        if tok is None or tok.upper() != keyword:
            raise UnparsableIntent(
                f"expected {keyword} near token {tok!r}", hint=GRAMMAR_HINT)
        return self.next()

    def ident(self, what: str = "identifier") -> str:
        tok = self.next()
        if tok in ("=", ",", ":") or tok.startswith('"'):
            raise UnparsableIntent(f"expected {what}, got {tok!r}", hint=GRAMMAR_HINT)
        return tok.lower()

    def integer(self, what: str = "count") -> int:
        tok = self.next()
        if not _INT_RE.match(tok):
            raise UnparsableIntent(f"expected {what} number, got {tok!r}",
                                   hint=GRAMMAR_HINT)
        return int(tok)

    def number(self, what: str = "value") -> float:
        tok = self.next()
        if _INT_RE.match(tok):
            return float(int(tok))
        if _FLOAT_RE.match(tok):
            return float(tok)
        raise UnparsableIntent(f"expected {what}, got {tok!r}", hint=GRAMMAR_HINT)

    def quoted(self, what: str = "string") -> str:
        tok = self.next()
        if not (tok.startswith('"') and tok.endswith('"')):
            raise UnparsableIntent(f"expected quoted {what}, got {tok!r}",
                                   hint=GRAMMAR_HINT)
        return tok[1:-1]


def _value_token(cursor: _Cursor):
    tok = cursor.next()
    if _INT_RE.match(tok):
        return int(tok)
    if _FLOAT_RE.match(tok):
        return float(tok)
    if tok.startswith('"') and tok.endswith('"'):
        return tok[1:-1]
    return tok.lower()


# --- per-verb parsing into structured parameters ---

def _parse_with_items(cursor: _Cursor) -> dict:
    items, cameras, sets = [], [], {}
    robot = None
    while True:
        if cursor.accept("ROBOT"):
            cursor.expect("=")
            robot = cursor.ident("robot model")
        elif cursor.accept("CAMERA"):
            cameras.append(cursor.ident("camera id"))
        else:
            category = cursor.ident("category")
            item = {"category": category}
            for word, predicate in RELATION_WORDS.items():
                if cursor.peek_is(word):
                    cursor.next()
                    item["relation"] = predicate
                    item["anchor"] = cursor.ident("anchor category")
                    break
            items.append(item)
        if not cursor.accept(","):
            break
    out: dict = {"items": items}
    if robot:
        out["robot"] = robot
    if cameras:
        out["cameras"] = cameras
    if sets:
        out["sets"] = sets
    return out


def _parse_set_clause(cursor: _Cursor, params: dict):
    path = cursor.ident("field path")
    cursor.expect("=")
    value = _value_token(cursor)
    if path == "robot":
        params["robot"] = str(value)
    else:
        params.setdefault("sets", {})[path] = value


def _parse_preserve(cursor: _Cursor) -> dict:
    if cursor.accept("ALL"):
        patterns = []
        if cursor.accept("EXCEPT"):
            while True:
                patterns.append(cursor.ident("preserve exception"))
                if not cursor.accept(","):
                    break
        return {"mode": "all_except", "patterns": patterns}
    patterns = []
    while not cursor.at_end() and not cursor.peek_is(*_CLAUSE_STARTERS):
        patterns.append(cursor.ident("preserved ref"))
        if not cursor.accept(","):
            break
    if not patterns:
        raise UnparsableIntent("PRESERVE needs 'all' or a reference list",
                               hint=GRAMMAR_HINT)
    return {"mode": "explicit", "patterns": patterns}


def _parse_create(cursor: _Cursor) -> dict:
    cursor.accept("SCENE")
    cursor.accept(":")
    params: dict = {"items": []}
    while not cursor.at_end():
        if cursor.accept("WITH"):
            params_update = _parse_with_items(cursor)
            params["items"].extend(params_update.pop("items"))
            params.update(params_update)
        elif cursor.accept("SET"):
            _parse_set_clause(cursor, params)
            while cursor.accept(","):
                if cursor.peek_is(*_CLAUSE_STARTERS):
                    break
                _parse_set_clause(cursor, params)
        elif cursor.accept("SEED"):
            params["seed"] = cursor.integer("seed")
        else:
            raise UnparsableIntent(f"unexpected token {cursor.peek()!r} in CREATE",
                                   hint=GRAMMAR_HINT)
    return params


def _parse_edit_scene(cursor: _Cursor) -> dict:
    params: dict = {"adds": [], "removes": [], "relations": []}
    while not cursor.at_end():
        if cursor.accept("SET"):
            _parse_set_clause(cursor, params)
        elif cursor.accept("ADD"):
            if cursor.accept("CAMERA"):
                params["adds"].append({"camera_id": cursor.ident("camera id")})
            else:
                item = {"category": cursor.ident("category")}
                for word, predicate in RELATION_WORDS.items():
                    if cursor.peek_is(word):
                        cursor.next()
                        item["relation"] = predicate
                        item["anchor"] = cursor.ident("anchor")
                        break
                params["adds"].append(item)
        elif cursor.accept("REMOVE"):
            if cursor.accept("CAMERA"):
                params["removes"].append({"camera_id": cursor.ident("camera id")})
            else:
                params["removes"].append({"ref": cursor.ident("entity ref")})
        elif cursor.accept("PRESERVE"):
            params["preserve"] = _parse_preserve(cursor)
        elif cursor.accept(","):
            continue
        else:
            subject = cursor.ident("entity ref")
            negate = cursor.accept("NOT")
            predicate = None
            for word, rel in RELATION_WORDS.items():
                if cursor.accept(word):
                    predicate = rel
                    break
            if predicate is None:
                raise UnparsableIntent(
                    f"expected a relation after {subject!r}", hint=GRAMMAR_HINT)
            params["relations"].append({"subject": subject, "predicate": predicate,
                                        "object": cursor.ident("anchor"),
                                        "negate": negate})
    return params


def _parse_edit(cursor: _Cursor) -> tuple[str, dict]:
    if cursor.accept("CODE"):
        asset_id = cursor.ident("code asset id")
        cursor.expect("CONTENT")
        content = cursor.quoted("code content")
        return "edit_model_code", {"asset_id": asset_id, "content": content}
    cursor.accept("SCENE")
    cursor.accept(":")
    return "edit_scene", _parse_edit_scene(cursor)


def _parse_collect(cursor: _Cursor) -> dict:
    count = cursor.integer("episode count")
    cursor.accept("EPISODES")
    cursor.expect("OF")
    cursor.accept("TASK")
    params: dict = {"task": cursor.ident("task id"), "count": count, "formats": []}
    while not cursor.at_end():
        if cursor.accept("EXPORT"):
            while True:
                params["formats"].append(cursor.ident("format id"))
                if not cursor.accept(","):
                    break
        elif cursor.accept("SEED"):
            params["seed"] = cursor.integer("seed")
        else:
            raise UnparsableIntent(f"unexpected token {cursor.peek()!r} in COLLECT",
                                   hint=GRAMMAR_HINT)
    return params


def _parse_convert(cursor: _Cursor) -> dict:
    cursor.accept("DATASET") or cursor.accept("EPISODES")
    cursor.expect("TO")
    formats = []
    while True:
        formats.append(cursor.ident("format id"))
        if not cursor.accept(","):
            break
    return {"formats": formats}


def _parse_train(cursor: _Cursor) -> dict:
    cursor.accept("MODEL")
    cursor.expect("ON")
    params: dict = {"format": cursor.ident("dataset format"), "epochs": 3}
    while not cursor.at_end():
        if cursor.accept("EPOCHS"):
            params["epochs"] = cursor.integer("epochs")
        elif cursor.accept("TARGET"):
            params["target"] = cursor.number("target metric")
        elif cursor.accept("SEED"):
            params["seed"] = cursor.integer("seed")
        else:
            raise UnparsableIntent(f"unexpected token {cursor.peek()!r} in TRAIN",
                                   hint=GRAMMAR_HINT)
    return params


def _parse_evaluate(cursor: _Cursor) -> dict:
    models = []
    while True:
        models.append(cursor.ident("model id"))
        if not cursor.accept(","):
            break
    cursor.expect("ON")
    cursor.accept("BENCHMARK")
    params: dict = {"models": models, "benchmark": cursor.ident("benchmark id"),
                    "episodes": 20}
    while not cursor.at_end():
        if cursor.accept("EPISODES"):
            params["episodes"] = cursor.integer("episodes")
        elif cursor.accept("BUDGET"):
            params["budget"] = cursor.number("budget")
        elif cursor.accept("SEED"):
            params["seed"] = cursor.integer("seed")
        else:
            raise UnparsableIntent(f"unexpected token {cursor.peek()!r} in EVALUATE",
                                   hint=GRAMMAR_HINT)
    return params


def _parse_ingest(cursor: _Cursor) -> dict:
    cursor.accept("ASSET")
    params: dict = {"category": cursor.ident("category"), "source": "catalog"}
    while not cursor.at_end():
        if cursor.accept("FROM"):
            source = cursor.ident("source kind")
            if source not in ("catalog", "file"):
                raise UnparsableIntent(f"source must be catalog or file, got {source!r}",
                                       hint=GRAMMAR_HINT)
            params["source"] = source
            if not cursor.at_end() and not cursor.peek_is(*_CLAUSE_STARTERS):
                params["ref"] = cursor.next().strip('"')
        elif cursor.accept("UNIT"):
            params["unit"] = cursor.ident("unit")
        else:
            raise UnparsableIntent(f"unexpected token {cursor.peek()!r} in INGEST",
                                   hint=GRAMMAR_HINT)
    return params


_TARGETS = {"create_scene": ["S"], "edit_scene": ["S"],
            "collect_trajectories": ["D"], "transform_data": ["D"],
            "edit_model_code": ["M"], "train_model": ["M"],
            "evaluate_model": ["M"], "ingest_asset": ["S"]}


def parse_text(text: str) -> tuple[str, dict]:
    """Text to (intent class, structured parameters); raises UnparsableIntent."""
    cursor = _Cursor(text)
    if cursor.at_end():
        raise UnparsableIntent("empty command", hint=GRAMMAR_HINT)
    verb = cursor.next().upper()
    if verb == "CREATE":
        return "create_scene", _parse_create(cursor)
    if verb == "EDIT":
        return _parse_edit(cursor)
    if verb == "COLLECT":
        return "collect_trajectories", _parse_collect(cursor)
    if verb == "CONVERT":
        return "transform_data", _parse_convert(cursor)
    if verb == "TRAIN":
        return "train_model", _parse_train(cursor)
    if verb == "EVALUATE":
        return "evaluate_model", _parse_evaluate(cursor)
    if verb == "INGEST":
        return "ingest_asset", _parse_ingest(cursor)
    raise UnparsableIntent(f"unknown verb {verb!r}", hint=GRAMMAR_HINT)


def _observation_params(observation: list) -> dict:
    items = []
    for entry in observation:
        item = {"category": str(entry.get("category", "")).lower()}
        rels = entry.get("relations") or []
        if rels:
            first = rels[0]
            item["relation"] = first.get("predicate")
            item["anchor"] = str(first.get("object", "")).lower()
        items.append(item)
    return {"items": items}


def _intent_id(intent_class: str, parameters: dict) -> str:
    body = canonical_json({"class": intent_class, "params": parameters})
    return hashlib.sha256(body.encode()).hexdigest()[:12]


# --- grounding ---

def _scene_matches(ctx: OperationalContext, mention: str) -> list:
    if ctx.scene.entity(mention) is not None:
        return [ctx.scene.entity(mention)]
    return ctx.scene.entities_of(mention)


def _ground_category(mention: str, ctx: OperationalContext, env: Environment,
                     refs: dict, creating: bool) -> Ref:
    """Category-or-id mention to a Ref; creating intents may fall back to the
    asset library or external catalog."""
    matches = _scene_matches(ctx, mention)
    if len(matches) == 1:
        entity = matches[0]
        refs[mention] = {"kind": "entity", "id": entity.entity_id}
        return Ref(mention, entity_id=entity.entity_id, category=entity.category)
    if len(matches) > 1:
        raise AmbiguousReference(
            f"{mention!r} matches multiple entities",
            matches=sorted(e.entity_id for e in matches))
    if creating:
        assets = env.assets.for_category(mention)
        if assets:
            refs[mention] = {"kind": "asset", "id": assets[0].asset_id}
            return Ref(mention, category=mention, asset_id=assets[0].asset_id)
        if any(e["category"] == mention for e in EXTERNAL_CATALOG.values()):
            refs[mention] = {"kind": "category", "id": mention}
            return Ref(mention, category=mention)
        raise UnknownReference(
            f"no scene entity, library asset, or catalog entry for {mention!r}")
    raise UnknownReference(f"{mention!r} matches nothing in the scene")


def _entity_scope_patterns(entity_id: str) -> list[str]:
    return [f"entities.{entity_id}", f"relations.{entity_id}:*",
            f"relations.*:{entity_id}"]


class _Grounder:
    """Resolves one parsed intent against (ctx, env); collects grounded refs,
    goal predicates, and the mutated-path set for preservation."""

    def __init__(self, intent_class: str, params: dict, ctx: OperationalContext,
                 env: Environment):
        self.intent_class = intent_class
        self.params = params
        self.ctx = ctx
        self.env = env
        self.refs: dict = {}
        self.predicates: list = []
        self.mutated: list[str] = []
        self.data_goals: DataGoals | None = None
        self.model_goals: ModelGoals | None = None
        self.asset_goals: list = []

    def run(self):
        handler = getattr(self, f"_ground_{self.intent_class}")
        handler()
        return self

    def _item_predicates(self, items: list, creating: bool):
        for item in items:
            ref = _ground_category(item["category"], self.ctx, self.env,
                                   self.refs, creating)
            self.predicates.append(EntityExists(ref))
            if item.get("relation"):
                anchor = _ground_category(item["anchor"], self.ctx, self.env,
                                          self.refs, creating)
                self.predicates.append(RelationHolds(ref, item["relation"], anchor))
                if ref.entity_id:
                    self.mutated.extend(_entity_scope_patterns(ref.entity_id))

    def _sets_predicates(self, sets: dict):
        for path, value in sets.items():
            if path not in ("lighting.intensity", "lighting.color_temp"):
                raise UnknownReference(f"cannot SET unknown field {path!r}")
            if not isinstance(value, (int, float)):
                raise UnknownReference(f"SET {path} needs a number, got {value!r}")
            self.predicates.append(FieldEquals(path, float(value)))
            self.mutated.append(path)

    def _robot_predicate(self, model: str):
        if model not in self.env.robots:
            raise UnknownReference(f"unknown robot model {model!r}")
        self.refs[model] = {"kind": "robot", "id": model}
        self.predicates.append(RobotIs(model))
        self.mutated.append("robot")

    def _check_formats(self, formats: list):
        for fmt in formats:
            if fmt not in FORMAT_IDS:
                raise UnknownReference(
                    f"unknown export format {fmt!r}; known: {', '.join(FORMAT_IDS)}")
            self.refs[fmt] = {"kind": "format", "id": fmt}

    def _check_task(self, task: str, need_scene: bool = True):
        try:
            needed = task_categories(task)
        except UnknownTask:
            raise UnknownReference(f"unknown task {task!r}")
        self.refs[task] = {"kind": "task", "id": task}
        if need_scene:
            present = {e.category for e in self.ctx.scene.entities}
            missing = [c for c in needed if c not in present]
            if missing:
                raise UnknownReference(
                    f"task {task!r} needs {missing} in the scene; build the scene first")

    # per-class grounding

    def _ground_create_scene(self):
        self._item_predicates(self.params.get("items", []), creating=True)
        if "robot" in self.params:
            self._robot_predicate(self.params["robot"])
        for camera_id in self.params.get("cameras", []):
            self.refs[camera_id] = {"kind": "camera", "id": camera_id}
            self.predicates.append(CameraExists(camera_id))
        self._sets_predicates(self.params.get("sets", {}))
        self.mutated = []   # create does not protect a baseline

    def _ground_edit_scene(self):
        for item in self.params.get("adds", []):
            if "camera_id" in item:
                self.predicates.append(CameraExists(item["camera_id"]))
                continue
            ref = _ground_category(item["category"], self.ctx, self.env,
                                   self.refs, creating=True)
            self.predicates.append(EntityExists(ref))
            if item.get("relation"):
                anchor = _ground_category(item["anchor"], self.ctx, self.env,
                                          self.refs, creating=True)
                self.predicates.append(RelationHolds(ref, item["relation"], anchor))
                if ref.entity_id:
                    self.mutated.extend(_entity_scope_patterns(ref.entity_id))
        for item in self.params.get("removes", []):
            if "camera_id" in item:
                cid = item["camera_id"]
                if self.ctx.scene.camera(cid) is None:
                    raise UnknownReference(f"no camera {cid!r} to remove")
                self.predicates.append(CameraAbsent(cid))
                self.mutated.append(f"cameras.{cid}")
                continue
            ref = _ground_category(item["ref"], self.ctx, self.env,
                                   self.refs, creating=False)
            self.predicates.append(EntityAbsent(ref))
            if ref.entity_id:
                self.mutated.extend(_entity_scope_patterns(ref.entity_id))
        for rel in self.params.get("relations", []):
            subject = _ground_category(rel["subject"], self.ctx, self.env,
                                       self.refs, creating=not rel["negate"])
            anchor = _ground_category(rel["object"], self.ctx, self.env,
                                      self.refs, creating=not rel["negate"])
            if rel["negate"]:
                self.predicates.append(RelationAbsent(subject, rel["predicate"], anchor))
            else:
                self.predicates.append(RelationHolds(subject, rel["predicate"], anchor))
            if subject.entity_id:
                self.mutated.extend(_entity_scope_patterns(subject.entity_id))
        if "robot" in self.params:
            self._robot_predicate(self.params["robot"])
        self._sets_predicates(self.params.get("sets", {}))

    def _ground_collect_trajectories(self):
        self._check_task(self.params["task"])
        self._check_formats(self.params.get("formats", []))
        self.data_goals = DataGoals(
            min_episodes=self.params["count"], task_id=self.params["task"],
            required_formats=list(self.params.get("formats", [])))

    def _ground_transform_data(self):
        if not self.ctx.data.episodes:
            raise UnknownReference("no episodes to convert; collect data first")
        self._check_formats(self.params["formats"])
        self.data_goals = DataGoals(required_formats=list(self.params["formats"]))

    def _ground_edit_model_code(self):
        asset_id = self.params["asset_id"]
        self.refs[asset_id] = {"kind": "code", "id": asset_id}
        self.model_goals = ModelGoals(required_valid_code=[asset_id])

    def _ground_train_model(self):
        fmt = self.params["format"]
        self._check_formats([fmt])
        if not self.ctx.data.episodes and fmt not in self.ctx.data.exports:
            raise UnknownReference("nothing to train on: no episodes and no export")
        self.data_goals = DataGoals(required_formats=[fmt])
        self.model_goals = ModelGoals(
            train_format=fmt, train_epochs=self.params.get("epochs", 3),
            target_metric=self.params.get("target"))

    def _ground_evaluate_model(self):
        bench = self.params["benchmark"]
        if bench not in self.env.benchmarks:
            raise UnknownReference(
                f"unknown benchmark {bench!r}; known: {', '.join(self.env.benchmarks)}")
        self.refs[bench] = {"kind": "benchmark", "id": bench}
        pairs = []
        for model in self.params["models"]:
            if model not in self.env.models:
                raise UnknownReference(
                    f"unknown model {model!r}; known: {', '.join(self.env.models)}")
            self.refs[model] = {"kind": "model", "id": model}
            pairs.append((model, bench))
        self.model_goals = ModelGoals(
            required_reports=pairs, eval_episodes=self.params.get("episodes", 20),
            resource_budget=self.params.get("budget"))

    def _ground_ingest_asset(self):
        category = self.params["category"]
        source = self.params.get("source", "catalog")
        if source == "catalog":
            known = (any(e["category"] == category for e in EXTERNAL_CATALOG.values())
                     or category in EXTERNAL_CATALOG)
            if not known:
                raise UnknownReference(
                    f"catalog has no asset for category {category!r}")
        self.refs[category] = {"kind": "category", "id": category}
        self.asset_goals = [AssetGoal(category, source,
                                      self.params.get("ref", ""),
                                      self.params.get("unit", "m"))]


def _preserve_scope(intent_class: str, params: dict, mutated: list[str]) -> PreserveScope:
    mutated = sorted(set(mutated))
    if intent_class == "create_scene":
        return PreserveScope("none", [])
    if intent_class != "edit_scene":
        # non-scene intents must leave the whole scene alone
        return PreserveScope("all_except", [])
    user = params.get("preserve")
    if user is None:
        return PreserveScope("all_except", mutated)
    if user["mode"] == "explicit":
        from .diffing import matches_any
        clash = [p for p in mutated if matches_any(user["patterns"], p)]
        if clash:
            raise InconsistentGoal(
                f"preserve scope covers mutated paths: {clash}")
        return PreserveScope("explicit", list(user["patterns"]))
    return PreserveScope("all_except", sorted(set(user["patterns"]) | set(mutated)))


def ground_references(intent: IntentRepresentation, ctx: OperationalContext,
                      env: Environment | None = None) -> IntentRepresentation:
    """Resolve all mentions and derive the goal; returns the intent with
    grounded_refs and goal populated."""
    env = env or default_environment()
    grounder = _Grounder(intent.intent_class, intent.parameters, ctx, env).run()
    goal = GoalSpec(
        scene_goals=grounder.predicates,
        preserve=_preserve_scope(intent.intent_class, intent.parameters,
                                 grounder.mutated),
        data_goals=grounder.data_goals,
        model_goals=grounder.model_goals,
        asset_goals=grounder.asset_goals,
    )
    check_consistent(goal)
    intent.grounded_refs = grounder.refs
    intent.goal = goal
    return intent


def goal_from_intent(intent: IntentRepresentation) -> GoalSpec:
    """The goal implied by a grounded intent (grounds on demand if needed)."""
    if intent.goal is None:
        raise UnknownReference("intent is not grounded; call ground_references")
    check_consistent(intent.goal)
    return intent.goal


def parse_intent(turn: UserTurn, dialog: DialogueContext | None,
                 ctx: OperationalContext, env: Environment | None = None,
                 backend: InferenceBackend | None = None) -> IntentRepresentation:
    """Turn to grounded IntentRepresentation.

    DSL text wins; observation-only turns become create-scene intents; other
    unparsable input goes to the backend (default: reject with a grammar hint).
    """
    env = env or default_environment()
    if isinstance(turn, str):
        turn = UserTurn(turn)
    text = turn.text.strip()
    if text:
        try:
            intent_class, params = parse_text(text)
        except UnparsableIntent:
            if backend is not None:
                return backend.infer(turn, dialog or DialogueContext(), ctx)
            raise
    elif turn.observation:
        intent_class, params = "create_scene", _observation_params(turn.observation)
    else:
        raise UnparsableIntent("turn has no usable content", hint=GRAMMAR_HINT)
    intent = IntentRepresentation(
        intent_id=_intent_id(intent_class, params), intent_class=intent_class,
        text=text, parameters=params, targets=list(_TARGETS[intent_class]))
    return ground_references(intent, ctx, env)
