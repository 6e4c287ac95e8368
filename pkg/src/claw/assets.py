"""Asset library, ingestion, and the seeded execution environment.

Assets are normalized descriptors (metric extent, +Z up) rather than real
geometry.  The built-in library covers common tabletop objects; external
sources (a local catalog stub or a descriptor file) can be ingested at
runtime, which normalizes and registers them idempotently by content hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NormalizationFailure, SourceUnavailable, UnknownTask, UnregisteredAsset
from .state import canonical_json

_UNIT_FACTORS = {"m": 1.0, "cm": 0.01, "mm": 0.001}


@dataclass
class AssetRecord:
    asset_id: str
    category: str
    extent: tuple[float, float, float]    # bounding box in meters, +Z up
    source: str = "builtin"               # builtin | ingested
    scale: float = 1.0
    up_axis: str = "z"
    registered_on: dict[str, bool] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"asset_id": self.asset_id, "category": self.category,
                "extent": list(self.extent), "source": self.source,
                "scale": self.scale, "up_axis": self.up_axis,
                "registered_on": dict(sorted(self.registered_on.items()))}


def _normalize(category: str, extent, unit: str, up_axis: str) -> tuple:
    """Convert a raw descriptor to metric extent with +Z up."""
    if unit not in _UNIT_FACTORS:
        raise NormalizationFailure(f"unknown unit {unit!r}")
    try:
        dims = [float(v) * _UNIT_FACTORS[unit] for v in extent]
    except (TypeError, ValueError):
        raise NormalizationFailure(f"non-numeric extent for {category!r}")
    if len(dims) != 3 or any(v <= 0 for v in dims):
        raise NormalizationFailure(f"extent must be 3 positive dimensions, got {extent!r}")
    if up_axis == "y":
        dims = [dims[0], dims[2], dims[1]]
    elif up_axis != "z":
        raise NormalizationFailure(f"unsupported up axis {up_axis!r}")
    return tuple(dims)


class AssetLibrary:
    """Registry of spawnable assets; reads are cheap, ingestion is serialized
    by the session's single-writer discipline."""

    def __init__(self, store: Path | None = None):
        self._records: dict[str, AssetRecord] = {}
        self._by_content: dict[str, str] = {}   # content hash -> asset id
        self._store = store

    def ids(self) -> list[str]:
        return sorted(self._records)

    def categories(self) -> frozenset:
        return frozenset(r.category for r in self._records.values())

    def get(self, asset_id: str) -> AssetRecord:
        rec = self._records.get(asset_id)
        if rec is None:
            raise UnregisteredAsset(f"no asset {asset_id!r}")
        return rec

    def has(self, asset_id: str) -> bool:
        return asset_id in self._records

    def for_category(self, category: str) -> list[AssetRecord]:
        return sorted((r for r in self._records.values() if r.category == category),
                      key=lambda r: r.asset_id)

    def best_for_category(self, category: str) -> AssetRecord:
        matches = self.for_category(category)
        if not matches:
            raise UnregisteredAsset(f"no asset for category {category!r}")
        return matches[0]

    def register(self, record: AssetRecord) -> AssetRecord:
        self._records[record.asset_id] = record
        if self._store is not None:
            root = self._store / record.asset_id
            root.mkdir(parents=True, exist_ok=True)
            (root / "descriptor.json").write_text(canonical_json(record.as_dict()), "utf-8")
            (root / "payload").write_bytes(f"ASSET|{record.asset_id}".encode())
        return record

    def ingest(self, source: dict, backend_id: str = "mock") -> AssetRecord:
        """Normalize and register an external asset; idempotent per content.

        source: {"kind": "catalog"|"file", "ref": ..., optional "category",
        "extent", "unit", "up_axis"}; file refs point at a descriptor JSON.
        """
        kind = source.get("kind", "catalog")
        if kind == "catalog":
            ref = source.get("ref") or source.get("category")
            entry = EXTERNAL_CATALOG.get(ref)
            if entry is None and source.get("category"):
                for cid, e in sorted(EXTERNAL_CATALOG.items()):
                    if e["category"] == source["category"]:
                        ref, entry = cid, e
                        break
            if entry is None:
                raise SourceUnavailable(f"catalog has no entry {ref!r}")
            desc = {"category": entry["category"], "extent": entry["extent"],
                    "unit": entry.get("unit", "m"), "up_axis": entry.get("up_axis", "z")}
        elif kind == "file":
            path = Path(str(source.get("ref", "")))
            if not path.is_file():
                raise SourceUnavailable(f"descriptor file {path} not found")
            try:
                desc = json.loads(path.read_text("utf-8"))
            except (OSError, ValueError) as exc:
                raise SourceUnavailable(f"unreadable descriptor {path}: {exc}")
        else:
            raise SourceUnavailable(f"unknown source kind {kind!r}")

        category = desc.get("category") or source.get("category")
        if not category:
            raise NormalizationFailure("descriptor lacks a category")
        extent = _normalize(category, desc.get("extent"), desc.get("unit", "m"),
                            desc.get("up_axis", "z"))
        content = canonical_json({"category": category, "extent": list(extent)})
        digest = hashlib.sha256(content.encode()).hexdigest()
        existing = self._by_content.get(digest)
        if existing is not None:
            rec = self._records[existing]
            rec.registered_on[backend_id] = True
            return rec
        asset_id = f"{category}_{digest[:8]}"
        rec = AssetRecord(asset_id, category, extent, source="ingested",
                          registered_on={backend_id: True})
        self._by_content[digest] = asset_id
        return self.register(rec)


BUILTIN_ASSETS = (
    AssetRecord("table_01", "table", (1.2, 0.8, 0.75)),
    AssetRecord("shelf_01", "shelf", (0.8, 0.3, 1.5)),
    AssetRecord("mug_01", "mug", (0.08, 0.08, 0.1)),
    AssetRecord("block_01", "block", (0.05, 0.05, 0.05)),
    AssetRecord("plate_01", "plate", (0.2, 0.2, 0.03)),
    AssetRecord("bottle_01", "bottle", (0.07, 0.07, 0.25)),
    AssetRecord("bowl_01", "bowl", (0.15, 0.15, 0.07)),
)

# Third-party source stub: a fixed local catalog, no network.
EXTERNAL_CATALOG = {
    "vase_01": {"category": "vase", "extent": [0.12, 0.12, 0.3], "unit": "m"},
    "lamp_01": {"category": "lamp", "extent": [20.0, 20.0, 45.0], "unit": "cm"},
    "toy_robot_01": {"category": "toy_robot", "extent": [0.1, 0.08, 0.15], "unit": "m"},
}

ROBOTS = {
    "franka": [f"joint_{i}" for i in range(7)],
    "ur5": [f"joint_{i}" for i in range(6)],
    "aloha": [f"joint_{i}" for i in range(14)],
}

BENCHMARKS = ("libero", "robotwin", "simplerenv")

MODELS = ("model_alpha", "model_beta")

# Task registry: task id -> entity categories the scene must contain.
TASKS = {
    "pick_mug": ["mug"],
    "pick_block": ["block"],
    "pick_bottle": ["bottle"],
    "stack_blocks": ["block", "table"],
    "set_table": ["plate", "mug", "table"],
}


def task_categories(task_id: str) -> list[str]:
    """Required categories for a task; pick_<category> works for any category."""
    if task_id in TASKS:
        return list(TASKS[task_id])
    if task_id.startswith("pick_") and len(task_id) > 5:
        return [task_id[5:]]
    raise UnknownTask(f"unknown task {task_id!r}")


def is_known_task(task_id: str) -> bool:
    try:
        task_categories(task_id)
        return True
    except UnknownTask:
        return False


@dataclass
class Environment:
    """Catalogs the planner, grounding, and preconditions resolve against."""
    assets: AssetLibrary
    robots: dict = field(default_factory=lambda: dict(ROBOTS))
    benchmarks: tuple = BENCHMARKS
    models: tuple = MODELS

    def asset_categories(self) -> frozenset:
        return self.assets.categories()


def default_environment(store: Path | None = None) -> Environment:
    lib = AssetLibrary(store)
    for rec in BUILTIN_ASSETS:
        lib.register(AssetRecord(rec.asset_id, rec.category, rec.extent, rec.source,
                                 rec.scale, rec.up_axis, {"mock": True}))
    return Environment(assets=lib)
