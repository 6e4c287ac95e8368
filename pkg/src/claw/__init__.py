"""Conversational workflow engine for simulation scenes, trajectory
datasets, and model artifacts.

Instructions are parsed into intents, grounded against the live operational
context, planned as cost-minimal skill workflows, executed step by step with
verification and rollback, and logged as a hash-chained event stream.
"""

from .assets import AssetLibrary, Environment, default_environment
from .backends import MockBackend, bind
from .deviation import DeviationReport, DeviationWeights, measure_deviation
from .errors import ClawError
from .executor import ExecutionTrace, RecoveryPolicy, execute, verify_step
from .formats import (FORMAT_IDS, ExportManifest, check_format,
                      export_episodes, import_episodes)
from .intent import (IntentRepresentation, UserTurn, goal_from_intent,
                     parse_intent)
from .planner import CostModel, Workflow, estimate_cost, plan, replan
from .session import Session, SessionManager
from .skills import SkillCall, SkillLibrary, load_library
from .snapshots import MemorySnapshotStore, SnapshotStore
from .state import OperationalContext, canonical_bytes, validate_context

__version__ = "1.0.0"

__all__ = [
    "AssetLibrary", "Environment", "default_environment",
    "MockBackend", "bind",
    "DeviationReport", "DeviationWeights", "measure_deviation",
    "ClawError",
    "ExecutionTrace", "RecoveryPolicy", "execute", "verify_step",
    "FORMAT_IDS", "ExportManifest", "check_format", "export_episodes",
    "import_episodes",
    "IntentRepresentation", "UserTurn", "goal_from_intent", "parse_intent",
    "CostModel", "Workflow", "estimate_cost", "plan", "replan",
    "Session", "SessionManager",
    "SkillCall", "SkillLibrary", "load_library",
    "MemorySnapshotStore", "SnapshotStore",
    "OperationalContext", "canonical_bytes", "validate_context",
    "__version__",
]
