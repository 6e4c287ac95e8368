"""Exception hierarchy shared by every subsystem.

Every error carries a stable ``code`` string so the service layer can map
failures to structured API payloads without string-matching messages.
"""

from __future__ import annotations


class ClawError(Exception):
    """Base class for all engine errors."""

    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def payload(self) -> dict:
        return {"code": self.code, "message": self.message, "details": self.details}


# --- core state ---

class InvalidContext(ClawError):
    code = "invalid-context"

    def __init__(self, violations):
        super().__init__(
            f"context failed validation with {len(violations)} violation(s)",
            violations=[v.as_dict() for v in violations],
        )
        self.violations = violations


class StorageFailure(ClawError):
    code = "storage-failure"


class UnknownSnapshot(ClawError):
    code = "unknown-snapshot"


class CorruptSnapshot(ClawError):
    code = "corrupt-snapshot"


# --- intent ---

class UnparsableIntent(ClawError):
    code = "unparsable-intent"


class AmbiguousReference(ClawError):
    code = "ambiguous-reference"


class UnknownReference(ClawError):
    code = "unknown-reference"


class InconsistentGoal(ClawError):
    code = "inconsistent-goal"


class UndecidablePredicate(ClawError):
    code = "undecidable-predicate"


# --- skills / planning ---

class DuplicateSkill(ClawError):
    code = "duplicate-skill"


class SchemaMismatch(ClawError):
    code = "schema-mismatch"


class PreconditionFailure(ClawError):
    code = "precondition-failure"


class UnknownSkill(ClawError):
    code = "unknown-skill"


class NoApplicableSkills(ClawError):
    code = "no-applicable-skills"


class PlanningBudgetExceeded(ClawError):
    code = "planning-budget-exceeded"


# --- adapters / backends ---

class UnsupportedCapability(ClawError):
    code = "unsupported-capability"


class UnregisteredAsset(ClawError):
    code = "unregistered-asset"


class SourceUnavailable(ClawError):
    code = "source-unavailable"


class NormalizationFailure(ClawError):
    code = "normalization-failure"


class InvalidPlacement(ClawError):
    code = "invalid-placement"


class UnknownTask(ClawError):
    code = "unknown-task"


class MissingTaskEntities(ClawError):
    code = "missing-task-entities"


class UnknownBenchmark(ClawError):
    code = "unknown-benchmark"


class UnknownModel(ClawError):
    code = "unknown-model"


class MissingDataset(ClawError):
    code = "missing-dataset"


class BackendUnavailable(ClawError):
    code = "backend-unavailable"


# --- data pipeline ---

class UnsupportedFormat(ClawError):
    code = "unsupported-format"


class WriteFailure(ClawError):
    code = "write-failure"


class ChecksumMismatch(ClawError):
    code = "checksum-mismatch"


class SchemaViolation(ClawError):
    code = "schema-violation"


class MissingExport(ClawError):
    code = "missing-export"


# --- execution / session ---

class AbortedWorkflow(ClawError):
    """Raised when the recovery ladder is exhausted; carries the partial trace."""

    code = "aborted-workflow"

    def __init__(self, message, trace, context):
        super().__init__(message)
        self.trace = trace
        self.context = context


class SessionBusy(ClawError):
    code = "session-busy"


class StalePlan(ClawError):
    code = "stale-plan"


class AlreadyExecuted(ClawError):
    code = "already-executed"


class UnknownSession(ClawError):
    code = "unknown-session"


class UnknownPlan(ClawError):
    code = "unknown-plan"


class CorruptLog(ClawError):
    code = "corrupt-log"

    def __init__(self, message: str = "", offset: int = -1, **details):
        super().__init__(message, offset=offset, **details)
        self.offset = offset
