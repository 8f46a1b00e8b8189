"""Exception hierarchy for the engine.

Every failure mode a caller may want to branch on gets its own class;
exit-code mapping in the CLI relies on these distinctions.
"""

from __future__ import annotations


class EpochError(Exception):
    """Base class for all engine errors."""


# --- task spec ---------------------------------------------------------------

class SpecError(EpochError):
    pass


class SpecParseError(SpecError):
    """The spec document is not well-formed (YAML-level failure)."""


class SpecSchemaError(SpecError):
    """The spec document violates the schema (type, enum, range, unknown key)."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


# --- metrics / harness -------------------------------------------------------

class MetricsError(EpochError):
    pass


class MissingMetricsError(MetricsError):
    """An evaluation completed without producing a metrics file."""


class MetricsSchemaError(MetricsError):
    """A metrics document violates the artifact schema (shape, NaN, range)."""


class CommandError(EpochError):
    pass


class CommandSpawnError(CommandError):
    """The evaluation command could not be started at all."""


class CommandTimeoutError(CommandError):
    """The evaluation command exceeded its wall-clock budget."""


# --- drivers -----------------------------------------------------------------

class DriverError(EpochError):
    pass


class DriverTimeoutError(DriverError):
    pass


class DriverExitError(DriverError):
    """An external driver exited nonzero."""

    def __init__(self, message: str, exit_code: int, stderr: str = "") -> None:
        self.exit_code = exit_code
        self.stderr = stderr
        super().__init__(message)


class DriverProtocolError(DriverError):
    """A driver produced output that does not validate against the wire schema."""


class UnknownBuiltinError(DriverError):
    pass


class ScopeViolationError(DriverError):
    """A driver was handed paths outside its declared access scope."""


class ReplayTraceError(DriverError):
    """A replay trace file is malformed or inconsistent."""


# --- protocol ----------------------------------------------------------------

class IllegalEventError(EpochError):
    """An event was fed to the state machine out of order.

    Carries the expected event kind(s) so callers can report precisely.
    """

    def __init__(self, message: str, expected: tuple[str, ...] = ()) -> None:
        self.expected = expected
        super().__init__(message)


class RunError(EpochError):
    """A run-level failure (Phase 1 could not produce an accepted baseline)."""


# --- tracking ----------------------------------------------------------------

class StoreError(EpochError):
    pass


class StoreLockError(StoreError):
    pass


class UnsupportedBackendError(StoreError):
    pass


class ResumeError(StoreError):
    """The artifact set on disk is corrupt or partial.

    `offending_file` names the first artifact that failed to load.
    """

    def __init__(self, message: str, offending_file: str | None = None) -> None:
        self.offending_file = offending_file
        super().__init__(message)
