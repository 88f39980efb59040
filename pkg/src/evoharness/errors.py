"""Exception hierarchy. ``exit_code`` is what the CLI returns for each category."""

from __future__ import annotations


class HarnessError(Exception):
    category = "error"
    exit_code = 1


class FormatError(HarnessError):
    """Unparseable artifact, program or document."""

    category = "format"
    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PolicyViolation(HarnessError):
    category = "policy"
    exit_code = 3

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "policy violation")


class MalformedActionError(PolicyViolation):
    """A meta-action path is not workspace-relative and normalized."""

    category = "malformed-action"

    def __init__(self, message: str):
        super().__init__([message])


class EditFailedError(HarnessError):
    category = "edit-failed"
    exit_code = 3


class QuotaRefused(HarnessError):
    category = "quota"
    exit_code = 4


class TamperError(HarnessError):
    category = "tamper"
    exit_code = 5


class LineageError(HarnessError):
    category = "lineage"
    exit_code = 5


class ReplayRefusedError(HarnessError):
    category = "replay-refused"
    exit_code = 5


class AuthorizationError(HarnessError):
    category = "authorization"
    exit_code = 5


class SimulationError(HarnessError):
    category = "simulation"


class SeedMissingError(HarnessError):
    category = "seed-missing"


class ParentCorruptError(HarnessError):
    category = "parent-corrupt"


class NotAWorkspaceError(HarnessError):
    category = "workspace"


class WorkspaceBusyError(HarnessError):
    category = "busy"
