"""Exception hierarchy shared across the engine.

CLI exit-code mapping: usage/configuration errors -> 1, data/format
errors -> 2, runtime/numeric errors -> 3.
"""


class PseError(Exception):
    exit_code = 3


class UsageError(PseError):
    exit_code = 1


class ConfigurationError(UsageError):
    pass


class DataError(PseError):
    exit_code = 2


class FormatError(DataError):
    """Malformed binary/text artifact. Carries the failing byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DomainError(DataError):
    """Input violates an operation's stated domain (silent signal, bad range, ...)."""


class CapabilityError(PseError):
    pass


class TrainingError(PseError):
    """Training aborted (divergence, NaN loss). Carries the failing step index."""

    def __init__(self, message: str, step_index: int | None = None):
        if step_index is not None:
            message = f"{message} (step {step_index})"
        super().__init__(message)
        self.step_index = step_index
