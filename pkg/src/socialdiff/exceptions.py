"""Exception hierarchy for socialdiff."""

from typing import Any, ClassVar


class SocialDiffException(Exception):
    """Base exception for socialdiff."""

    exit_code: ClassVar[int] = 1

    def __init__(
        self, message: str = "", context: dict[str, Any] | None = None
    ) -> None:
        super().__init__(message)
        self.context = context or {}


class ConfigError(SocialDiffException):
    """Run configuration is invalid or inconsistent."""

    exit_code = 2


class VariantNotFoundError(ConfigError):
    """No model variant is registered under the requested slug."""

    def __init__(
        self, slug: str, context: dict[str, Any] | None = None
    ) -> None:
        super().__init__(f"Model variant {slug!r} is not registered", context)
        self.slug = slug


class DataError(SocialDiffException):
    """Input data is missing, malformed or unusable."""

    exit_code = 3


class MalformedRowError(DataError):
    """An input row could not be parsed."""

    def __init__(
        self,
        path: str,
        row: int,
        reason: str,
        context: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(f"{path}: row {row}: {reason}", context)
        self.path = path
        self.row = row


class EmptyGraphError(DataError):
    """Nothing survives preprocessing."""


class CheckpointError(DataError):
    """Checkpoint container is missing, corrupt or incompatible."""


class NumericError(SocialDiffException):
    """A numeric computation failed."""

    exit_code = 4


class NonFiniteError(NumericError):
    """An operation produced NaN or infinite values."""

    def __init__(
        self, op: str, context: dict[str, Any] | None = None
    ) -> None:
        super().__init__(
            f"Operation {op!r} produced non-finite values", context
        )
        self.op = op


class DivergenceError(NumericError):
    """Training loss or gradients became non-finite."""


class TapeError(NumericError):
    """A gradient recording was used incorrectly."""


class InvalidTransitionError(SocialDiffException):
    """Invalid run lifecycle transition requested."""
