"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: usage errors exit 2 (argparse),
NumericError exits 3, CompatibilityError exits 4, diagnostic failures
exit 5; everything else is a plain nonzero.
"""


class GamsiError(Exception):
    """Base class for all package errors."""


class ShapeError(GamsiError):
    """Operand shapes or dtypes disagree with an operation's contract."""


class ConfigError(GamsiError):
    """Invalid configuration value or schema violation."""


class CapacityError(ConfigError):
    """A sequence exceeds the configured positional-table size."""


class ContractError(GamsiError):
    """An operation was called outside its stated precondition."""


class DegenerateRowError(GamsiError):
    """A softmax row had every position masked."""


class NumericError(GamsiError):
    """Non-finite value produced where the contract requires finite math."""


class FormatError(GamsiError):
    """Malformed binary file. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)
        self.offset = offset


class CompatibilityError(GamsiError):
    """Checkpoint or feature file disagrees with the current configuration."""
