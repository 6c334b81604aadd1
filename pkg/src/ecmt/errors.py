"""Shared exception types."""


class EcmtError(Exception):
    """Base class for all domain errors raised by this package."""


class DimensionError(EcmtError):
    """Array shapes violate an operation's contract."""


class ConfigError(EcmtError):
    """A width configuration is invalid for the network it targets."""


class FormatError(EcmtError):
    """A file does not conform to the expected binary/JSON layout."""


class NumericError(EcmtError):
    """A non-finite value appeared where finiteness is required."""


class InfeasibleBudgetError(EcmtError):
    """The requested compute budget is below the minimal achievable cost."""

    def __init__(self, budget: int, min_macs: int):
        super().__init__(
            f"budget {budget} MACs is below the minimal achievable {min_macs} MACs"
        )
        self.budget = budget
        self.min_macs = min_macs
