"""Exceptions shared across the library."""


class ParseError(ValueError):
    """Malformed input file (IDX, PNM, CSV, checkpoint)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """Inconsistent model or experiment configuration."""


class BudgetError(ConfigError):
    """No channel assignment reaches the parameter budget within tolerance."""

    def __init__(self, message: str, nearest_counts: list[int] | None = None):
        super().__init__(message)
        self.nearest_counts = nearest_counts or []


class SplitError(ValueError):
    """Dataset split left a class unrepresented in the train fraction."""


class DivergedRunError(RuntimeError):
    """Training loss became non-finite; carries the offending epoch."""

    def __init__(self, epoch: int, message: str = ""):
        super().__init__(message or f"loss diverged at epoch {epoch}")
        self.epoch = epoch


class ContractViolation(RuntimeError):
    """A layer broke its contract (e.g. non-deterministic forward)."""
