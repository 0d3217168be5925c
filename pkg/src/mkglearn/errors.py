"""Exception types shared across the package."""


class MkgError(Exception):
    """Base class for all package errors."""


class InvalidIdentifierError(MkgError):
    """Raised when a part identifier is empty after normalization."""


class UnknownPartError(MkgError):
    """Raised when an identifier does not resolve to a graph node."""


class CycleError(MkgError):
    """Raised when an edge would close a connectedTo cycle.

    Carries the offending (parent_id, child_id) edge.
    """

    def __init__(self, parent_id: str, child_id: str):
        self.edge = (parent_id, child_id)
        super().__init__(f"edge {parent_id} -> {child_id} would create a connectedTo cycle")


class ConfigError(MkgError):
    """Raised on invalid configuration values."""


class ShapeError(MkgError):
    """Raised on dimension mismatches between arrays and models."""


class UndefinedDirectionError(MkgError):
    """Raised when a zero vector is used where a direction is required."""


class DivergenceError(MkgError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
