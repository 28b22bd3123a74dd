"""Exception types shared across the package."""


class RefgameError(Exception):
    """Base class for all package errors."""


class ConfigError(RefgameError):
    """Invalid or inconsistent experiment configuration."""


class DataError(RefgameError):
    """Dataset missing, corrupt, or structurally invalid."""


class ShapeError(RefgameError):
    """Tensor shape does not match the contract of an operation."""


class DomainError(RefgameError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(RefgameError):
    """A value violates a structural invariant (e.g. non-one-hot token row)."""


class CheckpointError(RefgameError):
    """Checkpoint missing, incompatible, or refusing to resume."""


class TrainingError(RefgameError):
    """Training aborted (e.g. non-finite loss)."""
