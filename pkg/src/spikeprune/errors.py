"""Exception hierarchy. CLI maps SpikePruneError to exit code 1."""


class SpikePruneError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SpikePruneError, ValueError):
    """A numeric or structural argument violates its documented domain."""


class CheckpointError(SpikePruneError):
    """Checkpoint file is malformed or inconsistent; message names the key path."""


class InfeasibleBudgetError(SpikePruneError):
    """No mask satisfies the accumulation budget under the survival floor."""


class TrainingDivergedError(SpikePruneError):
    """Loss became non-finite during training."""
