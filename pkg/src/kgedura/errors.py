"""Exception types raised across the package."""


class KgeError(Exception):
    """Base class for all package errors."""


class DatasetError(KgeError):
    """Malformed input files or invalid dataset state."""


class ConfigError(KgeError):
    """Invalid configuration value or flag combination."""


class UnsupportedCombination(ConfigError):
    """A regularizer that does not apply to the chosen model."""


class CheckpointError(KgeError):
    """Corrupt or incompatible checkpoint file."""


class TrainingDiverged(KgeError):
    """Loss became NaN/Inf during optimization."""

    def __init__(self, epoch: int, batch: int, max_abs_param: float):
        self.epoch = epoch
        self.batch = batch
        self.max_abs_param = max_abs_param
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} "
            f"(max |param| = {max_abs_param:.3e}); reduce the learning rate "
            f"or the regularization strength"
        )


class EvaluationError(KgeError):
    """Evaluation protocol violation (e.g. the gold answer was filtered)."""
