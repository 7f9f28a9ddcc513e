"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ShapeError(ValueError):
    """Array shapes or lengths do not agree."""


class PreconditionError(ValueError):
    """Input is missing something an operation requires."""


class FormatError(ValueError):
    """Malformed binary container."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Optimisation produced a non-finite objective."""

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
