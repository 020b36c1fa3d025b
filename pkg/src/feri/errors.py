"""Exception hierarchy shared by every feri module."""


class FeriError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FeriError, ValueError):
    pass


class GraphStateError(FeriError, RuntimeError):
    pass


class NonFiniteError(FeriError, FloatingPointError):
    pass


class ConfigError(FeriError, ValueError):
    pass


class ContractError(FeriError, ValueError):
    """A precondition of an operation was violated by the caller."""


class EmptyTaskError(FeriError, ValueError):
    def __init__(self, task):
        super().__init__(f"task {task} has no samples")
        self.task = task


class DivergenceError(FeriError, FloatingPointError):
    def __init__(self, epoch, losses):
        super().__init__(f"non-finite task loss at epoch {epoch}: {list(losses)}")
        self.epoch = epoch
        self.losses = losses


class UndefinedMetricError(FeriError, ValueError):
    pass


class DataError(FeriError, ValueError):
    pass
