"""Exception hierarchy shared by the lab modules."""


class WalkLabError(Exception):
    """Base class; every error raised on purpose by the package derives from it."""


class ModelMismatch(WalkLabError):
    pass


class BudgetExceeded(WalkLabError):
    """A memory or radius budget ran out before the computation finished."""

    def __init__(self, message, **progress):
        super().__init__(message)
        self.progress = progress


class RadiusExhausted(BudgetExceeded):
    def __init__(self, message, lower_bound=None, **progress):
        super().__init__(message, lower_bound=lower_bound, **progress)
        self.lower_bound = lower_bound


class NoPeripheralStructure(WalkLabError):
    pass


class NotAdmissible(WalkLabError):
    def __init__(self, message, unreachable=None):
        super().__init__(message)
        self.unreachable = unreachable


class TorsionElement(WalkLabError):
    pass


class ConfigError(WalkLabError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConvergenceError(WalkLabError):
    def __init__(self, message, residual=None, last=None):
        super().__init__(message)
        self.residual = residual
        self.last = last
