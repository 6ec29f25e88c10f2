class CzkitError(ValueError):
    """Base class for every rejection raised by the library."""


class GridError(CzkitError):
    pass


class KernelError(CzkitError):
    pass


class DecompositionError(CzkitError):
    pass


class InconsistencyError(CzkitError):
    """A discretized identity that the construction guarantees did not hold."""


class ConfigError(CzkitError):
    pass


class OperatorError(CzkitError):
    pass
