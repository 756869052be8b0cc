"""Exception hierarchy shared by every sgformer module."""


class SGFormerError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


class ShapeError(SGFormerError, ValueError):
    pass


class ConfigError(SGFormerError, ValueError):
    pass


class GraphError(SGFormerError):
    """A parameter is not connected to the loss it is differentiated against."""


class FormatError(SGFormerError, ValueError):
    pass


class DegeneracyError(SGFormerError, ArithmeticError):
    pass


class SizeError(SGFormerError, ValueError):
    """A dense N x N object was requested above the materialization guard."""


class PreconditionError(SGFormerError, ValueError):
    pass


class AnalysisError(SGFormerError, ValueError):
    pass


class MetricError(SGFormerError, ValueError):
    pass
