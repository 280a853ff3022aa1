class ExbubbleError(ValueError):
    """Base class for every error raised by exbubble."""


# expression language ---------------------------------------------------------

class ExprError(ExbubbleError):
    pass


class ExprSyntaxError(ExprError):

    def __init__(self, message, position):
        super().__init__(f'{message} at position {position}')
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    pass


class VariableIndexError(ExprSyntaxError):
    pass


class ExprEvalError(ExprError):

    def __init__(self, message, node=None):
        if node is not None:
            message = f'{message} in `{node}`'
        super().__init__(message)
        self.node = node


# model -----------------------------------------------------------------------

class ModelError(ExbubbleError):
    pass


class ModelDimensionError(ModelError):
    pass


class NonFiniteCoefficientError(ModelError):
    pass


class RankDeficiencyError(ModelError):
    pass


class ModelValidationError(ModelError):
    pass


class MeasureError(ModelError):
    pass


class AssetIndexError(ModelError):
    pass


class ExhaustionError(ModelError):
    pass


# simulation and estimation ---------------------------------------------------

class SimulationError(ExbubbleError):
    pass


class InvalidPathError(SimulationError):
    pass


class EstimatorError(ExbubbleError):
    pass


class PreconditionError(ExbubbleError):
    pass


# configuration ---------------------------------------------------------------

class ConfigError(ExbubbleError):

    def __init__(self, message, field=None):
        if field is not None:
            message = f'{field}: {message}'
        super().__init__(message)
        self.field = field
