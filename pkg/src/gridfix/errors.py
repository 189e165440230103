"""Exception hierarchy shared by all gridfix modules."""


class GridfixError(Exception):
    pass


# -- schema / cell level
class InvalidSchema(GridfixError):
    pass


class OutOfDomain(GridfixError):
    pass


class ArityMismatch(GridfixError):
    pass


class SchemaMismatch(GridfixError):
    pass


# -- versioned store
class UnknownArray(GridfixError):
    pass


class UnknownVersion(GridfixError):
    pass


# -- operators
class UnknownDimension(GridfixError):
    pass


class EmptyAggList(GridfixError):
    pass


class BadOffsets(GridfixError):
    pass


class NoCommonDims(GridfixError):
    pass


class NotASubsetOfDims(GridfixError):
    pass


class ExpressionTypeError(GridfixError):
    pass


class BadBlock(GridfixError):
    pass


# -- fixpoint engine
class UnsupportedAssignment(GridfixError):
    pass


class NonConvergence(GridfixError):
    """Iteration hit the safety bound before the termination test passed.

    Carries the last array state and the trace so callers can inspect both.
    """

    def __init__(self, message, final=None, trace=None):
        super().__init__(message)
        self.final = final
        self.trace = trace


class NotIncrementalizable(GridfixError):
    pass


# -- overlap / parallel execution
class OverlapTooSmall(GridfixError):
    pass


class OverlapTooLarge(GridfixError):
    pass


class StrategyUnavailable(GridfixError):
    pass


# -- multi-resolution
class BadPyramidSpec(GridfixError):
    pass


class SeedInvalid(GridfixError):
    pass


class NoPriorState(GridfixError):
    pass


# -- applications
class TooFewPoints(GridfixError):
    pass


class BadParams(GridfixError):
    pass
