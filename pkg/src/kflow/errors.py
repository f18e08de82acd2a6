"""Exception hierarchy shared by every kflow module."""


class KflowError(Exception):
    """Base class for all errors raised by kflow."""


class ParameterArity(KflowError, ValueError):
    pass


class NonFinite(KflowError, ArithmeticError):
    """A kernel term, integrator stage or rollout produced NaN/inf."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class DimensionMismatch(KflowError, ValueError):
    pass


class SeriesTooShort(KflowError, ValueError):
    pass


class SingularGram(KflowError, ArithmeticError):
    pass


class NegativeVariance(KflowError, ArithmeticError):
    pass


class BatchTooLarge(KflowError, ValueError):
    pass


class SampleTooLarge(KflowError, ValueError):
    pass


class ZeroDenominator(KflowError, ArithmeticError):
    pass


class NoValidNeighbors(KflowError, ValueError):
    pass


class AllProbesFailed(KflowError, ArithmeticError):
    pass


class TrainingStalled(KflowError, RuntimeError):
    pass


class ChecksumMismatch(KflowError, ValueError):
    pass
