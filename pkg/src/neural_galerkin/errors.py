"""Exception hierarchy shared by every module."""


class NeuralGalerkinError(Exception):
    """Base class for all errors raised by this package."""


class KernelError(ArithmeticError):
    """Raised by the dense kernels; ``args[0]`` is the failing pivot index."""


class NotPositiveDefinite(NeuralGalerkinError, ArithmeticError):
    pass


class EmptyMatrix(NeuralGalerkinError, ValueError):
    pass


class ShapeMismatch(NeuralGalerkinError, ValueError):
    pass


class DegenerateBasis(NeuralGalerkinError, ArithmeticError):
    pass


class BudgetExceeded(NeuralGalerkinError, MemoryError):
    pass


class NonFiniteGradient(NeuralGalerkinError, FloatingPointError):
    pass


class UnsupportedProblem(NeuralGalerkinError, ValueError):
    pass


class UnknownProblem(NeuralGalerkinError, KeyError):
    pass


class EnergyViolation(NeuralGalerkinError, RuntimeError):
    pass


class NonPeriodicProblem(NeuralGalerkinError, ValueError):
    pass


class ZeroReference(NeuralGalerkinError, ZeroDivisionError):
    pass


class TimeOutOfRange(NeuralGalerkinError, ValueError):
    pass


class MismatchedProblems(NeuralGalerkinError, ValueError):
    pass


class ConfigError(NeuralGalerkinError, ValueError):
    pass
