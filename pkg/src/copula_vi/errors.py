"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter or argument lies outside its admissible domain."""


class NumericalError(ArithmeticError):
    """An iterative numerical routine failed or produced non-finite output."""

    def __init__(self, message, residual=None, context=None):
        super().__init__(message)
        self.residual = residual
        self.context = context


class StructureError(ValueError):
    """A vine or graph structure cannot satisfy a requested operation."""


class OptimizationError(RuntimeError):
    """Optimization diverged; carries the phase/iteration where it happened."""

    def __init__(self, message, phase=None, iteration=None):
        super().__init__(message)
        self.phase = phase
        self.iteration = iteration


class ModelEvaluationError(RuntimeError):
    """A target model raised while evaluated on a Monte Carlo sample."""

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index
