"""Exception hierarchy shared by all lqrpg modules."""


class LqrPgError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LqrPgError, ValueError):
    pass


class NumericError(LqrPgError, ArithmeticError):
    pass


class InstabilityError(LqrPgError):
    """A closed-loop matrix that must be Schur stable is not."""


class ModelInstabilityError(InstabilityError):
    """The closed loop built from *estimated* matrices is not Schur stable."""


class NonConvergenceError(NumericError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class InvalidLevelError(LqrPgError, ValueError):
    pass


class OutOfRegimeError(LqrPgError, ValueError):
    """An analysis bound was queried outside the regime where it holds."""


class InsufficientExcitationError(LqrPgError):
    pass


class EstimationFailureError(LqrPgError):
    pass


class ConfigError(LqrPgError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
