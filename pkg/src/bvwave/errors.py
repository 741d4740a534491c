"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Input data violates a documented invariant."""


class ConfigError(ValueError):
    """Run configuration is malformed or inconsistent."""


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed."""


class KrylovError(SolverError):
    """The Krylov solver did not reach its tolerance.

    The best iterate found is kept on ``best`` together with the achieved
    relative residual and the iteration count.
    """

    def __init__(self, message, best=None, relres=None, iterations=0):
        super().__init__(message)
        self.best = best
        self.relres = relres
        self.iterations = iterations
