"""Package-level exception types."""


class NonConvergenceError(RuntimeError):
    """An iterative solve failed to reach tolerance; carries the best iterate."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class ScopeError(ValueError):
    """A theorem-scoped operation was invoked outside its hypotheses."""
