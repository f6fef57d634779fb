"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violates the documented shape or type contract."""


class DegenerateInputError(ValueError):
    """Input is well formed but too small or empty to compute on."""


class OptimizationError(RuntimeError):
    """Refinement diverged; ``history`` holds the iterations completed so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
