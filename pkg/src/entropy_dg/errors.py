"""Exception types shared across assembly and solver layers."""


class DensityOverflowError(ArithmeticError):
    """exp(lambda) left the representable range at some evaluation point."""

    def __init__(self, element: int, message: str | None = None):
        self.element = int(element)
        super().__init__(
            message or f"exp(lambda) overflowed on element {element}"
        )


class NewtonDivergenceError(RuntimeError):
    """Newton iteration failed; carries the last iterate and residual history."""

    def __init__(self, message, last_iterate=None, residual_history=None, step=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_history = list(residual_history or [])
        self.step = step


class StiffnessError(RuntimeError):
    """Adaptive ODE integration drove the step size below representable size."""
