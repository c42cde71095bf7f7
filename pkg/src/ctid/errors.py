"""Exception hierarchy shared by the library and the CLI."""


class CtidError(Exception):
    """Base class for all library errors."""


class StructureError(CtidError, ValueError):
    """Invalid polynomial, transfer function or model structure."""


class SimulationOverflow(CtidError, FloatingPointError):
    """A simulated signal became non-finite.

    Attributes:
        index: first sample index holding a non-finite value.
    """

    def __init__(self, index: int, message: str | None = None):
        self.index = int(index)
        super().__init__(message or f"simulation overflow at sample {self.index}")


class SingularMatrixError(CtidError, ArithmeticError):
    """Normal matrix too ill-conditioned to solve (insufficient excitation)."""

    def __init__(self, condition: float, limit: float):
        self.condition = condition
        self.limit = limit
        super().__init__(
            f"normal matrix condition {condition:.3g} exceeds limit {limit:.3g}"
        )


class RepeatedPolesError(StructureError):
    """Partial fraction expansion hit poles closer than the cluster tolerance."""


class EstimationError(CtidError):
    """Estimation could not produce any model (e.g. every block singular)."""
