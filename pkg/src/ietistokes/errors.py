from __future__ import annotations


class IetiStokesError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSmoothnessError(IetiStokesError, ValueError):
    pass


class InvalidKnotVectorError(IetiStokesError, ValueError):
    pass


class OutOfDomainError(IetiStokesError, ValueError):
    pass


class DomainError(IetiStokesError, ValueError):
    pass


class GeometryError(IetiStokesError, ValueError):
    """Singular or folded geometry map."""

    def __init__(self, patch: int, node: tuple[float, float], det: float) -> None:
        self.patch = patch
        self.node = node
        self.det = det
        super().__init__(
            f"singular Jacobian on patch {patch} at parameter "
            f"({node[0]:.6g}, {node[1]:.6g}), det = {det:.3e}"
        )


class GeometryParseError(IetiStokesError, ValueError):
    def __init__(self, line_no: int, msg: str) -> None:
        self.line_no = line_no
        super().__init__(f"line {line_no}: {msg}")


class NonMatchingInterfaceError(IetiStokesError, ValueError):
    pass


class ConformityError(IetiStokesError, ValueError):
    pass


class FullyMatchingError(IetiStokesError, ValueError):
    pass


class MultiplicityError(IetiStokesError, ValueError):
    pass


class UnknownVariantError(IetiStokesError, ValueError):
    pass


class SingularMatrixError(IetiStokesError, ArithmeticError):
    pass


class DimensionMismatchError(IetiStokesError, ValueError):
    pass


class ConfigurationError(IetiStokesError, ValueError):
    pass


class SizeGuardError(IetiStokesError, ValueError):
    pass
