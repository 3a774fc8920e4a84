"""Exception hierarchy shared by the solver, verification and transport layers."""


class GeodesicOTError(Exception):
    """Base class for all errors raised by this package."""


class KernelSyntaxError(GeodesicOTError, ValueError):
    """Malformed kernel expression text.

    ``pos`` is the 0-based character offset where parsing failed.
    """

    def __init__(self, message: str, pos: int, source: str = ""):
        self.pos = pos
        self.source = source
        pointer = ""
        if source:
            pointer = f"\n  {source}\n  {' ' * pos}^"
        super().__init__(f"{message} (at position {pos}){pointer}")


class KernelDomainError(GeodesicOTError, ArithmeticError):
    """Kernel evaluated outside its domain (log of non-positive, 1/0, ...)."""


class KernelPositivityError(KernelDomainError):
    """Kernel value is not a finite strictly positive number."""


class NewtonConvergenceError(GeodesicOTError):
    """Damped Newton failed to converge on the collocation system."""


class UnsolvedEntryError(GeodesicOTError):
    """Homotopy continuation exhausted its schedule.

    ``last_alpha`` is the largest homotopy level that was solved successfully,
    ``pairs`` lists failing ``(i, j)`` cost-matrix entries when raised from
    matrix assembly.
    """

    def __init__(self, message: str, last_alpha: float = 0.0, pairs=None):
        self.last_alpha = last_alpha
        self.pairs = list(pairs or [])
        super().__init__(message)


class ConfigError(GeodesicOTError, ValueError):
    """Problem configuration failed validation; ``path`` names the field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
