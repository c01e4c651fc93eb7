"""Exception hierarchy shared across the package."""


class CirError(Exception):
    """Base class for every error raised by cirtrack.

    Attributes:
        step (int or None): Simulation step at which the error surfaced, when
            raised from inside a closed-loop run.
    """

    step = None


class InvalidInputError(CirError, ValueError):
    """Malformed, non-finite or dimensionally inconsistent input."""


class UnsupportedShapeError(CirError, ValueError):
    """Operation is not defined for the given system shape."""


class InfeasibleError(CirError):
    """The model does not satisfy a rank condition the operation needs."""


class ReconstructionInfeasibleError(InfeasibleError):
    """UMV gain cannot be formed: ``V^T Rt^{-1} V`` is singular (rank(CB) < p)."""


class NumericalFailureError(CirError, ArithmeticError):
    """A solve or iteration failed numerically."""


class ConfigError(CirError, ValueError):
    """Experiment configuration could not be parsed or resolved."""


class NonMinimumPhaseWarning(UserWarning):
    """Inversion-based control is running on a system whose zeros are not
    strictly inside the unit circle; bounded inputs are not guaranteed."""
