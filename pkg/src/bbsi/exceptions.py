"""Exception types raised across the package."""


class BBSIError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(BBSIError, ValueError):
    """A layout, block or matrix has inconsistent or invalid dimensions."""


class InvalidPartitionError(BBSIError, ValueError):
    """A domain partition or plan cannot be applied to the given layer count."""


class InvalidPlanError(InvalidPartitionError):
    """A DDRGF domain plan is malformed or exhausts the available layers."""


class SingularMatrixError(BBSIError, ArithmeticError):
    """A factorization hit a negligible pivot.

    Attributes
    ----------
    layer : int or None
        Global (0-based) layer index of the failing Schur pivot, when known.
    level : int or None
        DDRGF recursion level (1-based) where the failure happened.
    subdomain : int or None
        Index of the D2 sub-domain where the failure happened.
    """

    def __init__(self, message, layer=None, level=None, subdomain=None):
        super().__init__(message)
        self.layer = layer
        self.level = level
        self.subdomain = subdomain


class OracleTooLargeError(BBSIError, ValueError):
    """Dense validation was requested for a matrix above the oracle cap."""


class FormatError(BBSIError, ValueError):
    """A ``.bbm`` file is malformed."""
