from typing import Any, Optional


class BaseAppException(Exception):
    """
    Base exception for the entire project.
    Used to catch domain-specific errors.
    """
    def __init__(
        self,
        message: str,
        payload: Optional[dict[str, Any]] = None
    ):
        super().__init__(message)
        self.message = message
        self.payload = payload or {}

# --- Client Errors (bad input) ---

class ClientError(BaseAppException):
    """Errors caused by incorrect user input.
    """
    pass

class ValidationError(ClientError):
    """Raised when data does not conform to the expected format."""
    pass

class ConfigInvalid(ValidationError):
    """Raised when a suite configuration fails validation. Payload holds the field messages."""
    pass

# --- Root systems and groups ---

class RootSystemError(BaseAppException):
    """Base error for all issues with root systems and reflection groups."""
    pass

class NormViolation(RootSystemError, ValidationError):
    """Raised when a root does not have squared norm 2."""
    pass

class ParallelViolation(RootSystemError, ValidationError):
    """Raised when the roots parallel to a root are not exactly {alpha, -alpha}."""
    pass

class ClosureViolation(RootSystemError, ValidationError):
    """Raised when a root reflection does not map the root set onto itself."""
    pass

class ZeroRoot(RootSystemError, ValidationError):
    """Raised when a reflection is requested about the zero vector."""
    pass

class OrderCapExceeded(RootSystemError):
    """Raised when group closure grows past the configured maximal order."""
    pass

# --- Grids and operators ---

class GridError(BaseAppException):
    """Base error for discretization problems."""
    pass

class IncompatibleGroup(GridError, ClientError):
    """Raised when a group element does not permute the grid points."""
    pass

class GridMismatch(GridError, ClientError):
    """Raised when objects living on different grids are combined."""
    pass

class ScaleOutOfRange(GridError, ClientError):
    """Raised when a dyadic scale cannot be resolved on the grid."""
    pass

class OriginMissing(GridError, ClientError):
    """Raised when a construction needs the origin as a grid point."""
    pass

class RTooLarge(GridError, ClientError):
    """Raised when a truncation radius does not fit into the box."""
    pass

class EpsTooSmall(GridError, ClientError):
    """Raised when a mollifier radius is below the grid resolution."""
    pass

# --- Analysis preconditions ---

class AnalysisError(BaseAppException):
    """Base error for violated preconditions of the analysis operations."""
    pass

class NotInvariant(AnalysisError, ClientError):
    """Raised when a function that must be G-invariant is not."""
    pass

class MissingTildeFamily(AnalysisError, ClientError):
    """Raised when a norm needs the reproducing-formula family and none was given."""
    pass

class RangeTooNarrow(AnalysisError, ClientError):
    """Raised when the scale range is too short for the requested order M."""
    pass

class ZeroInput(AnalysisError, ClientError):
    """Raised when a relative residual is requested for the zero function."""
    pass

class LambdaTooSmall(AnalysisError, ClientError):
    """Raised when the level set of the maximal function covers the whole grid."""
    pass

class EmptyLibrary(AnalysisError, ClientError):
    """Raised when a bump library without pairs is supplied."""
    pass

# --- Numerical failures ---

class NumericalError(BaseAppException):
    """Errors indicating that an iterative numerical procedure failed."""
    pass

class NoConvergence(NumericalError):
    """Raised when an iteration stops at max_iter. Payload holds the best estimate."""
    pass

class NotContractive(NumericalError):
    """Raised when the Neumann series cannot converge. Payload holds the measured norm."""
    pass

class DegenerateNormalizer(NumericalError):
    """Raised when T_k(1) vanishes somewhere on the grid."""
    pass

# --- Output ---

class IoFailure(BaseAppException):
    """Raised when a report or dump cannot be written."""
    pass
