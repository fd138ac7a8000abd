"""Exception types shared across the package."""


class PdmKwsError(Exception):
    """Base class for package-specific errors."""


class FormatError(PdmKwsError):
    """A file or container does not conform to its expected format."""


class UnsupportedFormatError(FormatError):
    """The file is well formed but uses a variant we refuse to convert."""


class ShapeError(PdmKwsError):
    """An array argument has an incompatible shape or length."""


class StateError(PdmKwsError):
    """An operation was invoked in an invalid order (e.g. backward before forward)."""


class TrainingError(PdmKwsError):
    """Training aborted (non-finite gradients or loss)."""
