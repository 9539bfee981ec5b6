"""Exception hierarchy. Every error carries the process exit code the CLI maps it to."""


class CovisError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(CovisError):
    """Invalid input data, file content, or parameter value (exit code 2)."""

    exit_code = 2


class NumericError(CovisError):
    """Numeric failure: divergence or a sign-inconsistent fit (exit code 3)."""

    exit_code = 3


class IoError(CovisError):
    """Filesystem-level failure (exit code 4)."""

    exit_code = 4


class MissingFile(IoError):
    pass


class MalformedRecord(InputError):
    """A file record that cannot be parsed; reports path and 1-based line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class MalformedHeader(InputError):
    pass


class UnsupportedCameraModel(InputError):
    pass


class OutOfBoundsPixel(InputError):
    pass


class DuplicateSourcePixel(InputError):
    pass


class NonPositiveDepth(InputError):
    pass


class BehindCamera(InputError):
    pass


class DegenerateGeometry(InputError):
    pass


class ViewIdMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


class InconsistentN(InputError):
    pass


class OutOfBounds(InputError):
    pass


class NoCorrespondences(InputError):
    pass


class EmptyBase(InputError):
    pass


class MapViewMismatch(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class InsufficientPairs(InputError):
    pass


class FrameMismatch(InputError):
    pass


class SamplingStarvation(InputError):
    pass


class DegenerateSpec(InputError):
    pass


class NonFiniteLoss(NumericError):
    pass


class NonPositiveScale(NumericError):
    pass
