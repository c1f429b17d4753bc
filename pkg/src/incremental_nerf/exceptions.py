"""Exception hierarchy shared by all modules."""


class IncrementalNerfError(Exception):
    """Base class for every error raised by this package."""


class DomainError(IncrementalNerfError, ValueError):
    """An argument lies outside the domain of the operation."""


class NotARotation(DomainError):
    """A matrix failed the orthogonality / determinant check."""


class TooSmall(DomainError):
    """An image is too small for the requested pyramid depth."""


class DimensionMismatch(DomainError):
    """Two arrays that must share a shape do not."""


class Degenerate(IncrementalNerfError, ValueError):
    """A point configuration does not determine a unique similarity."""


class NonFiniteGradient(IncrementalNerfError, FloatingPointError):
    """A gradient entry is NaN or infinite."""


class Diverged(IncrementalNerfError, FloatingPointError):
    """An optimization phase produced a non-finite loss or gradient.

    Carries the phase name, the image index being processed (if any) and
    the pyramid level so a failed run can be located in its log.
    """

    def __init__(self, message, phase=None, image_index=None, level=None):
        super().__init__(message)
        self.phase = phase
        self.image_index = image_index
        self.level = level

    def __str__(self):
        where = [f"phase={self.phase}"] if self.phase else []
        if self.image_index is not None:
            where.append(f"image={self.image_index}")
        if self.level is not None:
            where.append(f"level={self.level}")
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base


class FormatError(IncrementalNerfError, ValueError):
    """A file on disk does not follow the documented layout."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
