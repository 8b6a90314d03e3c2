"""Exception hierarchy shared across the package."""


class IterGroundError(Exception):
    """Base class for all package errors."""


class GeometryError(IterGroundError):
    pass


class ViewportOutOfBounds(GeometryError):
    pass


class GeometryDegenerate(GeometryError):
    pass


class BackendError(IterGroundError):
    """Raised by grounding backends.

    ``iteration_index`` is filled in by the pipeline when the failure
    happens inside a narrowing loop.
    """

    iteration_index: int | None = None


class UnparseableReply(BackendError):
    pass


class BackendUnavailable(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class MissingGroundTruth(BackendError):
    pass


class DatasetError(IterGroundError):
    pass


class ManifestNotFound(DatasetError):
    pass


class MalformedRecord(DatasetError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ImageMissing(DatasetError):
    pass


class DegenerateBBox(DatasetError):
    pass


class DimsMismatch(IterGroundError):
    pass


class ElementsDontFit(IterGroundError):
    pass
