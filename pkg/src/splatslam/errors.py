"""Exception types raised across the package."""


class SplatSlamError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(SplatSlamError, ValueError):
    pass


class NonPositiveInverseDepth(SplatSlamError, ValueError):
    pass


class OutOfBounds(SplatSlamError, IndexError):
    pass


class ImageTooSmall(SplatSlamError, ValueError):
    pass


class DimensionMismatch(SplatSlamError, ValueError):
    pass


class TooManyLevels(SplatSlamError, ValueError):
    pass


class PointBehindCamera(SplatSlamError, ValueError):
    pass


class ReprojectionOutOfBounds(SplatSlamError, ValueError):
    pass


class TrackingLost(SplatSlamError, RuntimeError):
    pass


class WindowNotOverfull(SplatSlamError, ValueError):
    pass


class DivergedRefinement(SplatSlamError, RuntimeError):
    pass


class MalformedPly(SplatSlamError, ValueError):
    pass


class VersionMismatch(SplatSlamError, ValueError):
    pass


class EmptyMap(SplatSlamError, RuntimeError):
    pass


class MismatchedSnapshot(SplatSlamError, ValueError):
    pass


class TooFewPoses(SplatSlamError, ValueError):
    pass


class MissingIndexFile(SplatSlamError, FileNotFoundError):
    pass


class UnparseableLine(SplatSlamError, ValueError):
    def __init__(self, path, line_no: int, text: str):
        super().__init__(f"{path}:{line_no}: cannot parse {text!r}")
        self.path = path
        self.line_no = line_no
        self.text = text


class UnsortedTimestamps(SplatSlamError, ValueError):
    pass
