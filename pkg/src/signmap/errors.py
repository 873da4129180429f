"""Exception and warning types raised across the package."""


class SignmapError(Exception):
    """Base class for all package errors."""


# geometry / camera
class NonPositiveDepth(SignmapError, ValueError):
    pass


class InvalidIntrinsics(SignmapError, ValueError):
    pass


class InvalidPerturbation(InvalidIntrinsics):
    pass


class NoTurnEstimates(SignmapError):
    pass


# trajectory
class DegenerateConfiguration(SignmapError):
    pass


class InsufficientOverlap(SignmapError):
    pass


# approach A
class EmptyTrack(SignmapError):
    pass


class DegenerateRays(SignmapError):
    pass


class BehindCameraInit(SignmapError):
    pass


class NonConvergenceWarning(UserWarning):
    pass


# approach B
class StationaryFrame(SignmapError):
    pass


class InvalidDepthSample(SignmapError):
    pass


class NoValidHypotheses(SignmapError):
    pass


# fusion / pipeline
class NoCalibrationAvailable(SignmapError):
    pass


class InfeasibleSpec(SignmapError):
    pass


class ParseError(SignmapError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class FrameMismatch(SignmapError):
    def __init__(self, message, frame_ids=()):
        self.frame_ids = sorted(set(frame_ids))
        super().__init__(f"{message}: {self.frame_ids}")
