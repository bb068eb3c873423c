"""Exception hierarchy shared by all lineloc modules."""


class LineLocError(Exception):
    """Base class for every error raised by lineloc."""


class InvalidArgumentError(LineLocError, ValueError):
    pass


class NearSingularError(LineLocError):
    """Rotation too close to pi for a well-defined logarithm."""


class AtCameraPlaneError(LineLocError):
    """Point projects with (near) zero homogeneous depth."""


class DegenerateProjectionError(LineLocError):
    pass


class ParseError(LineLocError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class NoValidResidualsError(LineLocError):
    pass


class NumericFailureError(LineLocError):
    pass


class InputOrderError(LineLocError):
    pass


class NoOverlapError(LineLocError):
    pass


class DegenerateAlignmentError(LineLocError):
    pass
