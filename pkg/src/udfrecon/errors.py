"""Exception hierarchy shared by every module."""


class ReconError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class EmptyInput(ReconError):
    pass


class InvalidK(ReconError):
    pass


class DegenerateExtent(ReconError):
    pass


class InvalidPose(ReconError):
    pass


class DegenerateGradient(ReconError):
    pass


class NumericalOverflow(ReconError):
    pass


class UnsupportedVersion(ReconError):
    pass


class CorruptCheckpoint(ReconError):
    pass


class EmptyBatch(ReconError):
    pass


class EmptySurface(ReconError):
    pass


class NotOpenShape(ReconError):
    pass


class EmptySweep(ReconError):
    pass


class ConfigError(ReconError):
    """Bad or unknown configuration keys (CLI exit code 2)."""
