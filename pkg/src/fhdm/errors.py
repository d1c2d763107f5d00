"""Exception hierarchy shared by all fhdm modules."""


class FHDMError(Exception):
    """Base class for fhdm errors."""


class ZeroVector(FHDMError, ValueError):
    pass


class ChartSingularity(FHDMError, ValueError):
    pass


class Coincident(FHDMError, ValueError):
    pass


class UnsupportedDimension(FHDMError, ValueError):
    pass


class NotPositive(FHDMError, ValueError):
    pass


class BadSmoothness(FHDMError, ValueError):
    pass


class NotCentered(FHDMError, ValueError):
    pass


class EnvelopeError(FHDMError, RuntimeError):
    pass


class SimulationTimeout(FHDMError, RuntimeError):
    """A path did not hit its stopping sphere before ``t_max``."""


class DriftBlowup(FHDMError, RuntimeError):
    """A single Euler step exceeded the allowed displacement."""


class TooManyTimeouts(FHDMError, RuntimeError):
    pass


class Diverged(FHDMError, RuntimeError):
    pass
