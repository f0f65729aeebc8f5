"""Exception hierarchy shared by all scsparc modules."""


class ScSparcError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(ScSparcError, ValueError):
    pass


class BandViolation(ScSparcError, ValueError):
    pass


class PowerMismatch(ScSparcError, ValueError):
    pass


class AsymmetricProfile(ScSparcError, ValueError):
    pass


class AsymmetricTrajectory(ScSparcError, ValueError):
    pass


class IndexOutOfRange(ScSparcError, IndexError):
    pass


class RateInfeasible(ScSparcError, ArithmeticError):
    """No finite column power reaches the requested f_t target."""


class NumericalDivergence(ScSparcError, ArithmeticError):
    pass


class ConfigError(ScSparcError, ValueError):
    pass
