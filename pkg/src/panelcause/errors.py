"""Exception hierarchy shared by every module."""


class CausalError(Exception):
    """Base class for all errors raised by panelcause."""


class ConfigError(CausalError, ValueError):
    """Invalid configuration document or run settings."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


# -- ingestion ---------------------------------------------------------------

class SchemaMismatch(CausalError, ValueError):
    pass


class MissingCell(CausalError, ValueError):
    def __init__(self, unit, time):
        self.unit, self.time = unit, time
        super().__init__(f"no row for unit {unit!r} at time {time}")


class DuplicateRow(CausalError, ValueError):
    def __init__(self, unit, time):
        self.unit, self.time = unit, time
        super().__init__(f"duplicate row for unit {unit!r} at time {time}")


class UnknownArmCode(CausalError, ValueError):
    pass


class UnknownUnit(CausalError, ValueError):
    pass


class SelfLoop(CausalError, ValueError):
    pass


class PartialMapping(CausalError, ValueError):
    pass


# -- estimation --------------------------------------------------------------

class SingleClass(CausalError, ValueError):
    pass


class SingleArm(CausalError, ValueError):
    pass


class DegenerateVariance(CausalError, ValueError):
    pass


class EmptyResult(CausalError, ValueError):
    pass


class CannotStratify(CausalError, ValueError):
    pass


class AllWeightsZero(CausalError, ValueError):
    pass


class RankDeficient(CausalError, ValueError):
    pass


class NoConvergence(CausalError, RuntimeError):
    pass


class NoWithinVariation(CausalError, ValueError):
    pass


class EmptyAfterIsolationFilter(CausalError, ValueError):
    pass


class IsolatedOnlyNetwork(CausalError, ValueError):
    pass
