"""Exception hierarchy shared by all redshard modules."""


class RedshardError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpec(RedshardError, ValueError):
    """A distribution, workload or simulation parameter violates its invariants."""


class ZeroTailProbability(RedshardError, ValueError):
    pass


class UnsupportedAnalytic(RedshardError):
    """No closed form is available for the requested quantity."""


class EmptyWorkload(RedshardError, ValueError):
    pass


class IllegalDirective(RedshardError):
    """A policy emitted a directive the engine cannot apply."""


class WrongWorkload(RedshardError):
    """A scripted policy was run on a workload it was not written for."""


class EventCapExceeded(RedshardError):
    pass


class StalledSimulation(RedshardError):
    """Requests remain unfinished but no event is pending."""


class IncompleteTrace(RedshardError):
    pass


class UnsupportedSetting(RedshardError):
    pass


class DistMismatch(RedshardError):
    """The coupling construction requires exponential downloading times."""


class MisalignedHistories(RedshardError):
    pass


class PreconditionViolated(RedshardError):
    pass


class ConfigError(RedshardError):
    """Experiment configuration is malformed; the message names the field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
