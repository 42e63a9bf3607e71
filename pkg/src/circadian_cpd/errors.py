"""Exception hierarchy.

Errors split into data problems (bad or empty inputs) and numerical
failures; the CLI maps the two families onto distinct exit codes.
"""


class CircadianCPDError(Exception):
    """Base class for all package errors."""


class DataError(CircadianCPDError):
    """Input data is empty, malformed or otherwise unusable."""


class NumericalError(CircadianCPDError):
    """A numerical procedure failed in a way the caller must handle."""


class EmptyDataset(DataError):
    pass


class NoNocturnalData(DataError):
    pass


class InstanceTooLarge(DataError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class DegenerateResponsibility(NumericalError):
    pass


class NumericalUnderflow(NumericalError):
    pass


class SamplerStuck(NumericalError):
    pass


class AllRunsFailed(NumericalError):
    pass


class EmptyClassWarning(UserWarning):
    """A mixture class received (almost) no responsibility mass."""
