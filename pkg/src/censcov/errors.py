"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: usage/configuration
problems, data problems, and numerical failures.
"""


class CensCovError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(CensCovError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class NoBracket(ConfigError):
    """Censoring target cannot be reached inside the calibration bracket."""


class DataError(CensCovError):
    """Input data is malformed or unsuitable for the requested fit."""

    exit_code = 2


class ParseError(DataError):
    """A CSV file could not be parsed."""


class TooFewComplete(DataError):
    """Not enough uncensored rows to identify the outcome model."""


class DegenerateDesign(DataError):
    """Regressor matrix is rank deficient."""


class AllCensored(DataError):
    """Too few events to fit a survival model."""


class NumericalError(CensCovError):
    """Base class for numerical failures."""

    exit_code = 3


class NonConvergence(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class UnstableDenominator(NumericalError):
    pass


class SingularMoment(NumericalError):
    pass


class SingularBread(NumericalError):
    pass


class SingularNuisanceInformation(NumericalError):
    pass


class ExtremeWeights(NumericalError):
    """Selection probabilities too close to zero for stable weighting."""
