"""Error types raised by passmat."""


class PassmatError(Exception):
    """Base class for all passmat errors."""


class InputError(PassmatError, ValueError):
    """Invalid user input (maps to CLI exit code 1)."""


class NumericalError(PassmatError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


# demand
class NonPositivePrice(InputError):
    pass


class OutOfDomain(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class UnsupportedDemand(InputError):
    pass


class QuadratureUnderflow(NumericalError):
    pass


class SingularOwnSlope(NumericalError):
    pass


class ZeroDenominator(NumericalError):
    pass


# market
class InvalidPartition(InputError):
    pass


class IndexOutOfRange(InputError):
    pass


# equilibrium
class NoConvergence(NumericalError):
    pass


class DomainExhausted(NumericalError):
    pass


# pass-through
class SingularA(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class BoundInapplicable(NumericalError):
    pass


class SingularBlock(NumericalError):
    pass


class RegularityViolation(NumericalError):
    pass


class ZeroWeight(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


# asymptotics
class NotVanishing(NumericalError):
    pass


class NonConvergent(NumericalError):
    pass


class DegenerateAids(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class GridOutOfRange(InputError):
    pass


class SingularNestBlock(NumericalError):
    pass


class SingularJStar(NumericalError):
    pass


# applications
class NonPositivePriceOrCost(InputError):
    pass


class SingularLambdaPre(NumericalError):
    pass
