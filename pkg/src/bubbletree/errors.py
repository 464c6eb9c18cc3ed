"""Exception hierarchy shared by all modules."""


class BubbleTreeError(Exception):
    """Base class for every error raised by the package."""


# geometry
class SouthPole(BubbleTreeError):
    pass


class TooFarFromTarget(BubbleTreeError):
    pass


class AntipodalPoints(BubbleTreeError):
    pass


# rational maps
class Pole(BubbleTreeError):
    pass


class AllCoefficientsZero(BubbleTreeError):
    pass


# grid
class InvalidResolution(BubbleTreeError):
    pass


class NonIntegrableTail(BubbleTreeError):
    pass


# model assembly
class ScalesTooClose(BubbleTreeError):
    pass


class TubularNeighborhoodViolated(BubbleTreeError):
    pass


class PoleInDomain(BubbleTreeError):
    pass


# energies and verification
class NonTangentVariation(BubbleTreeError):
    pass


class EmptyTestSpace(BubbleTreeError):
    pass


class DegenerateDifferential(BubbleTreeError):
    pass


class AssumptionViolated(BubbleTreeError):
    pass


class NonpositiveDenominator(BubbleTreeError):
    pass


class SingularGram(BubbleTreeError):
    pass


# flow
class StepRejected(BubbleTreeError):
    pass


# configuration
class ConfigError(BubbleTreeError):
    pass
