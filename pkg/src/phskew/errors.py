"""Exception types shared across the package."""


class PhskewError(Exception):
    pass


class NonUnimodular(PhskewError):
    pass


class NotAnosov(PhskewError):
    pass


class NotAnosovBase(NotAnosov):
    pass


class CentralAllUnit(PhskewError):
    pass


class MissingSplitting(PhskewError):
    pass


class InconsistentRates(PhskewError):
    pass


class RankDeficient(PhskewError):
    pass


class DimMismatch(PhskewError):
    pass


class Singular(PhskewError):
    pass


class OutOfLocalChart(PhskewError):
    pass


class RadiusTooLarge(PhskewError):
    pass


class SigmaTooLarge(PhskewError):
    pass


class NotOnLeaf(PhskewError):
    """Base points are not on a common local stable/unstable leaf."""


class NotOnUnstableLeaf(NotOnLeaf):
    pass


class NotOnStableLeaf(NotOnLeaf):
    pass


class NoConvergence(PhskewError):
    pass


class ConstructionFailed(PhskewError):
    pass


class InconclusiveResolution(PhskewError):
    pass


class OverlappingSupports(PhskewError):
    pass


class FlowStepRejected(PhskewError):
    pass


class DegenerateFit(PhskewError):
    pass


class GridTooFine(PhskewError):
    pass


class ParseError(PhskewError):
    """Input could not be parsed; carries 1-based line and column when known."""

    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
            if column is not None:
                where += f"{column}:"
        super().__init__(f"{where} {message}" if where else message)
