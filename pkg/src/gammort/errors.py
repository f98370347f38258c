"""Exception hierarchy shared by all gammort modules."""


class GammortError(Exception):
    """Base class for every error raised by gammort."""


# ingest
class ParseError(GammortError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKeyError(GammortError, ValueError):
    pass


class CoverageError(GammortError, ValueError):
    pass


class EmptyPanelError(GammortError, ValueError):
    pass


# covariates
class MissingYearError(GammortError, ValueError):
    pass


class MissingSegmentError(GammortError, ValueError):
    pass


class JoinError(GammortError, LookupError):
    pass


# spline basis
class RankError(GammortError, ValueError):
    pass


class DegenerateFactorError(GammortError, ValueError):
    pass


class DegenerateLevelError(GammortError, ValueError):
    pass


# engine
class SpecError(GammortError, ValueError):
    pass


class CodingError(GammortError, ValueError):
    pass


class SingularFitError(GammortError, ArithmeticError):
    def __init__(self, message, terms=()):
        self.terms = tuple(terms)
        super().__init__(message)


class ConditioningError(GammortError, ArithmeticError):
    pass


class ConvergenceError(GammortError, RuntimeError):
    def __init__(self, message, trace=()):
        self.trace = list(trace)
        super().__init__(message)


class ExcessiveTrimError(GammortError, ValueError):
    pass


# diagnostics
class UndefinedACFError(GammortError, ValueError):
    pass


# forecasting
class GapError(GammortError, ValueError):
    pass


class LevelError(GammortError, LookupError):
    pass


# baselines
class DegenerateError(GammortError, ValueError):
    pass


# evaluation
class SplitError(GammortError, ValueError):
    pass


class AlignmentError(GammortError, ValueError):
    pass


# cli / serialization
class VersionError(GammortError, ValueError):
    pass


class ConfigError(GammortError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
