class TubeSynthError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(TubeSynthError):
    pass


class ParseError(TubeSynthError):
    def __init__(self, message, locus=None):
        self.locus = locus
        super().__init__(f"{message} (at {locus})" if locus else message)


class ValidationError(TubeSynthError):
    def __init__(self, message, offender=None):
        self.offender = offender
        super().__init__(message)


class StructuralError(TubeSynthError):
    pass


class ParameterError(TubeSynthError):
    pass


class PreconditionError(TubeSynthError):
    pass


class NoFragmentError(TubeSynthError):
    pass


class OutOfDomainError(TubeSynthError):
    pass


class UnrealizableTripletError(TubeSynthError):
    pass


class BlockedTaskError(TubeSynthError):
    pass


class InfeasiblePaddingError(TubeSynthError):
    pass


class SynthesisError(TubeSynthError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class DomainError(TubeSynthError):
    """Normalized error outside the open interval (-1, 1)."""


class ViolationError(TubeSynthError):
    def __init__(self, message, stage=None, dimension=None, time=None, value=None):
        self.stage = stage
        self.dimension = dimension
        self.time = time
        self.value = value
        super().__init__(message)


class TubeViolationError(ViolationError):
    pass


class FunnelViolationError(ViolationError):
    pass


class NumericBlowupError(TubeSynthError):
    def __init__(self, message, stage_tag=None):
        self.stage_tag = stage_tag
        super().__init__(message)


class SimulationAborted(TubeSynthError):
    """Carries the partial trace of a run stopped by a runtime error."""

    def __init__(self, cause, trace):
        self.cause = cause
        self.trace = trace
        super().__init__(f"simulation aborted: {cause}")
