"""Exception hierarchy.

Every error carries the module and operation that raised it so the command
line front end can name both.  Two families exist: :class:`ValidationError`
for bad inputs (exit status 1) and :class:`NumericalError` for failures of a
numerical procedure or of the structural hypotheses (exit status 2).
"""


class TurnpikeLabError(Exception):
    exit_code = 2

    def __init__(self, message, *, module="", operation=""):
        super().__init__(message)
        self.module = module
        self.operation = operation

    def __str__(self):
        msg = super().__str__()
        where = ".".join(part for part in (self.module, self.operation) if part)
        return f"[{where}] {msg}" if where else msg


class ValidationError(TurnpikeLabError, ValueError):
    exit_code = 1


class DimensionError(ValidationError):
    """Array shapes are inconsistent; ``field`` names the offending field."""

    def __init__(self, message, *, field="", **kwargs):
        super().__init__(message, **kwargs)
        self.field = field


class CoercivityError(ValidationError):
    pass


class NumericalError(TurnpikeLabError):
    exit_code = 2


class NotStabilizable(NumericalError):
    pass


class NotDetectable(NumericalError):
    pass


class HypothesesFail(NumericalError):
    pass


class StepSizeTooLarge(NumericalError):
    pass


class NonFiniteEncountered(NumericalError):
    pass


class NewtonStalled(NumericalError):
    pass


class InsufficientDecay(NumericalError):
    pass


class SingularKKT(NumericalError):
    pass


class GenerationExhausted(NumericalError):
    pass
