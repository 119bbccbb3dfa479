"""Exception taxonomy shared by all modules.

Exit-code mapping used by the CLI: input errors -> 2, numeric failures -> 3,
gap / invariant violations -> 4.
"""


class MongeRaysError(Exception):
    """Base class for all library errors."""


# ---- input errors (CLI exit code 2) ----------------------------------------

class InputError(MongeRaysError):
    pass


class AsymmetricDistance(InputError):
    pass


class TriangleViolation(InputError):
    """Carries the worst offending triple as (x, z, y, defect)."""

    def __init__(self, triple, defect):
        self.triple = triple
        self.defect = defect
        super().__init__(
            f"triangle inequality violated at {triple}: defect {defect:.3e}"
        )


class ZeroMeasure(InputError):
    pass


class BadResolution(InputError):
    pass


class Infeasible(InputError):
    pass


class Disconnected(InputError):
    pass


# ---- numeric failures (CLI exit code 3) ------------------------------------

class NumericError(MongeRaysError):
    pass


class NumericFailure(NumericError):
    pass


class ClosureInflation(NumericError):
    pass


class TransitivityFailure(NumericError):
    """Carries the offending triple (x, z, y)."""

    def __init__(self, triple):
        self.triple = triple
        super().__init__(f"transitivity fails at triple {triple}")


class NotAChain(NumericError):
    pass


class EmptyLevelSet(NumericError):
    pass


class DomainError(NumericError):
    pass


# ---- invariant violations (CLI exit code 4) --------------------------------

class InvariantViolation(MongeRaysError):
    pass


class LeakOutsideTe(InvariantViolation):
    pass


class MassOffRays(InvariantViolation):
    pass


class PushforwardMismatch(InvariantViolation):
    pass


class GapExceeded(InvariantViolation):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InputError):
        return 2
    if isinstance(exc, NumericError):
        return 3
    if isinstance(exc, InvariantViolation):
        return 4
    return 1
