"""Exception hierarchy shared by every hlamkit module."""


class HlamError(Exception):
    """Base class for all hlamkit errors."""


class GenerationError(HlamError):
    """The requested grid cannot be represented (row or nonzero count overflow)."""


class ContractViolation(HlamError, ValueError):
    """A kernel or runtime precondition was violated by the caller."""


class PlanningError(HlamError, ValueError):
    """A rank or task decomposition cannot be built for the given inputs."""


class SchedulingError(HlamError):
    """The task graph is malformed (e.g. it contains a cycle)."""


class FabricError(HlamError):
    """A simulated channel or collective failed, or the fabric was poisoned."""


class ProtocolError(FabricError):
    """Ranks disagreed on a communication protocol; raised by the deadlock detector."""


class SetupError(HlamError, ValueError):
    """A solver cannot start on the given system (e.g. a zero diagonal)."""


class NumericalBreakdown(HlamError, ArithmeticError):
    """A Krylov recurrence hit a zero (or vanishing) denominator."""
