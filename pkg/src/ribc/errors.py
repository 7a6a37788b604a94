"""Exception types shared across the toolkit."""


class RibcError(Exception):
    """Base class for all toolkit errors."""


class InputError(RibcError):
    """Malformed or dimensionally inconsistent input data."""


class DomainError(RibcError):
    """A point or set lies outside the domain an operation requires."""


class PreconditionError(RibcError):
    """A mathematical precondition (controllability, definiteness, ...) fails."""


class NumericalError(RibcError):
    """An iterative routine failed to converge or a computed result failed
    its own verification."""


class ConstructionError(RibcError):
    """No invariant candidate set could be built."""


class PlanError(RibcError):
    """Steering plan assembly failed; carries the violating phase name."""

    def __init__(self, phase, message):
        super().__init__("%s: %s" % (phase, message))
        self.phase = phase


class SimulationError(RibcError):
    """Simulation left the domain of a control law."""
