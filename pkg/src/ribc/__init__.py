"""Certification and controller synthesis for relaxed in-block
controllability of affine systems on polytopes."""

from .errors import (
    RibcError, InputError, DomainError, PreconditionError,
    NumericalError, ConstructionError, PlanError, SimulationError,
)

__version__ = "0.1.0"
