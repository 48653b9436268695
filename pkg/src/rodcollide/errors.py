"""Exception hierarchy shared by all rodcollide modules."""


class RodCollideError(Exception):
    """Base class for every error raised by this package."""


class DomainError(RodCollideError, ValueError):
    """Argument at or beyond a constitutive singularity."""


class BadConfig(RodCollideError, ValueError):
    """Invalid parameter, grid or run configuration."""


class UnknownPreset(BadConfig):
    pass


class InvariantViolation(RodCollideError):
    """A rod state breaks u_x > 0 or u(0) > -beta (or a guard margin)."""


class BarrierViolation(InvariantViolation):
    """A proposed step crosses a guard; the caller should shrink dt."""


class NewtonDivergence(RodCollideError):
    pass


class LinearSolveFailure(RodCollideError):
    pass


class StepFloor(RodCollideError):
    """Adaptive stepping hit dt_min without an accepted step."""

    def __init__(self, message, state=None, trajectory=None):
        super().__init__(message)
        self.state = state
        self.trajectory = trajectory


class BadTest(RodCollideError, ValueError):
    """Weak-form test function does not vanish at the final time."""


class NoBounces(RodCollideError):
    """Informational: the edge never went below the floor."""


class FormatError(RodCollideError):
    """Malformed or incompatible trajectory file."""
