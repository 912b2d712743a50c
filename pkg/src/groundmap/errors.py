"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class SolverFailure(RuntimeError):
    """Eigensolver did not reach the requested residuals."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DegenerateLevel(RuntimeError):
    """A differential was requested at a degenerate level.

    The smooth formulas only hold on non-degenerate levels; use the one-sided
    (Dini) machinery in :mod:`groundmap.degenerate` instead.
    """

    def __init__(self, level, cluster):
        super().__init__(
            f"level {level} lies in degenerate cluster {tuple(cluster)}; "
            "use groundmap.degenerate.dini_derivatives"
        )
        self.level = level
        self.cluster = tuple(cluster)


class DegeneracyHit(RuntimeError):
    """Raised by the Kohn-Sham inversion when an iterate has a degenerate ground state."""

    def __init__(self, message, potential):
        super().__init__(message)
        self.potential = potential


class StepTooLarge(RuntimeError):
    pass


class PathFailure(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotApplicable(ValueError):
    pass
