"""Exception types raised by the solver library."""


class EsfemError(Exception):
    """Base class for all library errors."""


class DegenerateElement(EsfemError):
    """A triangle's area fell below the degeneracy threshold."""

    def __init__(self, triangle_index, area):
        self.triangle_index = triangle_index
        self.area = area
        super().__init__(f"triangle {triangle_index} is degenerate (area={area:.3e})")


class FieldLengthMismatch(EsfemError):
    """A nodal field's length does not match the mesh's node count."""


class NonFiniteIntegrand(EsfemError):
    """A load integrand evaluated to NaN or infinity at a quadrature point."""


class DimensionMismatch(EsfemError):
    """Vector/matrix dimensions disagree."""


class OffSurface(EsfemError):
    """A point handed to a manufactured-solution evaluator is not on the expected sphere."""


class MissingExactSolution(EsfemError):
    """The problem has no manufactured solution attached."""


class EmptyTrajectory(EsfemError):
    """No states available to post-process."""


class MeshDegenerated(EsfemError):
    """The moving mesh fell below the quality abort threshold.

    Carries the failure time and the offending quality report.
    """

    def __init__(self, time, quality):
        self.time = time
        self.quality = quality
        super().__init__(
            f"mesh degenerated at t={time:.6g} "
            f"(min angle {quality.min_angle_deg:.3f} deg, min area {quality.min_area:.3e})"
        )


class LinearSolveFailure(EsfemError):
    """An iterative linear solve did not converge.

    Carries the final residual norm.
    """

    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")
