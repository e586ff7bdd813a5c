"""Exception types shared across the package."""


class CornerRayError(Exception):
    """Base class for all package errors."""


class ExprParseError(CornerRayError):
    """Malformed coefficient or symbol expression."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at column {position + 1})"
        super().__init__(message)


class NonDifferentiable(CornerRayError):
    """Expression not differentiable at the requested point."""


class OutOfDomain(CornerRayError):
    """Base point outside the chart box."""


class NotPositiveDefinite(CornerRayError):
    """Metric coefficient matrix failed a positive-definiteness check."""


class ChartValidationError(CornerRayError):
    """Chart rejected during construction-time validation."""


class ChartMismatch(CornerRayError):
    """Operation mixing points from different charts."""


class InteriorPoint(CornerRayError):
    """Boundary operation applied to a point with empty face."""


class EllipticFace(CornerRayError):
    """No real lifts over this compressed point."""


class NotHyperbolic(CornerRayError):
    """Reflection requested at a non-hyperbolic point."""


class NoOutgoingLift(CornerRayError):
    """Every sampled lift fails the strict leaving condition."""


class NotGlancing(CornerRayError):
    """Gliding-flow operation applied away from the glancing set."""


class CornerGlancing(CornerRayError):
    """Glancing point over a face of codimension >= 2."""


class StepFailure(CornerRayError):
    """Adaptive integrator could not meet its tolerances."""


class DegenerateVelocity(CornerRayError):
    """Hamilton vector field numerically zero at the start point."""


class OutOfRange(CornerRayError):
    """Sample parameter outside the ray's parameter interval."""


class NotAnEvent(CornerRayError):
    """Event index does not name an event of the requested kind."""


class EmptyFamily(CornerRayError):
    """Ray family empty after filtering to the compact box."""


class MismatchedIntervals(CornerRayError):
    """Ray family members do not share the required parameter interval."""


class EpsilonTooSmall(CornerRayError):
    """Escape-function parameter below the computed positivity threshold."""

    def __init__(self, epsilon, threshold):
        self.epsilon = epsilon
        self.threshold = threshold
        super().__init__(
            f"epsilon={epsilon:g} is below the positivity threshold {threshold:g}"
        )


class EmptySupport(CornerRayError):
    """No sampled characteristic point landed in the symbol support."""


class EmptyGrid(CornerRayError):
    """Sampling grid produced no admissible points."""


class NotFlat(CornerRayError):
    """Flat-billiard oracle applied to a non-flat chart."""


class ScenarioError(CornerRayError):
    """Scenario file failed validation; message carries the offending key."""
