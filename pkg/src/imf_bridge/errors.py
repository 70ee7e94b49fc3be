"""Exception types shared across the package."""


class ImfBridgeError(Exception):
    """Base class for all package-specific errors."""


class NonSPDMatrix(ImfBridgeError):
    """A matrix required to be symmetric positive-definite is not."""


class DimensionMismatch(ImfBridgeError):
    """Operands have incompatible dimensions."""


class InvalidTimeOrder(ImfBridgeError):
    """Time arguments violate the required ordering (e.g. t <= s)."""


class SingularBlock(ImfBridgeError):
    """An observed covariance block is numerically singular."""


class NoConvergence(ImfBridgeError):
    """An iterative solver exhausted its iteration budget."""


class OdeBlowup(ImfBridgeError):
    """Moment integration produced non-finite or absurdly large values."""


class MarginalViolation(ImfBridgeError):
    """Integrated terminal marginal drifted beyond the requested tolerance."""


class InvalidInitialCoupling(ImfBridgeError):
    """Initial coupling does not match the prescribed marginals."""


class DegenerateWeights(ImfBridgeError):
    """Importance weights collapsed (effective sample size too small)."""


class TooFewParticles(ImfBridgeError):
    """Ensemble too small for the requested statistic."""


class FixedPointNotFound(ImfBridgeError):
    """Fixed-point bracket contains no solution."""


class InvalidAlpha(ImfBridgeError):
    """Curvature parameter out of the admissible range."""


class SearchBoxTooSmall(ImfBridgeError):
    """Profile minimizers keep landing on the search-box boundary."""


class NonFiniteHessian(ImfBridgeError):
    """Finite-difference Hessian evaluation produced non-finite entries."""
