"""Schrodinger-bridge numerics toolkit.

Exact linear-Gaussian machinery for iterative bridge fitting (forward and
time-reversed Markovian projections), a Sinkhorn oracle for the static
bridge coupling, particle-level cross-checks, and the scalar contraction-
rate calculators that bound the loop's KL decay.
"""

from .errors import (
    DegenerateWeights,
    DimensionMismatch,
    FixedPointNotFound,
    ImfBridgeError,
    InvalidAlpha,
    InvalidInitialCoupling,
    InvalidTimeOrder,
    MarginalViolation,
    NoConvergence,
    NonFiniteHessian,
    NonSPDMatrix,
    OdeBlowup,
    SearchBoxTooSmall,
    SingularBlock,
    TooFewParticles,
)
from .gaussian import (
    GaussianCoupling,
    GaussianDist,
    SinkhornReport,
    condition,
    coupling_marginal_error,
    kl_coupling,
    kl_gaussian,
    sinkhorn_bridge,
)
from .projection import (
    AffineDrift,
    IMFTrace,
    InterpolantTriple,
    IterationRecord,
    OdeOptions,
    backward_drift,
    backward_markovian_projection,
    dsbm_run,
    imf_run,
    interpolant_triple,
    markovian_projection,
    mimicking_drift,
    time_marginal,
)
from .rates import (
    ContractionFactor,
    ConvexityProfile,
    RateBound,
    SearchBox,
    contraction_factor,
    hessian_bounds,
    kappa_profile,
    lsi_t2_constant,
    strong_rate,
    theta,
    weak_rate,
)
from .reference import (
    BridgeConditional,
    GaussianMap,
    ReferenceKind,
    ReferenceProcess,
    ScoreFields,
    StructuralConstants,
    bridge_conditional,
    make_reference,
    score_fields,
    structural_constants,
    transition,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
