"""Stochastic interpolants, mimicking drifts, and the iterative fitting loops.

In the linear-Gaussian regime every object here is exact: the interpolant
triple (Y_0, Y_t, Y_T) is an explicit Gaussian, the mimicking drift is an
affine map obtained by conditioning that Gaussian, and the projection of a
coupling onto Markov diffusions reduces to integrating the closed moment
ODEs of the frozen-initial-state augmented system

    d/dt m_t      = A_t m_t + b_t
    d/dt Sig_0t   = Sig_0t A_t^T
    d/dt Sig_tt   = A_t Sig_tt + Sig_tt A_t^T + 2 Id

with classic fourth-order Runge-Kutta.  The drift coefficient A_t stays
bounded up to the horizon but its evaluation suffers catastrophic
cancellation as t -> T, so integration stops at T - eps and the last sliver
is bridged by the constant-coefficient closed form with coefficients frozen
at the midpoint T - eps/2; the terminal marginal block is then replaced by
the coupling's exact terminal moments, which the projection preserves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (
    InvalidInitialCoupling,
    InvalidTimeOrder,
    MarginalViolation,
    OdeBlowup,
)
from .gaussian import (
    GaussianCoupling,
    GaussianDist,
    _conditional_map,
    coupling_marginal_error,
    kl_coupling,
    sinkhorn_bridge,
)
from .rates import RateBound, strong_rate
from .reference import ReferenceProcess, bridge_conditional, score_fields, structural_constants

log = logging.getLogger("imf_bridge")

BLOWUP_LIMIT = 1e12


@dataclass(frozen=True)
class AffineDrift:
    """Time slice of an affine vector field y -> A y + b."""

    t: float
    A: np.ndarray
    b: np.ndarray

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(y, dtype=float) + self.b


@dataclass(frozen=True)
class InterpolantTriple:
    """Joint Gaussian of (Y_0, Y_t, Y_T); endpoint blocks equal the coupling."""

    joint: GaussianDist
    t: float

    @property
    def dim(self) -> int:
        return self.joint.dim // 3

    def marginal_t(self) -> GaussianDist:
        d = self.dim
        return GaussianDist(mean=self.joint.mean[d : 2 * d], cov=self.joint.cov[d : 2 * d, d : 2 * d])


@dataclass(frozen=True)
class OdeOptions:
    """Moment-integration controls.

    ``eps`` defaults to 1e-6 * T at the point of use; ``steps`` counts RK4
    intervals, ninety percent uniform on [0, 0.9 T] and the rest geometric
    down to T - eps.
    """

    steps: int = 2048
    eps: float | None = None
    marginal_tol: float = 1e-6


@dataclass(frozen=True)
class IterationRecord:
    """One row of an iterative-fitting trace.

    ``marginal_error`` is the initial coupling's marginal mismatch at n = 0
    and, for n >= 1, the integrator's terminal-marginal residual measured
    before the exact-moment replacement (the output coupling itself carries
    the target marginals exactly).
    """

    n: int
    coupling: GaussianCoupling
    kl_to_star: float
    ratio: float | None
    bound: float
    marginal_error: float


@dataclass(frozen=True)
class IMFTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    star: GaussianCoupling | None = None
    rate_bound: RateBound | None = None


def interpolant_triple(pi: GaussianCoupling, ref: ReferenceProcess, T: float, t: float) -> InterpolantTriple:
    """Joint law of (Y_0, Y_t, Y_T): endpoints from pi, interior from the bridge."""
    if not (0.0 < t < T):
        raise InvalidTimeOrder(f"need 0 < t < T, got t={t}, T={T}")
    bc = bridge_conditional(ref, t, T)
    d = pi.dim
    lift = np.zeros((3 * d, 2 * d))
    lift[:d, :d] = np.eye(d)
    lift[d : 2 * d, :d] = bc.M0
    lift[d : 2 * d, d:] = bc.MT
    lift[2 * d :, d:] = np.eye(d)
    mean = lift @ pi.mean
    cov = lift @ pi.cov @ lift.T
    cov[d : 2 * d, d : 2 * d] += bc.S
    return InterpolantTriple(joint=GaussianDist(mean=mean, cov=cov), t=t)


def time_marginal(pi: GaussianCoupling, ref: ReferenceProcess, T: float, t: float) -> GaussianDist:
    """Law of Y_t under the interpolant built on pi (endpoints included)."""
    if t == 0.0:
        return pi.initial_marginal()
    if t == T:
        return pi.terminal_marginal()
    return interpolant_triple(pi, ref, T, t).marginal_t()


def mimicking_drift(pi: GaussianCoupling, ref: ReferenceProcess, T: float, t: float) -> AffineDrift:
    """Forward drift f_t(y): doubled transition score at (y, E[Y_T | Y_t = y])
    minus the potential gradient.  Affine because all laws are Gaussian."""
    if not (0.0 <= t < T):
        raise InvalidTimeOrder(f"need 0 <= t < T, got t={t}, T={T}")
    sf = score_fields(ref, t, T).forward
    d = pi.dim
    if t == 0.0:
        K, c, _ = _conditional_map(pi.mean, pi.cov, np.arange(d, 2 * d), np.arange(d))
    else:
        trip = interpolant_triple(pi, ref, T, t)
        K, c, _ = _conditional_map(
            trip.joint.mean, trip.joint.cov, np.arange(2 * d, 3 * d), np.arange(d, 2 * d)
        )
    G = ref.grad_potential_matrix()
    return AffineDrift(t=t, A=sf.C_first + sf.C_second @ K - G, b=sf.C_second @ c)


def backward_drift(pi: GaussianCoupling, ref: ReferenceProcess, T: float, t: float) -> AffineDrift:
    """Time-reversed drift g_t(y): doubled backward score at
    (E[Y_0 | Y_{T-t} = y], y) plus the potential gradient."""
    if not (0.0 <= t < T):
        raise InvalidTimeOrder(f"need 0 <= t < T, got t={t}, T={T}")
    sb = score_fields(ref, t, T).backward
    d = pi.dim
    if t == 0.0:
        K, c, _ = _conditional_map(pi.mean, pi.cov, np.arange(d), np.arange(d, 2 * d))
    else:
        trip = interpolant_triple(pi, ref, T, T - t)
        K, c, _ = _conditional_map(
            trip.joint.mean, trip.joint.cov, np.arange(d), np.arange(d, 2 * d)
        )
    G = ref.grad_potential_matrix()
    return AffineDrift(t=t, A=sb.C_first @ K + sb.C_second + G, b=sb.C_first @ c)


def _time_grid(T: float, steps: int, eps: float) -> np.ndarray:
    """steps intervals: uniform on [0, 0.9 T], geometric on [0.9 T, T - eps]."""
    n_uni = min(int(round(0.9 * steps)), steps - 1)
    n_geo = steps - n_uni
    uni = np.linspace(0.0, 0.9 * T, n_uni + 1)
    rho = (eps / (0.1 * T)) ** (1.0 / n_geo)
    geo = T - 0.1 * T * rho ** np.arange(1, n_geo + 1)
    grid = np.concatenate([uni, geo])
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("degenerate time grid; increase steps or eps")
    return grid


def _validate_opts(opts: OdeOptions, T: float) -> tuple[int, float, float]:
    if opts.steps < 100:
        raise ValueError(f"steps must be at least 100, got {opts.steps}")
    eps = 1e-6 * T if opts.eps is None else opts.eps
    if not (0.0 < eps < T / 2.0):
        raise ValueError(f"eps must lie in (0, T/2), got {eps}")
    if opts.marginal_tol <= 0.0:
        raise ValueError("marginal_tol must be positive")
    return opts.steps, eps, opts.marginal_tol


def _integrate_moments(drift_at, init: GaussianDist, T: float, steps: int, eps: float):
    """RK4 sweep of (m_t, Sig_0t, Sig_tt) over the refined grid up to T - eps,
    then the frozen-midpoint closed form across the last sliver.

    Returns the extrapolated terminal mean, cross-covariance and covariance.
    """
    grid = _time_grid(T, steps, eps)
    coeffs = {}

    def coeff(t: float):
        if t not in coeffs:
            dr = drift_at(t)
            coeffs[t] = (dr.A, dr.b)
        return coeffs[t]

    d = init.dim
    m = init.mean.copy()
    C = init.cov.copy()  # Cov(frozen initial state, current state)
    V = init.cov.copy()

    def rhs(t, m, C, V):
        A, b = coeff(t)
        return A @ m + b, C @ A.T, A @ V + V @ A.T + 2.0 * np.eye(d)

    for i in range(grid.size - 1):
        t0, t1 = grid[i], grid[i + 1]
        h = t1 - t0
        tm = t0 + 0.5 * h
        k1 = rhs(t0, m, C, V)
        k2 = rhs(tm, m + 0.5 * h * k1[0], C + 0.5 * h * k1[1], V + 0.5 * h * k1[2])
        k3 = rhs(tm, m + 0.5 * h * k2[0], C + 0.5 * h * k2[1], V + 0.5 * h * k2[2])
        k4 = rhs(t1, m + h * k3[0], C + h * k3[1], V + h * k3[2])
        m = m + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        C = C + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        V = V + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        V = 0.5 * (V + V.T)
        scale = max(np.abs(m).max(), np.abs(C).max(), np.abs(V).max())
        if not np.isfinite(scale) or scale > BLOWUP_LIMIT:
            raise OdeBlowup(f"moment magnitude {scale:g} at t={t1:g}")

    # last sliver [T - eps, T]: constant-coefficient solution, coefficients
    # frozen at the midpoint (second-order accurate in eps)
    A, b = coeff(T - 0.5 * eps)
    Phi = expm(eps * A)
    eA = eps * A
    int_exp = eps * (np.eye(d) + 0.5 * eA + eA @ eA / 6.0)
    m = Phi @ m + int_exp @ b
    C = C @ Phi.T
    V = Phi @ V @ Phi.T + 2.0 * (eps * np.eye(d) + 0.5 * eps**2 * (A + A.T))
    return m, C, 0.5 * (V + V.T)


def _project(
    pi: GaussianCoupling,
    ref: ReferenceProcess,
    T: float,
    opts: OdeOptions,
    backward: bool = False,
):
    """One Markovian projection of pi; returns (coupling, terminal residual).

    Forward: integrate from the initial marginal under the mimicking drift;
    backward: integrate from the terminal marginal under the reversed drift
    and swap the output blocks back into (initial, terminal) order.
    """
    steps, eps, tol = _validate_opts(opts, T)
    if backward:
        init, target = pi.terminal_marginal(), pi.initial_marginal()
        drift_at = lambda s: backward_drift(pi, ref, T, s)
    else:
        init, target = pi.initial_marginal(), pi.terminal_marginal()
        drift_at = lambda s: mimicking_drift(pi, ref, T, s)
    m_end, C_end, V_end = _integrate_moments(drift_at, init, T, steps, eps)
    residual = float(max(np.abs(m_end - target.mean).max(), np.abs(V_end - target.cov).max()))
    if residual > tol:
        raise MarginalViolation(
            f"terminal marginal residual {residual:g} exceeds tolerance {tol:g}"
        )
    out = GaussianCoupling.from_blocks(init.mean, target.mean, init.cov, C_end, target.cov)
    if backward:
        out = out.swapped()
    log.debug("projection done (backward=%s): residual=%.3e", backward, residual)
    return out, residual


def markovian_projection(
    pi: GaussianCoupling, ref: ReferenceProcess, T: float, opts: OdeOptions | None = None
) -> GaussianCoupling:
    """Endpoint coupling of the Markov diffusion mimicking the interpolant on pi.

    Output marginals equal pi's exactly (the integrated terminal block is
    checked against them to ``opts.marginal_tol`` and then replaced)."""
    coupling, _ = _project(pi, ref, T, opts or OdeOptions())
    return coupling


def backward_markovian_projection(
    pi: GaussianCoupling, ref: ReferenceProcess, T: float, opts: OdeOptions | None = None
) -> GaussianCoupling:
    """Projection through the time-reversed diffusion, started at the terminal law."""
    coupling, _ = _project(pi, ref, T, opts or OdeOptions(), backward=True)
    return coupling


def _gaussian_curvature(dist: GaussianDist) -> float:
    """Smallest eigenvalue of the precision matrix (exact for Gaussians)."""
    return 1.0 / float(np.linalg.eigvalsh(dist.cov).max())


def _run_loop(
    pi0: GaussianCoupling,
    mu: GaussianDist,
    nu: GaussianDist,
    ref: ReferenceProcess,
    T: float,
    n: int,
    opts: OdeOptions,
    alternate: bool,
    star_tol: float,
    star_max_iter: int,
) -> IMFTrace:
    if n < 1:
        raise ValueError(f"need at least one iteration, got n={n}")
    init_err = coupling_marginal_error(pi0, mu, nu)
    if init_err > 1e-8:
        raise InvalidInitialCoupling(
            f"initial coupling marginal error {init_err:g} exceeds 1e-8"
        )
    star = sinkhorn_bridge(mu, nu, ref, T, tol=star_tol, max_iter=star_max_iter).coupling
    consts = structural_constants(ref, T)
    bound = strong_rate(
        _gaussian_curvature(mu), _gaussian_curvature(nu),
        float("inf"), float("inf"), consts.alpha, consts.L_U, T,
    )
    kl0 = kl_coupling(pi0, star)
    records = [
        IterationRecord(n=0, coupling=pi0, kl_to_star=kl0, ratio=None, bound=kl0, marginal_error=init_err)
    ]
    pi = pi0
    prev_kl = kl0
    for k in range(1, n + 1):
        go_backward = alternate and (k % 2 == 0)
        pi, residual = _project(pi, ref, T, opts, backward=go_backward)
        kl = kl_coupling(pi, star)
        records.append(
            IterationRecord(
                n=k,
                coupling=pi,
                kl_to_star=kl,
                ratio=(kl / prev_kl) if prev_kl > 0.0 else None,
                bound=bound.rate**k * kl0,
                marginal_error=residual,
            )
        )
        log.info("iteration %d: kl=%.6e residual=%.2e", k, kl, residual)
        prev_kl = kl
    return IMFTrace(iterations=records, star=star, rate_bound=bound)


def imf_run(
    pi0: GaussianCoupling,
    mu: GaussianDist,
    nu: GaussianDist,
    ref: ReferenceProcess,
    T: float,
    n: int,
    opts: OdeOptions | None = None,
    star_tol: float = 1e-12,
    star_max_iter: int = 1000,
) -> IMFTrace:
    """n forward projection steps from pi0, traced against the exact bridge."""
    return _run_loop(pi0, mu, nu, ref, T, n, opts or OdeOptions(), False, star_tol, star_max_iter)


def dsbm_run(
    pi0: GaussianCoupling,
    mu: GaussianDist,
    nu: GaussianDist,
    ref: ReferenceProcess,
    T: float,
    n: int,
    opts: OdeOptions | None = None,
    star_tol: float = 1e-12,
    star_max_iter: int = 1000,
) -> IMFTrace:
    """Like imf_run but alternating forward (odd) and backward (even) steps,
    with exact closed-form drifts standing in for the regression stage."""
    return _run_loop(pi0, mu, nu, ref, T, n, opts or OdeOptions(), True, star_tol, star_max_iter)
