"""Scalar convergence-rate theory.

Contraction-rate calculators for the iterative bridge-fitting loop in the
strongly and weakly log-concave regimes, the tanh deviation-from-convexity
correction, weak convexity profiles with envelope fitting, functional
inequality constants, and finite-difference Hessian bounds for analytic
test densities.

Infinite upper curvature bounds (beta = +inf) are first-class inputs with
exact limit branches; no large-number proxies are used internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import (
    FixedPointNotFound,
    InvalidAlpha,
    NonFiniteHessian,
    SearchBoxTooSmall,
)


def theta(L: float, r: float) -> float:
    """Deviation-from-convexity correction 2 sqrt(L) tanh(r sqrt(L) / 2).

    Identically zero at L = 0 and increasing in both arguments, with
    asymptote 2 sqrt(L) as r grows.
    """
    if L < 0.0 or r < 0.0:
        raise ValueError(f"theta requires L >= 0 and r >= 0, got L={L}, r={r}")
    if L == 0.0:
        return 0.0
    root = math.sqrt(L)
    return 2.0 * root * math.tanh(0.5 * r * root)


@dataclass(frozen=True)
class RateBound:
    """Per-iteration KL contraction factor and its validity window.

    ``rate`` carries the Lipschitz constant of the reference in its
    numerator; ``variant_without_LU`` is the same quantity with that factor
    dropped.  ``valid`` means T sits above ``threshold_T`` and the rate is
    below one.
    """

    rate: float
    valid: bool
    threshold_T: float
    theorem: str
    alpha_phi: float
    alpha_psi: float
    variant_without_LU: float


@dataclass(frozen=True)
class ContractionFactor:
    """Single-step KL shrink factor of the projection map.

    ``factor`` = L_U / (2 xi T); ``statement_factor`` = 1 / (2 xi T).
    """

    factor: float
    statement_factor: float


def contraction_factor(xi: float, L_U: float, T: float) -> ContractionFactor:
    if xi <= 0.0 or L_U <= 0.0 or T <= 0.0:
        raise ValueError("xi, L_U and T must all be positive")
    return ContractionFactor(factor=L_U / (2.0 * xi * T), statement_factor=1.0 / (2.0 * xi * T))


def lsi_t2_constant(alpha_hat: float, L_hat: float) -> float:
    """Log-Sobolev (hence transport) constant from an integrated convexity profile.

    xi = 2 (alpha_hat + 1) / exp(L_hat / (1 + alpha_hat)); requires
    alpha_hat > -1 and L_hat >= 0.
    """
    if alpha_hat <= -1.0:
        raise InvalidAlpha(f"alpha_hat must exceed -1, got {alpha_hat}")
    if L_hat < 0.0:
        raise ValueError(f"L_hat must be nonnegative, got {L_hat}")
    return 2.0 * (alpha_hat + 1.0) / math.exp(L_hat / (1.0 + alpha_hat))


def _alpha_pair_strong(alpha_mu, alpha_nu, beta_mu, beta_nu, T):
    """(alpha_phi, alpha_psi) with finite-beta curvature corrections.

    alpha_phi = (alpha_mu + sqrt(alpha_mu^2 + 4 alpha_mu / (T^2 beta_nu))) / 2 - 1/T
    and symmetrically for alpha_psi with beta_mu.  beta = +inf reduces each
    to alpha - 1/T exactly.
    """
    if math.isinf(beta_nu):
        alpha_phi = alpha_mu - 1.0 / T
    else:
        alpha_phi = 0.5 * (alpha_mu + math.sqrt(alpha_mu**2 + 4.0 * alpha_mu / (T**2 * beta_nu))) - 1.0 / T
    if math.isinf(beta_mu):
        alpha_psi = alpha_nu - 1.0 / T
    else:
        alpha_psi = 0.5 * (alpha_nu + math.sqrt(alpha_nu**2 + 4.0 * alpha_nu / (T**2 * beta_mu))) - 1.0 / T
    return alpha_phi, alpha_psi


def strong_rate(
    alpha_mu: float,
    alpha_nu: float,
    beta_mu: float,
    beta_nu: float,
    alpha: float,
    L_U: float,
    T: float,
) -> RateBound:
    """Contraction rate under strong log-concavity of both marginals.

    rate = L_U / (T (alpha_phi + alpha_psi + alpha)); valid when
    T > max(1/alpha_mu, 1/alpha_nu) and the rate is below one.
    """
    if min(alpha_mu, alpha_nu, L_U, T) <= 0.0 or alpha < 0.0:
        raise ValueError("alpha_mu, alpha_nu, L_U, T must be positive and alpha >= 0")
    if beta_mu <= 0.0 or beta_nu <= 0.0:
        raise ValueError("beta bounds must be positive (possibly inf)")
    alpha_phi, alpha_psi = _alpha_pair_strong(alpha_mu, alpha_nu, beta_mu, beta_nu, T)
    denom = T * (alpha_phi + alpha_psi + alpha)
    rate = L_U / denom if denom > 0.0 else math.inf
    threshold = max(1.0 / alpha_mu, 1.0 / alpha_nu)
    theorem = "t1" if math.isinf(beta_mu) and math.isinf(beta_nu) else "t5"
    return RateBound(
        rate=rate,
        valid=bool(T > threshold and rate < 1.0),
        threshold_T=threshold,
        theorem=theorem,
        alpha_phi=alpha_phi,
        alpha_psi=alpha_psi,
        variant_without_LU=1.0 / denom if denom > 0.0 else math.inf,
    )


def _smallest_threshold_s(F: Callable[[float], float], target: float) -> float:
    """inf{s >= 0 : F(s) >= target} for F increasing with F(0) = 0."""
    hi = 1.0
    for _ in range(200):
        if F(hi) >= target:
            break
        hi *= 2.0
    else:
        raise FixedPointNotFound("threshold function never reaches the target")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if F(mid) >= target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _weak_alpha_fixed_point(alpha_self, beta_other, L_self, T):
    """Smallest fixed point of the implicit curvature equation.

    Solves  a = alpha_self - 1/T + G(a, 2) / (2 T^2)  where
    G(a, u) = inf{s >= 0 : F(a, s) >= u} and
    F(a, s) = beta_other s + s / (T (1 + T a)) + sqrt(s) theta(L_self, sqrt(s)) / (1 + T a)^2.

    With beta_other = +inf the threshold G vanishes and the fixed point is
    exactly alpha_self - 1/T.  F is increasing in s (every term is
    nonnegative and increasing), which the bisection relies on; this is
    asserted at runtime on the sampled points.
    """
    if math.isinf(beta_other):
        return alpha_self - 1.0 / T

    def G(a: float) -> float:
        def F(s: float) -> float:
            val = beta_other * s + s / (T * (1.0 + T * a)) + math.sqrt(s) * theta(L_self, math.sqrt(s)) / (1.0 + T * a) ** 2
            return val

        assert F(1.0) <= F(2.0), "threshold function must be increasing in s"
        return _smallest_threshold_s(F, 2.0)

    def H(a: float) -> float:
        return alpha_self - 1.0 / T + G(a) / (2.0 * T**2)

    lo = alpha_self - 1.0 / T
    hi = alpha_self
    if 1.0 + T * lo <= 0.0:
        raise FixedPointNotFound("bracket start yields nonpositive 1 + T*alpha")
    if H(hi) - hi > 0.0:
        raise FixedPointNotFound(
            f"no sign change of the fixed-point residual on [{lo:g}, {hi:g}]"
        )
    a = lo
    for _ in range(200):
        nxt = a + 0.5 * (H(a) - a)  # damped update, monotone from below
        if not (lo - 1e-12 <= nxt <= hi + 1e-12):
            raise FixedPointNotFound(f"iterate {nxt:g} escaped bracket [{lo:g}, {hi:g}]")
        if abs(nxt - a) < 1e-10:
            return nxt
        a = nxt
    raise FixedPointNotFound("no sign change located after 200 damped iterations")


def weak_rate(
    alpha_mu: float,
    alpha_nu: float,
    beta_mu: float,
    beta_nu: float,
    alpha: float,
    L_mu: float,
    L_nu: float,
    L: float,
    L_U: float,
    T: float,
) -> RateBound:
    """Contraction rate under weak log-concavity.

    C = 4 (alpha_phi + alpha_psi + alpha) / exp(9 max(L_mu, L_nu, L) / (alpha_phi + alpha_psi + alpha))
    and rate = L_U / (T C).  The curvature parameters alpha_phi, alpha_psi
    solve the implicit fixed-point equations when the beta bounds are
    finite, and reduce to alpha - 1/T exactly when beta = +inf.  Validity
    additionally requires T above the weak-regime threshold
    max(1/alpha_mu, 1/alpha_nu, 4 L_U / s * exp(18 max L / s)) with
    s = alpha_mu + alpha_nu + alpha.
    """
    if min(alpha_mu, alpha_nu, L_U, T) <= 0.0 or alpha < 0.0:
        raise ValueError("alpha_mu, alpha_nu, L_U, T must be positive and alpha >= 0")
    if min(L_mu, L_nu, L) < 0.0:
        raise ValueError("weak-convexity constants must be nonnegative")
    alpha_phi = _weak_alpha_fixed_point(alpha_mu, beta_nu, L_mu, T)
    alpha_psi = _weak_alpha_fixed_point(alpha_nu, beta_mu, L_nu, T)
    s = alpha_phi + alpha_psi + alpha
    if s <= 0.0:
        c_const = 0.0
        rate = math.inf
        variant = math.inf
    else:
        c_const = 4.0 * s / math.exp(9.0 * max(L_mu, L_nu, L) / s)
        rate = L_U / (T * c_const)
        variant = 1.0 / (T * c_const)
    s_plain = alpha_mu + alpha_nu + alpha
    threshold = max(
        1.0 / alpha_mu,
        1.0 / alpha_nu,
        4.0 * L_U / s_plain * math.exp(18.0 * max(L_mu, L_nu, L) / s_plain),
    )
    theorem = "t2" if math.isinf(beta_mu) and math.isinf(beta_nu) else "t6"
    return RateBound(
        rate=rate,
        valid=bool(T > threshold and rate < 1.0),
        threshold_T=threshold,
        theorem=theorem,
        alpha_phi=alpha_phi,
        alpha_psi=alpha_psi,
        variant_without_LU=variant,
    )


@dataclass(frozen=True)
class SearchBox:
    """Bounded search domain for profile and Hessian scans."""

    low: np.ndarray
    high: np.ndarray
    restarts: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "low", np.atleast_1d(np.asarray(self.low, dtype=float)))
        object.__setattr__(self, "high", np.atleast_1d(np.asarray(self.high, dtype=float)))
        if self.low.shape != self.high.shape or np.any(self.low >= self.high):
            raise ValueError("search box needs low < high componentwise")

    @property
    def dim(self) -> int:
        return self.low.shape[0]


@dataclass(frozen=True)
class ConvexityProfile:
    """Weak convexity profile kappa(r) with a fitted lower envelope.

    Fit satisfies kappas[i] >= fitted_alpha - theta(fitted_L, rs[i]) / rs[i]
    on the whole grid.  Optional upper-profile constants (beta, M) are
    stored for completeness; no rate formula consumes them.
    """

    rs: np.ndarray
    kappas: np.ndarray
    fitted_alpha: float
    fitted_L: float
    upper_beta: float | None = None
    upper_M: float | None = None


def _kappa_1d(grad, r, box: SearchBox):
    """Exact 1-D reduction: minimize (grad(x) - grad(x - r)) / r over x."""
    lo, hi = float(box.low[0]) + r, float(box.high[0])
    if lo >= hi:
        return None, True

    def q(x):
        return (float(grad(np.array([x]))[0]) - float(grad(np.array([x - r]))[0])) / r

    xs = np.linspace(lo, hi, 257)
    vals = [q(x) for x in xs]
    order = np.argsort(vals)
    best_val, best_x = np.inf, xs[order[0]]
    for idx in order[:4]:
        a = xs[max(0, idx - 1)]
        b = xs[min(len(xs) - 1, idx + 1)]
        res = optimize.minimize_scalar(q, bounds=(a, b), method="bounded")
        if res.fun < best_val:
            best_val, best_x = float(res.fun), float(res.x)
    span = hi - lo
    on_boundary = min(best_x - lo, hi - best_x) < 1e-6 * span
    return best_val, on_boundary


def _kappa_nd(grad, r, box: SearchBox, rng):
    """Multi-start derivative-free minimization of the monotonicity quotient."""
    d = box.dim
    span = box.high - box.low

    def q(z):
        x = np.clip(z[:d], box.low, box.high)
        v = z[d:]
        nrm = np.linalg.norm(v)
        u = v / nrm if nrm > 1e-12 else np.ones(d) / math.sqrt(d)
        y = x - r * u
        return float((grad(x) - grad(y)) @ u) / r

    best_val, best_x = np.inf, None
    for _ in range(box.restarts):
        x0 = box.low + span * rng.random(d)
        v0 = rng.standard_normal(d)
        res = optimize.minimize(q, np.concatenate([x0, v0]), method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
        if res.fun < best_val:
            best_val, best_x = float(res.fun), np.clip(res.x[:d], box.low, box.high)
    on_boundary = bool(np.any(np.minimum(best_x - box.low, box.high - best_x) < 1e-6 * span))
    return best_val, on_boundary


def kappa_profile(grad_potential, rs, search: SearchBox) -> ConvexityProfile:
    """Weak convexity profile of a gradient field over a separation grid.

    For each r, minimizes <grad(x) - grad(y), x - y> / r^2 over pairs with
    |x - y| = r inside the search box (exact 1-D reduction in dimension one,
    random-restart local search otherwise), then fits the envelope constants:
    alpha is the profile minimum over the largest decade of r, and L is the
    smallest value making the lower envelope hold on the whole grid
    (bisection; the envelope relaxes monotonically in L).
    """
    rs = np.atleast_1d(np.asarray(rs, dtype=float))
    if rs.size == 0 or np.any(rs <= 0.0) or np.any(np.diff(rs) <= 0.0):
        raise ValueError("rs must be a positive strictly increasing grid")
    rng = np.random.default_rng(search.seed)
    kappas, boundary_hits = [], 0
    for r in rs:
        if search.dim == 1:
            val, on_boundary = _kappa_1d(grad_potential, r, search)
        else:
            val, on_boundary = _kappa_nd(grad_potential, r, search, rng)
        if val is None:
            raise SearchBoxTooSmall(f"box cannot hold a pair at separation r={r:g}")
        kappas.append(val)
        boundary_hits += bool(on_boundary)
    if boundary_hits > 0.2 * rs.size:
        raise SearchBoxTooSmall(
            f"minimizer on the boundary for {boundary_hits}/{rs.size} grid points"
        )
    kappas = np.asarray(kappas)

    large = rs >= rs.max() / 10.0
    alpha = float(kappas[large].min())

    def envelope_holds(L: float) -> bool:
        return bool(np.all(kappas >= alpha - np.array([theta(L, r) for r in rs]) / rs - 1e-12))

    if envelope_holds(0.0):
        L_fit = 0.0
    else:
        hi = 1.0
        while not envelope_holds(hi):
            hi *= 2.0
            if hi > 1e12:
                raise SearchBoxTooSmall("no finite envelope constant fits the profile")
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if envelope_holds(mid):
                hi = mid
            else:
                lo = mid
        L_fit = hi
    return ConvexityProfile(rs=rs, kappas=kappas, fitted_alpha=alpha, fitted_L=float(L_fit))


def hessian_bounds(neg_log_density, search: SearchBox, grid_points: int = 41, step: float | None = None):
    """Extreme Hessian eigenvalues of a scalar field over a box grid.

    Central finite differences on a uniform grid (endpoints included);
    returns (alpha, beta) = (min, max) eigenvalue encountered.  Intended for
    analytic test densities feeding the rate calculators.
    """
    d = search.dim
    axes = [np.linspace(search.low[i], search.high[i], grid_points) for i in range(d)]
    h = step if step is not None else 1e-4 * float((search.high - search.low).max())
    lo_eig, hi_eig = np.inf, -np.inf
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    eye = np.eye(d)
    for x in points:
        H = np.empty((d, d))
        f0 = neg_log_density(x)
        for i in range(d):
            H[i, i] = (neg_log_density(x + h * eye[i]) - 2.0 * f0 + neg_log_density(x - h * eye[i])) / h**2
            for j in range(i + 1, d):
                fpp = neg_log_density(x + h * eye[i] + h * eye[j])
                fpm = neg_log_density(x + h * eye[i] - h * eye[j])
                fmp = neg_log_density(x - h * eye[i] + h * eye[j])
                fmm = neg_log_density(x - h * eye[i] - h * eye[j])
                H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h**2)
        if not np.all(np.isfinite(H)):
            raise NonFiniteHessian(f"non-finite Hessian at x={x}")
        eigs = np.linalg.eigvalsh(H)
        lo_eig = min(lo_eig, eigs.min())
        hi_eig = max(hi_eig, eigs.max())
    return float(lo_eig), float(hi_eig)
