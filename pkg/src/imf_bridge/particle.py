"""Sampling-based counterpart of the closed-form machinery.

Used as an independent oracle: bridge sampling of the stochastic
interpolant, Euler-Maruyama simulation of the projected diffusion,
self-normalized importance-sampling estimates of the conditional-expectation
drift, and exact mixture drifts for mixture endpoint couplings.

Randomness is counter-based: every block of normals is produced by a Philox
generator keyed by (seed, stream, step), and particle i's coordinates
occupy a fixed offset (row-major position i*d .. i*d+d-1) of that stream's
raw output.  Uniforms are mapped through the exact inverse normal CDF, so
each particle consumes a fixed number of raw words and any partition of
particles across workers reproduces identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

from .errors import (
    DegenerateWeights,
    DimensionMismatch,
    InvalidTimeOrder,
    OdeBlowup,
    TooFewParticles,
)
from .gaussian import GaussianCoupling, GaussianDist
from .projection import _time_grid, mimicking_drift
from .reference import ReferenceProcess, bridge_conditional, score_fields

STREAM_ENDPOINTS = 1
STREAM_BRIDGE = 2
STREAM_SDE = 3
STREAM_INIT = 4
STREAM_MIXTURE = 5

EndpointSampler = Callable[[int, int], np.ndarray]


def raw_block(seed: int, stream: int, step: int, n: int) -> np.ndarray:
    """n raw 64-bit words from the (seed, stream, step)-keyed counter stream."""
    bitgen = Philox(seed=SeedSequence(entropy=(int(seed), int(stream), int(step))))
    return bitgen.random_raw(n)


def uniform_block(seed: int, stream: int, step: int, n: int) -> np.ndarray:
    """n uniforms in (0, 1), one raw word each (fixed consumption)."""
    raw = raw_block(seed, stream, step, n)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def normal_block(seed: int, stream: int, step: int, rows: int, cols: int) -> np.ndarray:
    """rows x cols standard normals via the inverse CDF (fixed consumption)."""
    return ndtri(uniform_block(seed, stream, step, rows * cols)).reshape(rows, cols)


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particle states at a common time, tagged with the generating seed."""

    states: np.ndarray
    t: float
    seed: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        object.__setattr__(self, "states", states)
        if states.shape[0] < 1 or not np.all(np.isfinite(states)):
            raise ValueError("ensemble needs at least one particle with finite states")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class MixtureCoupling:
    """Finite mixture of Gaussian endpoint couplings."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "weights", w / w.sum())
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != w.shape[0]:
            raise DimensionMismatch("one weight per component required")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise DimensionMismatch("components must share a dimension")

    @property
    def dim(self) -> int:
        return self.components[0].dim


@dataclass(frozen=True)
class EnsembleMoments:
    mean: np.ndarray
    cov: np.ndarray
    se_mean: np.ndarray


@dataclass(frozen=True)
class DriftOracleEstimate:
    """Self-normalized importance-sampling drift estimate."""

    value: np.ndarray
    se: np.ndarray
    ess: float


def dist_sampler(dist: GaussianDist) -> EndpointSampler:
    """Seeded sampler of a Gaussian law (used for SDE initial conditions)."""
    chol = np.linalg.cholesky(dist.cov)

    def sample(n: int, seed: int) -> np.ndarray:
        return dist.mean + normal_block(seed, STREAM_INIT, 0, n, dist.dim) @ chol.T

    return sample


def coupling_sampler(pi: GaussianCoupling) -> EndpointSampler:
    """Seeded sampler of endpoint pairs from a Gaussian coupling."""
    chol = np.linalg.cholesky(pi.cov)

    def sample(n: int, seed: int) -> np.ndarray:
        return pi.mean + normal_block(seed, STREAM_ENDPOINTS, 0, n, 2 * pi.dim) @ chol.T

    return sample


def mixture_coupling_sampler(mix: MixtureCoupling) -> EndpointSampler:
    """Seeded sampler of endpoint pairs from a mixture coupling."""
    chols = [np.linalg.cholesky(c.cov) for c in mix.components]
    cum = np.cumsum(mix.weights)

    def sample(n: int, seed: int) -> np.ndarray:
        picks = np.searchsorted(cum, uniform_block(seed, STREAM_MIXTURE, 0, n))
        z = normal_block(seed, STREAM_ENDPOINTS, 0, n, 2 * mix.dim)
        out = np.empty_like(z)
        for k, comp in enumerate(mix.components):
            rows = picks == k
            if np.any(rows):
                out[rows] = comp.mean + z[rows] @ chols[k].T
        return out

    return sample


def mixture_marginal_sampler(weights, components) -> EndpointSampler:
    """Seeded sampler of a Gaussian-mixture marginal law."""
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    comps = list(components)
    chols = [np.linalg.cholesky(c.cov) for c in comps]
    cum = np.cumsum(weights / weights.sum())
    d = comps[0].dim

    def sample(n: int, seed: int) -> np.ndarray:
        picks = np.searchsorted(cum, uniform_block(seed, STREAM_MIXTURE, 1, n))
        z = normal_block(seed, STREAM_INIT, 0, n, d)
        out = np.empty_like(z)
        for k, comp in enumerate(comps):
            rows = picks == k
            if np.any(rows):
                out[rows] = comp.mean + z[rows] @ chols[k].T
        return out

    return sample


def sample_interpolant_path(
    pi_sampler: EndpointSampler,
    ref: ReferenceProcess,
    T: float,
    grid: Sequence[float],
    N: int,
    seed: int,
) -> list[ParticleEnsemble]:
    """Draw endpoint pairs once, then fill each grid time from the bridge law.

    The grid must be strictly increasing and lie inside (0, T); an empty
    grid yields an empty list.  Deterministic given the seed.
    """
    if N < 1:
        raise TooFewParticles(f"need N >= 1, got {N}")
    grid = list(grid)
    if not grid:
        return []
    arr = np.asarray(grid, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= T) or np.any(np.diff(arr) <= 0.0):
        raise InvalidTimeOrder("grid must be strictly increasing inside (0, T)")
    endpoints = pi_sampler(N, seed)
    d = endpoints.shape[1] // 2
    x0, xT = endpoints[:, :d], endpoints[:, d:]
    out = []
    for k, t in enumerate(arr):
        bc = bridge_conditional(ref, float(t), T)
        mean = x0 @ bc.M0.T + xT @ bc.MT.T
        chol = np.linalg.cholesky(bc.S)
        y = mean + normal_block(seed, STREAM_BRIDGE, k + 1, N, d) @ chol.T
        out.append(ParticleEnsemble(states=y, t=float(t), seed=seed))
    return out


def drift_field(pi: GaussianCoupling, ref: ReferenceProcess, T: float):
    """Vectorized forward mimicking drift (t, states) -> drifts."""

    def field(t: float, states: np.ndarray) -> np.ndarray:
        dr = mimicking_drift(pi, ref, T, t)
        return states @ dr.A.T + dr.b

    return field


def backward_drift_field(pi: GaussianCoupling, ref: ReferenceProcess, T: float):
    """Vectorized time-reversed drift (t, states) -> drifts."""
    from .projection import backward_drift

    def field(t: float, states: np.ndarray) -> np.ndarray:
        dr = backward_drift(pi, ref, T, t)
        return states @ dr.A.T + dr.b

    return field


def simulate_sde(
    drift,
    init_sampler: EndpointSampler,
    T: float,
    steps: int,
    N: int,
    seed: int,
    snapshot_times: Sequence[float] = (),
):
    """Euler-Maruyama with diffusion coefficient sqrt(2).

    Integrates over the same refined grid as the moment ODEs (uniform then
    geometric, stopping at T - 1e-6 T, reported as T).  With
    ``snapshot_times`` given, returns one ensemble per requested time (the
    grid is refined to hit them exactly); otherwise returns the terminal
    ensemble.  Deterministic given the seed.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if N < 1:
        raise TooFewParticles(f"need N >= 1, got {N}")
    eps = 1e-6 * T
    grid = _time_grid(T, steps, eps)
    snaps = sorted(float(t) for t in snapshot_times)
    if snaps and (snaps[0] <= 0.0 or snaps[-1] > T):
        raise InvalidTimeOrder("snapshot times must lie in (0, T]")
    inner = [min(t, T - eps) for t in snaps]
    grid = np.unique(np.concatenate([grid, np.asarray(inner, dtype=float)]))
    states = np.asarray(init_sampler(N, seed), dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    d = states.shape[1]
    wanted: dict[float, list[float]] = {}
    for t in snaps:
        wanted.setdefault(min(t, T - eps), []).append(t)
    collected = {}
    for k in range(grid.size - 1):
        t0, t1 = float(grid[k]), float(grid[k + 1])
        h = t1 - t0
        states = states + h * drift(t0, states) + np.sqrt(2.0 * h) * normal_block(
            seed, STREAM_SDE, k + 1, N, d
        )
        if not np.all(np.isfinite(states)) or np.abs(states).max() > 1e12:
            raise OdeBlowup(f"particle states diverged at t={t1:g}")
        for t_req in wanted.get(t1, ()):
            collected[t_req] = ParticleEnsemble(states=states.copy(), t=t_req, seed=seed)
    if snaps:
        return [collected[t] for t in snaps]
    return ParticleEnsemble(states=states, t=T, seed=seed)


def mc_drift_oracle(
    endpoint_samples: np.ndarray,
    ref: ReferenceProcess,
    T: float,
    t: float,
    y: np.ndarray,
) -> DriftOracleEstimate:
    """Importance-weighted drift estimate at state y and time t.

    Weights endpoint pairs by the bridge density of y given the pair, then
    averages the forward score field over the weighted pairs and subtracts
    the potential gradient.  Standard errors come from the delta method for
    the self-normalized estimator.
    """
    if not (0.0 < t < T):
        raise InvalidTimeOrder(f"need 0 < t < T, got t={t}, T={T}")
    samples = np.asarray(endpoint_samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] % 2 != 0:
        raise DimensionMismatch("endpoint samples must be an N x 2d array")
    n = samples.shape[0]
    if n < 100:
        raise TooFewParticles(f"need at least 100 endpoint pairs, got {n}")
    d = samples.shape[1] // 2
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x0, xT = samples[:, :d], samples[:, d:]
    bc = bridge_conditional(ref, t, T)
    diff = y - (x0 @ bc.M0.T + xT @ bc.MT.T)
    logw = -0.5 * np.einsum("ij,ij->i", diff @ np.linalg.inv(bc.S), diff)
    logw -= logw.max()
    w = np.exp(logw)
    wn = w / w.sum()
    ess = 1.0 / float((wn**2).sum())
    if ess < 10.0:
        raise DegenerateWeights(f"effective sample size {ess:.2f} below 10")
    score = score_fields(ref, t, T).forward
    phis = y @ score.C_first.T + xT @ score.C_second.T
    est_phi = wn @ phis
    value = est_phi - ref.grad_potential_matrix() @ y
    se = np.sqrt(np.maximum(0.0, (wn[:, None] ** 2 * (phis - est_phi) ** 2).sum(axis=0)))
    return DriftOracleEstimate(value=value, se=se, ess=ess)


def _component_time_moments(pi: GaussianCoupling, ref: ReferenceProcess, T: float, t: float):
    from .projection import time_marginal

    marg = time_marginal(pi, ref, T, t)
    return marg.mean, marg.cov


def mixture_time_moments(mix: MixtureCoupling, ref: ReferenceProcess, T: float, t: float):
    """Exact mean and covariance of Y_t under a mixture endpoint coupling."""
    means, covs = [], []
    for comp in mix.components:
        m, S = _component_time_moments(comp, ref, T, t)
        means.append(m)
        covs.append(S)
    w = mix.weights
    mean = sum(wk * mk for wk, mk in zip(w, means))
    cov = sum(wk * (Sk + np.outer(mk, mk)) for wk, Sk, mk in zip(w, covs, means)) - np.outer(mean, mean)
    return mean, cov


def mixture_drift(
    mix: MixtureCoupling, ref: ReferenceProcess, T: float, t: float, y: np.ndarray
) -> np.ndarray:
    """Exact drift under a mixture coupling.

    Posterior component responsibilities at y (weight times the component's
    Y_t marginal density) average the per-component affine drifts.
    """
    if not (0.0 <= t < T):
        raise InvalidTimeOrder(f"need 0 <= t < T, got t={t}, T={T}")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    logps = np.empty(len(mix.components))
    drifts = []
    for k, comp in enumerate(mix.components):
        m, S = _component_time_moments(comp, ref, T, t)
        diff = y - m
        _, logdet = np.linalg.slogdet(S)
        logps[k] = -0.5 * (diff @ np.linalg.solve(S, diff) + logdet) + np.log(mix.weights[k])
        drifts.append(mimicking_drift(comp, ref, T, t)(y))
    logps -= logps.max()
    post = np.exp(logps)
    post /= post.sum()
    return sum(pk * fk for pk, fk in zip(post, drifts))


def mixture_drift_field(mix: MixtureCoupling, ref: ReferenceProcess, T: float):
    """Vectorized mixture drift (t, states) -> drifts."""

    def field(t: float, states: np.ndarray) -> np.ndarray:
        n = states.shape[0]
        logps = np.empty((n, len(mix.components)))
        vals = np.empty((len(mix.components), n, states.shape[1]))
        for k, comp in enumerate(mix.components):
            m, S = _component_time_moments(comp, ref, T, t)
            diff = states - m
            _, logdet = np.linalg.slogdet(S)
            logps[:, k] = -0.5 * (
                np.einsum("ij,ij->i", diff @ np.linalg.inv(S), diff) + logdet
            ) + np.log(mix.weights[k])
            dr = mimicking_drift(comp, ref, T, t)
            vals[k] = states @ dr.A.T + dr.b
        logps -= logps.max(axis=1, keepdims=True)
        post = np.exp(logps)
        post /= post.sum(axis=1, keepdims=True)
        return np.einsum("nk,kni->ni", post, vals)

    return field


def ensemble_moments(e: ParticleEnsemble) -> EnsembleMoments:
    """Sample mean, unbiased covariance, and standard errors of the mean."""
    if e.n < 2:
        raise TooFewParticles(f"need at least 2 particles, got {e.n}")
    mean = e.states.mean(axis=0)
    cov = np.atleast_2d(np.cov(e.states, rowvar=False, ddof=1))
    se_mean = np.sqrt(np.diag(cov) / e.n)
    return EnsembleMoments(mean=mean, cov=cov, se_mean=se_mean)


def variance_standard_error(var: float, n: int) -> float:
    """Standard error of a Gaussian sample variance: var * sqrt(2 / (n - 1))."""
    return float(var) * np.sqrt(2.0 / (n - 1))


def sample_variance_se(x: np.ndarray) -> float:
    """Distribution-free standard error of the sample variance of a 1-D sample.

    Uses the fourth-central-moment formula, which reduces to
    var * sqrt(2/n) for Gaussian data; safe for mixture marginals.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise TooFewParticles(f"need at least 4 points, got {n}")
    c = x - x.mean()
    s2 = (c**2).sum() / (n - 1)
    m4 = (c**4).mean()
    return float(np.sqrt(max(0.0, m4 - (n - 3) / (n - 1) * s2**2) / n))
