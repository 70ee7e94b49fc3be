"""Gaussian distribution and coupling algebra.

Provides exact conditioning, closed-form KL divergence, marginal residuals,
and a Sinkhorn solver that computes the static bridge coupling between two
Gaussian marginals against the reference joint.  All Sinkhorn algebra runs
on natural parameters (precision matrix plus linear term) so the Brownian
reference, whose initial law is Lebesgue, is represented exactly as a zero
precision block rather than a large-variance surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonSPDMatrix, NoConvergence, SingularBlock
from .reference import ReferenceKind, ReferenceProcess, transition

COND_LIMIT = 1e12  # condition-number threshold for "numerically singular"


def _as_cov(cov, name: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-9 * max(1.0, np.abs(cov).max())):
        raise NonSPDMatrix(f"{name} is not symmetric")
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() <= 0.0:
        raise NonSPDMatrix(f"{name} is not positive definite")
    return cov


@dataclass(frozen=True)
class GaussianDist:
    """Gaussian law N(mean, cov) with SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", _as_cov(self.cov, "cov"))
        if self.cov.shape[0] != self.mean.shape[0]:
            raise DimensionMismatch(
                f"mean has dimension {self.mean.shape[0]}, cov is {self.cov.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> float:
        x = np.asarray(x, dtype=float)
        diff = x - self.mean
        _, logdet = np.linalg.slogdet(self.cov)
        quad = diff @ np.linalg.solve(self.cov, diff)
        return float(-0.5 * (self.dim * np.log(2.0 * np.pi) + logdet + quad))


@dataclass(frozen=True)
class GaussianCoupling:
    """Joint Gaussian law of an endpoint pair, blocks ordered (X_0, X_T)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", _as_cov(self.cov, "cov"))
        if self.mean.shape[0] % 2 != 0 or self.cov.shape[0] != self.mean.shape[0]:
            raise DimensionMismatch("coupling mean/cov must have even, matching dimension")

    @property
    def dim(self) -> int:
        """Dimension d of each endpoint block."""
        return self.mean.shape[0] // 2

    @property
    def mean0(self) -> np.ndarray:
        return self.mean[: self.dim]

    @property
    def meanT(self) -> np.ndarray:
        return self.mean[self.dim :]

    @property
    def cov00(self) -> np.ndarray:
        return self.cov[: self.dim, : self.dim]

    @property
    def cov0T(self) -> np.ndarray:
        return self.cov[: self.dim, self.dim :]

    @property
    def covTT(self) -> np.ndarray:
        return self.cov[self.dim :, self.dim :]

    def initial_marginal(self) -> GaussianDist:
        return GaussianDist(mean=self.mean0, cov=self.cov00)

    def terminal_marginal(self) -> GaussianDist:
        return GaussianDist(mean=self.meanT, cov=self.covTT)

    def as_dist(self) -> GaussianDist:
        return GaussianDist(mean=self.mean, cov=self.cov)

    def swapped(self) -> "GaussianCoupling":
        """Coupling of the reversed pair (X_T, X_0)."""
        d = self.dim
        perm = np.concatenate([np.arange(d, 2 * d), np.arange(d)])
        return GaussianCoupling(mean=self.mean[perm], cov=self.cov[np.ix_(perm, perm)])

    @staticmethod
    def from_blocks(mean0, meanT, cov00, cov0T, covTT) -> "GaussianCoupling":
        mean0 = np.atleast_1d(np.asarray(mean0, dtype=float))
        meanT = np.atleast_1d(np.asarray(meanT, dtype=float))
        cov0T = np.atleast_2d(np.asarray(cov0T, dtype=float))
        cov = np.block([[np.atleast_2d(cov00), cov0T], [cov0T.T, np.atleast_2d(covTT)]])
        return GaussianCoupling(mean=np.concatenate([mean0, meanT]), cov=cov)

    @staticmethod
    def product(mu: GaussianDist, nu: GaussianDist) -> "GaussianCoupling":
        """Independent coupling mu (x) nu."""
        d = mu.dim
        if nu.dim != d:
            raise DimensionMismatch("marginals must share a dimension")
        return GaussianCoupling.from_blocks(mu.mean, nu.mean, mu.cov, np.zeros((d, d)), nu.cov)


@dataclass(frozen=True)
class SinkhornReport:
    coupling: GaussianCoupling
    marginal_error: float
    iterations: int
    converged: bool


def _conditional_map(mean: np.ndarray, cov: np.ndarray, keep: np.ndarray, obs: np.ndarray):
    """Affine conditional of the kept block given the observed block.

    Returns (K, c, S) such that kept | observed=v ~ N(K v + c, S).
    Raises SingularBlock when the observed block is numerically singular.
    """
    Soo = cov[np.ix_(obs, obs)]
    eigs = np.linalg.eigvalsh(Soo)
    if eigs.min() <= 0.0 or eigs.max() / eigs.min() > COND_LIMIT:
        raise SingularBlock(
            f"observed block is numerically singular (eigenvalues in [{eigs.min():g}, {eigs.max():g}])"
        )
    Sko = cov[np.ix_(keep, obs)]
    K = np.linalg.solve(Soo, Sko.T).T
    c = mean[keep] - K @ mean[obs]
    S = cov[np.ix_(keep, keep)] - K @ Sko.T
    return K, c, 0.5 * (S + S.T)


def condition(joint, observed_block: Sequence[int], value) -> GaussianDist:
    """Exact Gaussian conditioning on a subset of coordinates.

    ``joint`` is a GaussianDist or a raw (mean, cov) pair; the raw form
    exists so that numerically singular joints reach the SingularBlock
    check instead of failing SPD validation up front.  ``observed_block``
    lists the indices being observed; the conditional law of the remaining
    coordinates (in their original order) is returned.
    """
    if isinstance(joint, GaussianDist):
        mean, cov = joint.mean, joint.cov
    else:
        mean, cov = joint
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
    obs = np.asarray(observed_block, dtype=int)
    value = np.atleast_1d(np.asarray(value, dtype=float))
    if value.shape[0] != obs.shape[0]:
        raise DimensionMismatch("observed value length does not match index set")
    keep = np.setdiff1d(np.arange(mean.shape[0]), obs)
    if keep.size == 0:
        raise DimensionMismatch("cannot observe every coordinate")
    eigs = np.linalg.eigvalsh(cov)
    if eigs.min() <= 0.0 or eigs.max() / eigs.min() > COND_LIMIT:
        raise SingularBlock(
            f"joint covariance is numerically singular (eigenvalues in [{eigs.min():g}, {eigs.max():g}])"
        )
    K, c, S = _conditional_map(mean, cov, keep, obs)
    return GaussianDist(mean=K @ value + c, cov=S)


def kl_gaussian(p: GaussianDist, q: GaussianDist) -> float:
    """KL(p | q) in closed form.

    0.5 * (tr(Sq^-1 Sp) + (mq-mp)^T Sq^-1 (mq-mp) - d + logdet Sq - logdet Sp),
    clamped at zero against roundoff (the formula is nonnegative exactly).
    """
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimensions differ: {p.dim} vs {q.dim}")
    d = p.dim
    dm = q.mean - p.mean
    sol = np.linalg.solve(q.cov, np.column_stack([p.cov, dm]))
    trace = np.trace(sol[:, :d])
    quad = dm @ sol[:, d]
    _, logdet_q = np.linalg.slogdet(q.cov)
    _, logdet_p = np.linalg.slogdet(p.cov)
    return max(0.0, float(0.5 * (trace + quad - d + logdet_q - logdet_p)))


def kl_coupling(p: GaussianCoupling, q: GaussianCoupling) -> float:
    """KL divergence between two endpoint couplings (as 2d-dim Gaussians)."""
    return kl_gaussian(p.as_dist(), q.as_dist())


def coupling_marginal_error(pi: GaussianCoupling, mu: GaussianDist, nu: GaussianDist) -> float:
    """Max-abs moment mismatch between the coupling's marginals and (mu, nu)."""
    if pi.dim != mu.dim or pi.dim != nu.dim:
        raise DimensionMismatch("coupling and marginals must share a dimension")
    return float(
        max(
            np.abs(pi.mean0 - mu.mean).max(),
            np.abs(pi.cov00 - mu.cov).max(),
            np.abs(pi.meanT - nu.mean).max(),
            np.abs(pi.covTT - nu.cov).max(),
        )
    )


def _reference_joint_precision(ref: ReferenceProcess, T: float) -> np.ndarray:
    """Natural-parameter precision of the reference endpoint joint.

    Brownian references are started at the volume measure, so the x_0 block
    carries zero precision; the joint precision is then (1/(2T)) [[I, -I],
    [-I, I]], which is singular by design.  OU references are started at the
    stationary law and yield a proper SPD precision.
    """
    d = ref.d
    tr = transition(ref, 0.0, T)
    Sinv = np.linalg.inv(tr.S)
    if ref.kind is ReferenceKind.BROWNIAN:
        a = 1.0 / (2.0 * T)
        eye = np.eye(d)
        return np.block([[a * eye, -a * eye], [-a * eye, a * eye]])
    prec0 = 2.0 * ref.A
    return np.block(
        [[prec0 + tr.M.T @ Sinv @ tr.M, -tr.M.T @ Sinv], [-Sinv @ tr.M, Sinv]]
    )


def sinkhorn_bridge(
    mu: GaussianDist,
    nu: GaussianDist,
    ref: ReferenceProcess,
    T: float,
    tol: float = 1e-12,
    max_iter: int = 1000,
) -> SinkhornReport:
    """Exact static-bridge coupling between Gaussian marginals.

    Alternately refits the quadratic potentials (one symmetric matrix and
    one vector each) multiplying the reference endpoint joint so that the
    induced Gaussian coupling matches mu, then nu, exactly in turn.  Stops
    once both marginals agree with the targets within ``tol`` in max-abs
    moment error.

    Raises NoConvergence when ``max_iter`` sweeps do not reach ``tol``;
    raising T or max_iter is the caller's remedy.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if T <= 0.0:
        raise ValueError(f"horizon T must be positive, got {T}")
    if mu.dim != nu.dim or mu.dim != ref.d:
        raise DimensionMismatch("marginals and reference must share a dimension")
    d = ref.d
    lam_r = _reference_joint_precision(ref, T)
    Rxx, Rxy = lam_r[:d, :d], lam_r[:d, d:]
    Ryx, Ryy = lam_r[d:, :d], lam_r[d:, d:]

    prec_mu = np.linalg.inv(mu.cov)
    prec_nu = np.linalg.inv(nu.cov)
    h_mu = prec_mu @ mu.mean
    h_nu = prec_nu @ nu.mean

    phi, u = prec_mu.copy(), h_mu.copy()
    psi, v = prec_nu.copy(), h_nu.copy()

    def assemble():
        lam = lam_r + np.block(
            [[phi, np.zeros((d, d))], [np.zeros((d, d)), psi]]
        )
        cov = np.linalg.inv(lam)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ np.concatenate([u, v])
        return GaussianCoupling(mean=mean, cov=cov)

    err = np.inf
    for it in range(1, max_iter + 1):
        # refit the x-potential so the x-marginal is exactly mu
        gain = np.linalg.solve(Ryy + psi, np.column_stack([Ryx, v]))
        phi = prec_mu - Rxx + Rxy @ gain[:, :d]
        u = h_mu + Rxy @ gain[:, d]
        # refit the y-potential so the y-marginal is exactly nu
        gain = np.linalg.solve(Rxx + phi, np.column_stack([Rxy, u]))
        psi = prec_nu - Ryy + Ryx @ gain[:, :d]
        v = h_nu + Ryx @ gain[:, d]
        coupling = assemble()
        err = coupling_marginal_error(coupling, mu, nu)
        if err <= tol:
            return SinkhornReport(coupling=coupling, marginal_error=err, iterations=it, converged=True)
    raise NoConvergence(
        f"marginal error {err:g} above tol {tol:g} after {max_iter} sweeps; raise T or max_iter"
    )
