"""Closed-form machinery for the reference diffusion.

The reference process is the Langevin diffusion

    dX_t = -grad U(X_t) dt + sqrt(2) dB_t

in one of two tractable regimes:

* ``brownian`` (U identically zero): Brownian motion started at the volume
  measure, with transition X_t | X_s = x ~ N(x, 2(t-s) Id).
* ``ou`` (U(x) = <A x, x> with A symmetric positive-definite): the linear
  process dX = -2 A X dt + sqrt(2) dB with stationary law N(0, (2A)^-1),
  transition mean exp(-2A(t-s)) x and covariance
  2 * int_s^t exp(-2A(t-u)) exp(-2A^T(t-u)) du,
  evaluated per eigenpair of A.

Everything here is a pure function of value-semantic inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, InvalidTimeOrder, NonSPDMatrix

_SYM_TOL = 1e-10


class ReferenceKind(Enum):
    BROWNIAN = "brownian"
    OU = "ou"


@dataclass(frozen=True)
class GaussianMap:
    """Affine Gaussian transition x -> N(M x + b, S)."""

    M: np.ndarray
    b: np.ndarray
    S: np.ndarray

    def mean(self, x: np.ndarray) -> np.ndarray:
        return self.M @ np.asarray(x, dtype=float) + self.b


@dataclass(frozen=True)
class BilinearScore:
    """Score field linear in both of its vector arguments.

    Evaluates ``C_first @ u + C_second @ v``.  Coefficients are exposed so
    downstream code can do exact affine algebra instead of re-probing a
    closure.
    """

    C_first: np.ndarray
    C_second: np.ndarray

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.C_first @ np.asarray(u, dtype=float) + self.C_second @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class ScoreFields:
    """Forward and backward doubled score fields at a fixed time.

    ``forward(y_t, y_T)`` is twice the gradient in y_t of the log transition
    density from t to T.  ``backward(y_0, y)`` is twice the gradient in y of
    the log transition density from 0 to T-t, evaluated at y given y_0.
    """

    forward: BilinearScore
    backward: BilinearScore


@dataclass(frozen=True)
class BridgeConditional:
    """Law of X_t given (X_0, X_T): N(M0 x_0 + MT x_T, S)."""

    M0: np.ndarray
    MT: np.ndarray
    S: np.ndarray

    def mean(self, x0: np.ndarray, xT: np.ndarray) -> np.ndarray:
        return self.M0 @ np.asarray(x0, dtype=float) + self.MT @ np.asarray(xT, dtype=float)


@dataclass(frozen=True)
class StructuralConstants:
    """Lipschitz and convexity constants of the reference.

    ``L_U`` bounds 2(t-s) times the mixed-derivative norm of the log
    transition density; ``alpha`` lower-bounds the eigenvalues of the
    endpoint principal block of the triple precision matrix.  For the OU
    case both are grid estimates (upper envelope for L_U, grid minimum for
    alpha); the grids are kept so results are reproducible.
    """

    L_U: float
    alpha: float
    tau_grid: np.ndarray | None = None
    t_grid: np.ndarray | None = None


@dataclass(frozen=True)
class ReferenceProcess:
    kind: ReferenceKind
    d: int
    A: np.ndarray | None = None

    def grad_potential_matrix(self) -> np.ndarray:
        """Linear coefficient G of grad U(x) = G x (zero for Brownian)."""
        if self.kind is ReferenceKind.BROWNIAN:
            return np.zeros((self.d, self.d))
        return 2.0 * self.A

    def stationary_covariance(self) -> np.ndarray:
        """Covariance of the invariant law N(0, (2A)^-1) (OU only)."""
        if self.kind is ReferenceKind.BROWNIAN:
            raise NonSPDMatrix("Brownian reference has no normalizable stationary law")
        return np.linalg.inv(2.0 * self.A)


def _check_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=_SYM_TOL * max(1.0, np.abs(M).max())):
        raise NonSPDMatrix(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def make_reference(kind, A=None, d: int | None = None) -> ReferenceProcess:
    """Build and validate a reference process.

    Parameters
    ----------
    kind : ReferenceKind or str
        "brownian" or "ou".
    A : array_like, optional
        Symmetric positive-definite rate matrix, required for "ou".
    d : int
        State dimension.
    """
    if isinstance(kind, str):
        kind = ReferenceKind(kind.lower())
    if kind is ReferenceKind.BROWNIAN:
        if d is None or d < 1:
            raise DimensionMismatch("dimension d must be a positive integer")
        return ReferenceProcess(kind=kind, d=int(d), A=None)
    if A is None:
        raise NonSPDMatrix("OU reference requires a rate matrix A")
    A = _check_symmetric(A, "A")
    if d is None:
        d = A.shape[0]
    if A.shape != (d, d):
        raise DimensionMismatch(f"A has shape {A.shape}, expected ({d}, {d})")
    eigs = np.linalg.eigvalsh(A)
    if eigs.min() <= 0.0:
        raise NonSPDMatrix(f"A must be positive definite, min eigenvalue {eigs.min():g}")
    return ReferenceProcess(kind=kind, d=int(d), A=A)


def _ou_eig(ref: ReferenceProcess):
    lam, Q = np.linalg.eigh(ref.A)
    return lam, Q


def transition(ref: ReferenceProcess, s: float, t: float) -> GaussianMap:
    """Transition kernel of the reference from time s to time t > s.

    Brownian: M = Id, S = 2(t-s) Id.
    OU: M = exp(-2A(t-s)) and S with per-eigenvalue entries
    (1 - exp(-4*lam*(t-s))) / (2*lam).
    """
    if not (0.0 <= s < t):
        raise InvalidTimeOrder(f"need 0 <= s < t, got s={s}, t={t}")
    tau = t - s
    d = ref.d
    if ref.kind is ReferenceKind.BROWNIAN:
        return GaussianMap(M=np.eye(d), b=np.zeros(d), S=2.0 * tau * np.eye(d))
    lam, Q = _ou_eig(ref)
    m_diag = np.exp(-2.0 * lam * tau)
    s_diag = (1.0 - np.exp(-4.0 * lam * tau)) / (2.0 * lam)
    M = (Q * m_diag) @ Q.T
    S = (Q * s_diag) @ Q.T
    return GaussianMap(M=M, b=np.zeros(d), S=0.5 * (S + S.T))


def score_fields(ref: ReferenceProcess, t: float, T: float) -> ScoreFields:
    """Doubled transition-score fields at time t with horizon T.

    With (M, S) the t->T transition, the forward field is
    2 M^T S^-1 (y_T - M y_t); with (M', S') the 0->(T-t) transition, the
    backward field is -2 S'^-1 (y - M' y_0).
    """
    if not (0.0 <= t < T):
        raise InvalidTimeOrder(f"need 0 <= t < T, got t={t}, T={T}")
    fwd = transition(ref, t, T)
    Sf = np.linalg.solve(fwd.S, np.eye(ref.d))
    forward = BilinearScore(C_first=-2.0 * fwd.M.T @ Sf @ fwd.M, C_second=2.0 * fwd.M.T @ Sf)
    bwd = transition(ref, 0.0, T - t)
    Sb = np.linalg.solve(bwd.S, np.eye(ref.d))
    backward = BilinearScore(C_first=2.0 * Sb @ bwd.M, C_second=-2.0 * Sb)
    return ScoreFields(forward=forward, backward=backward)


def bridge_conditional(ref: ReferenceProcess, t: float, T: float) -> BridgeConditional:
    """Conditional law of X_t given the endpoints (X_0, X_T).

    Obtained by conditioning the Gaussian triple assembled from
    ``transition``; the result does not depend on the law of X_0 (Markov
    property), so the two-factor precision form is used:

        P = S1^-1 + M2^T S2^-1 M2,   S_t = P^-1,
        M0 = S_t S1^-1 M1,           MT = S_t M2^T S2^-1,

    with (M1, S1) the 0->t and (M2, S2) the t->T transitions.  Brownian
    specialization: mean ((T-t) x_0 + t x_T) / T, covariance 2t(T-t)/T Id.
    """
    if not (0.0 < t < T):
        raise InvalidTimeOrder(f"need 0 < t < T, got t={t}, T={T}")
    first = transition(ref, 0.0, t)
    second = transition(ref, t, T)
    S1inv = np.linalg.solve(first.S, np.eye(ref.d))
    S2inv = np.linalg.solve(second.S, np.eye(ref.d))
    P = S1inv + second.M.T @ S2inv @ second.M
    S_t = np.linalg.solve(P, np.eye(ref.d))
    S_t = 0.5 * (S_t + S_t.T)
    M0 = S_t @ (S1inv @ first.M)
    MT = S_t @ (second.M.T @ S2inv)
    return BridgeConditional(M0=M0, MT=MT, S=S_t)


def _spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


def structural_constants(ref: ReferenceProcess, T: float = 1.0) -> StructuralConstants:
    """Estimate (L_U, alpha) for the reference over horizon T.

    Brownian: exactly (1, 0).

    OU: L_U is the maximum over a 64-point logarithmic (t-s) grid in
    [1e-4*T, T] of 2(t-s) * ||exp(-2A(t-s))|| * ||Sigma_{t|s}^-1||, taken
    together with the short-interval limit 1 (the Brownian value, which the
    grid approaches from below for scalar A); alpha is the minimum over a
    uniform 64-point interior t-grid of the smallest eigenvalue of the
    (x_0, x_T) principal block of the triple precision matrix under the
    stationary initialization.  Both are grid estimates, not closed forms.
    """
    if T <= 0.0:
        raise InvalidTimeOrder(f"horizon T must be positive, got {T}")
    if ref.kind is ReferenceKind.BROWNIAN:
        return StructuralConstants(L_U=1.0, alpha=0.0)
    tau_grid = np.geomspace(1e-4 * T, T, 64)
    lu = 1.0
    for tau in tau_grid:
        tr = transition(ref, 0.0, tau)
        lu = max(lu, 2.0 * tau * _spectral_norm(tr.M) * _spectral_norm(np.linalg.inv(tr.S)))
    t_grid = T * np.arange(1, 65) / 65.0
    prec_inf = 2.0 * ref.A
    alpha = np.inf
    for t in t_grid:
        first = transition(ref, 0.0, t)
        second = transition(ref, t, T)
        S1inv = np.linalg.inv(first.S)
        S2inv = np.linalg.inv(second.S)
        # Markov tridiagonal precision: the (x_0, x_T) principal block is
        # block-diagonal, so its spectrum is the union of the two blocks'.
        block00 = prec_inf + first.M.T @ S1inv @ first.M
        alpha = min(alpha, np.linalg.eigvalsh(block00).min(), np.linalg.eigvalsh(S2inv).min())
    return StructuralConstants(L_U=float(lu), alpha=float(alpha), tau_grid=tau_grid, t_grid=t_grid)
