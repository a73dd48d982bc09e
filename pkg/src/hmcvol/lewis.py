"""p-Lewis weights of a rescaled constraint matrix and their derived matrices.

For ``A_x`` of shape (m, n) the p-Lewis weights are the positive vector ``w``
with ``sigma(W^{1/2 - 1/p} A_x) = w``, where ``sigma`` are leverage scores.
Around the fixed point we keep

* ``P``: projection onto the column space of ``W^{1/2-1/p} A_x``,
* ``P2 = P * P`` (entrywise),
* ``Lambda = W - P2`` and ``G = (2/p) W + (1 - 2/p) P2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import STALL_FACTOR, STALL_ITERS


class LewisConvergenceError(RuntimeError):
    """Raised when the weight iteration fails to converge."""


class NumericalRankError(np.linalg.LinAlgError):
    """Raised when a Gram matrix is numerically singular."""


class ParameterError(ValueError):
    pass


def _check_p(p: float) -> None:
    if not 2.0 <= p < 4.0:
        raise ParameterError(f"Lewis exponent must satisfy 2 <= p < 4, got {p}")


def gram_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PD matrix, with one jitter retry."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        n = M.shape[0]
        jitter = 1e-12 * np.trace(M) / n
        try:
            return np.linalg.cholesky(M + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise NumericalRankError("matrix is numerically rank deficient") from exc


def _weighted_projection(A: np.ndarray, u: np.ndarray):
    """Return (P, logdet M) with P the projection onto col(U^{1/2} A), M = A^T U A."""
    Q, R = np.linalg.qr(np.sqrt(u)[:, None] * A)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-14 * d.max():
        raise NumericalRankError("matrix is numerically rank deficient")
    return Q @ Q.T, 2.0 * float(np.sum(np.log(d)))


def leverage_scores(M: np.ndarray) -> np.ndarray:
    """Diagonal of the orthogonal projection onto the column space of ``M``."""
    Q, _ = np.linalg.qr(np.asarray(M, dtype=float))
    return np.einsum("ij,ij->i", Q, Q)


def fixed_point_residual(A_x: np.ndarray, w: np.ndarray, p: float) -> float:
    """``max_i |sigma_i(W^{1/2-1/p} A_x) - w_i|``."""
    sigma = leverage_scores(A_x * (w ** (0.5 - 1.0 / p))[:, None])
    return float(np.max(np.abs(sigma - w)))


@dataclass(frozen=True, eq=False)
class LewisState:
    w: np.ndarray
    p: float
    P: np.ndarray
    P2: np.ndarray
    Lambda: np.ndarray
    G: np.ndarray
    residual: float
    iterations: int
    gram_logdet: float
    """``log det(A_x^T W^{1-2/p} A_x)`` at the returned weights."""
    residual_history: tuple = ()

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.w)


def lewis_weights(A_x: np.ndarray, p: float, tol: float = 1e-12, max_iter: int = 500,
                  w0: np.ndarray | None = None, method: str = "newton") -> LewisState:
    """Compute p-Lewis weights of ``A_x``.

    ``method="fixed_point"`` runs the contraction
    ``w_i <- (a_i^T (A^T W^{1-2/p} A)^{-1} a_i)^{p/2}`` from the leverage scores
    (or ``w0``). ``method="newton"`` takes Newton steps on ``log w`` for the
    fixed-point equation and falls back to the contraction whenever a Newton
    step is unusable. Both stop once ``||log w_new - log w||_inf <= tol`` or the
    fixed-point residual is at most ``tol`` (tiny weights stagnate in log scale).
    A residual that stops improving near roundoff level (within ``100 tol``
    for five iterations) is also accepted.
    """
    _check_p(p)
    A_x = np.asarray(A_x, dtype=float)
    if method not in ("newton", "fixed_point"):
        raise ParameterError(f"unknown method {method!r}")
    c = 1.0 - 2.0 / p
    w = leverage_scores(A_x) if w0 is None else np.array(w0, dtype=float)
    history = []
    best, stall = math.inf, 0
    for it in range(1, max_iter + 1):
        u = w ** c
        P, logdet = _weighted_projection(A_x, u)
        sigma = np.diag(P).copy()
        history.append(float(np.max(np.abs(sigma - w))))
        if history[-1] <= 0.5 * best:
            best, stall = history[-1], 0
        else:
            stall += 1
        stalled = stall >= STALL_ITERS and history[-1] <= STALL_FACTOR * tol
        step = None
        if method == "newton" and c > 0:
            P2 = P * P
            J = np.diag(w - c * sigma) + c * P2
            try:
                step = np.linalg.solve(J, sigma - w)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and not (np.all(np.isfinite(step)) and np.max(np.abs(step)) < 0.5):
                step = None
        if step is None:
            # contraction map expressed on log w
            step = (p / 2.0) * (np.log(sigma) - np.log(w))
        if np.max(np.abs(step)) <= tol or history[-1] <= tol or stalled:
            P2 = P * P
            Lam = np.diag(w) - P2
            G = (2.0 / p) * np.diag(w) + c * P2
            return LewisState(w=w, p=p, P=P, P2=P2, Lambda=Lam, G=G, residual=history[-1],
                              iterations=it, gram_logdet=float(logdet),
                              residual_history=tuple(history))
        w = w * np.exp(step)
    raise LewisConvergenceError(
        f"Lewis weights did not converge in {max_iter} iterations (last residual {history[-1]:.3e})")


@dataclass(frozen=True, eq=False)
class ReparamVector:
    s_v: np.ndarray
    r_v: np.ndarray


def reparam(state: LewisState, A_x: np.ndarray, v) -> ReparamVector:
    """``s_v = A_x v`` and ``r_v = G^{-1} W s_v``."""
    s_v = A_x @ np.asarray(v, dtype=float)
    try:
        r_v = np.linalg.solve(state.G, state.w * s_v)
    except np.linalg.LinAlgError as exc:
        raise NumericalRankError("G is singular") from exc
    return ReparamVector(s_v, r_v)


def local_inf_norm(A_x: np.ndarray, v) -> float:
    """``||A_x v||_inf``: the norm whose unit ball is the symmetrized polytope."""
    return float(np.max(np.abs(A_x @ np.asarray(v, dtype=float))))
