"""Hybrid Lewis-weight / log barrier, its metric and metric derivatives.

The barrier is

    phi(x) = alpha0 * (phi_p(x) + (n/m) * phi_l(x)),
    phi_p(x) = 1/2 log det(A_x^T W^{1-2/p} A_x),   phi_l(x) = -sum(log s_i),

with ``alpha0 = (m/n)^{(2/p)/(1+2/p)}``. Its gradient is
``-alpha0 * A_x^T (w + n/m)`` and its Hessian is ``g = alpha0 * (g1 + g2)`` with

    g1 = A_x^T (W + 2 Lambda + 2 (1-2/p) Lambda G^{-1} Lambda) A_x,
    g2 = (n/m) A_x^T A_x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .lewis import (LewisConvergenceError, LewisState, NumericalRankError, ParameterError,
                    gram_cholesky, lewis_weights)
from .polytope import InfeasibleError, Polytope


def default_p(m: int) -> float:
    """``4 - 1/log(m)`` clamped to [2, 3.999]."""
    if m <= 1:
        return 2.0
    return float(min(max(4.0 - 1.0 / math.log(m), 2.0), 3.999))


@dataclass(frozen=True, eq=False)
class BarrierParams:
    """Barrier exponent ``p`` and density temperature ``alpha`` for a polytope."""

    polytope: Polytope
    p: float
    alpha: float = 0.0
    lewis_tol: float = 1e-12
    lewis_max_iter: int = 500

    def __post_init__(self):
        if not 2.0 <= self.p < 4.0:
            raise ParameterError(f"p must satisfy 2 <= p < 4, got {self.p}")
        if self.alpha < 0:
            raise ParameterError(f"alpha must be nonnegative, got {self.alpha}")

    @classmethod
    def for_polytope(cls, P: Polytope, p: float | None = None, alpha: float = 0.0,
                     **kw) -> "BarrierParams":
        return cls(P, default_p(P.m) if p is None else float(p), float(alpha), **kw)

    @property
    def m(self) -> int:
        return self.polytope.m

    @property
    def n(self) -> int:
        return self.polytope.n

    @property
    def alpha0(self) -> float:
        q = 2.0 / self.p
        return (self.m / self.n) ** (q / (1.0 + q))

    def with_alpha(self, alpha: float) -> "BarrierParams":
        return BarrierParams(self.polytope, self.p, float(alpha), self.lewis_tol,
                             self.lewis_max_iter)


@dataclass(frozen=True, eq=False)
class MetricState:
    """Local geometry of the hybrid barrier at one interior point."""

    params: BarrierParams
    x: np.ndarray
    s: np.ndarray
    A_x: np.ndarray
    lewis: LewisState
    M2: np.ndarray
    """m x m middle matrix of g1 = A_x^T M2 A_x."""
    GinvLam: np.ndarray
    g: np.ndarray
    g_chol: np.ndarray
    g_inv: np.ndarray
    grad_phi: np.ndarray
    logdet_g: float
    phi: float
    compiled: bool = False

    @property
    def g1(self) -> np.ndarray:
        return self.A_x.T @ self.M2 @ self.A_x

    @property
    def g2(self) -> np.ndarray:
        return (self.params.n / self.params.m) * (self.A_x.T @ self.A_x)

    @cached_property
    def dg_basis(self) -> np.ndarray:
        """Stack of ``Dg(e_k)`` for the coordinate directions, shape (n, n, n)."""
        return dmetric_batch(self, np.eye(self.params.n))

    @cached_property
    def grad_logdet(self) -> np.ndarray:
        """Vector with entries ``tr(g^{-1} Dg(e_k))``."""
        return np.einsum("ij,kji->k", self.g_inv, self.dg_basis)


def gsolve(G: np.ndarray, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``G^{-1} X`` for ``G = (2/p) W + c P2``. Since ``P2_ij <= w_i w_j`` the
    scaled matrix ``W^{-1/2} G W^{-1/2}`` has spectrum in ``[2/p, 2/p + c]``."""
    r = 1.0 / np.sqrt(w)
    Gh = G * r[:, None] * r[None, :]
    X = np.asarray(X, dtype=float)
    rr = r[:, None] if X.ndim == 2 else r
    return rr * np.linalg.solve(Gh, rr * X)


def _check_interior(P: Polytope, x: np.ndarray) -> np.ndarray:
    s = P.A @ x - P.b
    if not np.all(s > 0):
        i = int(np.argmin(s))
        raise InfeasibleError(f"point is not strictly interior: slack[{i}] = {s[i]:.3e}")
    return s


def metric(params: BarrierParams, x, w0: np.ndarray | None = None,
           compiled: bool = True) -> MetricState:
    """Evaluate barrier value, gradient, metric and its factorization at ``x``.

    ``w0`` warm-starts the Lewis weight solve (e.g. weights at a nearby point).
    ``compiled=False`` runs the plain numpy reference implementation.
    """
    if compiled:
        return _metric_compiled(params, x, w0)
    P = params.polytope
    x = np.asarray(x, dtype=float)
    s = _check_interior(P, x)
    A = P.A / s[:, None]
    m, n = A.shape
    p = params.p
    c = 1.0 - 2.0 / p
    a0 = params.alpha0
    ratio = n / m

    lw = lewis_weights(A, p, tol=params.lewis_tol, max_iter=params.lewis_max_iter, w0=w0)
    GinvLam = gsolve(lw.G, lw.w, lw.Lambda)
    M2 = lw.Lambda * 2.0 + (2.0 * c) * (lw.Lambda @ GinvLam)
    M2[np.diag_indices(m)] += lw.w
    M2 = 0.5 * (M2 + M2.T)
    g = a0 * (A.T @ (M2 + ratio * np.eye(m)) @ A)
    g = 0.5 * (g + g.T)
    L = gram_cholesky(g)
    Linv = np.linalg.inv(L)
    g_inv = Linv.T @ Linv
    logdet_g = 2.0 * float(np.sum(np.log(np.diag(L))))
    grad = -a0 * (A.T @ (lw.w + ratio))
    phi = a0 * (0.5 * lw.gram_logdet - ratio * float(np.sum(np.log(s))))
    return MetricState(params, x, s, A, lw, M2, GinvLam, g, L, g_inv, grad, logdet_g, phi)


def _metric_compiled(params: BarrierParams, x, w0) -> MetricState:
    P = params.polytope
    x = np.ascontiguousarray(x, dtype=float)
    use_w0 = w0 is not None
    w_init = np.ascontiguousarray(w0, dtype=float) if use_w0 else np.empty(P.m)
    (s, A, w, Pm, Lam, G, GinvLam, M2, g, L, g_inv, grad, logdet_g, phi_val, gram_logdet,
     iters, residual, status) = _kernels.geometry(
        P.A, P.b, x, float(params.p), params.alpha0, w_init, use_w0,
        params.lewis_tol, params.lewis_max_iter)
    if status == _kernels.INFEASIBLE:
        i = int(np.argmin(s))
        raise InfeasibleError(f"point is not strictly interior: slack[{i}] = {s[i]:.3e}")
    if status == _kernels.NO_CONVERGENCE:
        raise LewisConvergenceError(
            f"Lewis weights did not converge in {iters} iterations (last residual {residual:.3e})")
    if status == _kernels.RANK:
        raise NumericalRankError("matrix is numerically rank deficient")
    P2 = Pm * Pm
    lw = LewisState(w=w, p=params.p, P=Pm, P2=P2, Lambda=Lam, G=G, residual=float(residual),
                    iterations=int(iters), gram_logdet=float(gram_logdet))
    return MetricState(params, x, s, A, lw, M2, GinvLam, g, L, g_inv, grad, float(logdet_g),
                       float(phi_val), compiled=True)


def phi(params: BarrierParams, x) -> float:
    """Hybrid barrier value; ``+inf`` is never returned, infeasible points raise."""
    P = params.polytope
    x = np.asarray(x, dtype=float)
    s = _check_interior(P, x)
    A = P.A / s[:, None]
    lw = lewis_weights(A, params.p, tol=params.lewis_tol, max_iter=params.lewis_max_iter)
    return params.alpha0 * (0.5 * lw.gram_logdet - (P.n / P.m) * float(np.sum(np.log(s))))


def grad_phi(params: BarrierParams, x) -> np.ndarray:
    return metric(params, x).grad_phi


def dmetric_batch(state: MetricState, V: np.ndarray) -> np.ndarray:
    """``Dg(v)`` for every column ``v`` of ``V``, stacked to shape (q, n, n)."""
    V = np.asarray(V, dtype=float)
    if state.compiled:
        lw = state.lewis
        return _kernels.dmetric_batch(state.A_x, lw.w, float(lw.p), lw.P, lw.Lambda, lw.G,
                                      state.GinvLam, state.M2, state.params.alpha0,
                                      np.ascontiguousarray(V))
    return _dmetric_batch(state, V)


def _dmetric_batch(state: MetricState, V: np.ndarray) -> np.ndarray:
    """Directional derivatives ``Dg(v)`` for the columns of ``V``; shape (q, n, n).

    Product rule on g1 = A_x^T M2 A_x using DA_x(v) = -S_v A_x,
    DW(v) = -2 diag(Lambda r_v) and DP(v) = -R_v P - P R_v + 2 P R_v P.
    """
    A = state.A_x
    lw = state.lewis
    m, n = A.shape
    c = 1.0 - 2.0 / lw.p
    P = lw.P
    S = A @ V                                        # m x q
    r = gsolve(lw.G, lw.w, lw.w[:, None] * S)        # m x q
    dw = -2.0 * (lw.Lambda @ r)                      # m x q
    rT = r.T                                          # q x m
    # DP_k = -r_k[:,None] P - P r_k[None,:] + 2 P diag(r_k) P
    PRP = np.einsum("ij,qj,jl->qil", P, rT, P)
    DP = 2.0 * PRP - rT[:, :, None] * P[None] - P[None] * rT[:, None, :]
    DP2 = 2.0 * P[None] * DP
    dwT = dw.T
    eye_idx = np.arange(m)
    DLam = -DP2
    DLam[:, eye_idx, eye_idx] += dwT
    DG = c * DP2
    DG[:, eye_idx, eye_idx] += (1.0 - c) * dwT
    H = state.GinvLam                                 # G^{-1} Lambda
    HT = H.T                                          # Lambda G^{-1}
    inner = DLam @ H
    DM2 = 2.0 * DLam + (2.0 * c) * (inner + np.swapaxes(inner, 1, 2) - HT @ DG @ H)
    DM2[:, eye_idx, eye_idx] += dwT
    core = A.T @ DM2 @ A                              # q x n x n
    B = (state.M2 + (n / m) * np.eye(m)) @ A          # m x n
    left = np.einsum("iq,ia,ib->qab", S, A, B)        # A^T S_v (M2 + ratio I) A
    out = core - left - np.swapaxes(left, 1, 2)
    return state.params.alpha0 * out


def dmetric(state: MetricState, v) -> np.ndarray:
    """Analytic directional derivative ``Dg(v)`` of the metric."""
    v = np.asarray(v, dtype=float)
    return dmetric_batch(state, v[:, None])[0]


def dmetric_log(state: MetricState, v) -> np.ndarray:
    """``Dg2(v) = -2 (n/m) A_x^T S_v A_x`` for the (scaled) log-barrier metric alone."""
    s_v = state.A_x @ np.asarray(v, dtype=float)
    m, n = state.A_x.shape
    return -2.0 * (n / m) * (state.A_x.T * s_v) @ state.A_x


def grad_logdet_g(state: MetricState, method: str = "analytic", h: float | None = None
                  ) -> np.ndarray:
    """Gradient of ``log det g``.

    ``analytic`` contracts ``g^{-1}`` with the coordinate derivatives of g;
    ``fd`` uses central differences of ``log det g`` (cross-validation path).
    """
    if method == "analytic":
        return state.grad_logdet
    if method != "fd":
        raise ParameterError(f"unknown method {method!r}")
    params = state.params
    n = params.n
    if h is None:
        h = fd_step(state)
    out = np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        out[k] = (metric(params, state.x + e, state.lewis.w).logdet_g
                  - metric(params, state.x - e, state.lewis.w).logdet_g) / (2 * h)
    return out


def fd_step(state: MetricState, safety: float = 0.1) -> float:
    """Central-difference step ``safety * eps^{1/3} * scale``.

    ``scale`` is ``max(1, |x|)`` shrunk to the Euclidean distance to the
    nearest facet when that is smaller than one.
    """
    dist = float(np.min(state.s / np.linalg.norm(state.params.polytope.A, axis=1)))
    scale = max(1.0, float(np.linalg.norm(state.x)))
    if dist < 1.0:
        scale = min(scale, dist)
    return safety * np.finfo(float).eps ** (1.0 / 3.0) * scale


def g_norm(state: MetricState, v) -> float:
    v = np.asarray(v, dtype=float)
    return math.sqrt(max(float(v @ state.g @ v), 0.0))


def metric_other_form(state: MetricState) -> np.ndarray:
    """g1 via the alternative expression in terms of P2 and G (no Lambda G^{-1} Lambda)."""
    lw = state.lewis
    A = state.A_x
    p = lw.p
    c = 1.0 - 2.0 / p
    k = (p * p / 2.0) * c
    W2L = np.diag(lw.w) + 2.0 * lw.Lambda
    mid = W2L + k * lw.G - 2.0 * k * lw.P2 + k * (lw.P2 @ gsolve(lw.G, lw.w, lw.P2))
    return A.T @ mid @ A


def minimize_phi(params: BarrierParams, x0=None, tol: float = 1e-13,
                 max_iter: int = 200) -> MetricState:
    """Damped Newton on phi using its exact Hessian ``g``.

    Stops when the Newton decrement ``grad^T g^{-1} grad`` drops below ``tol``.
    """
    P = params.polytope
    if x0 is None:
        from .polytope import find_interior_point
        x0 = find_interior_point(P).x
    st = metric(params, x0)
    for _ in range(max_iter):
        step = -st.g_inv @ st.grad_phi
        dec = float(-st.grad_phi @ step)
        if dec <= tol:
            return st
        t = 1.0 / (1.0 + math.sqrt(dec)) if dec > 0.25 else 1.0
        while True:
            x_new = st.x + t * step
            if np.all(P.A @ x_new - P.b > 0):
                new = metric(params, x_new, st.lewis.w)
                if new.phi <= st.phi + 1e-4 * t * float(st.grad_phi @ step) or t < 1e-12:
                    break
            t *= 0.5
            if t < 1e-12:
                raise RuntimeError("line search failed while minimizing phi")
        st = new
    raise LewisConvergenceError(f"phi minimization did not converge in {max_iter} iterations")
