"""Numerical checks of the barrier's inequalities on a corpus of polytopes.

Every check returns a :class:`CheckReport` with ``passed`` true exactly when
``measured <= bound * (1 + tolerance)``. Hard checks guard bounds with explicit
constants; soft checks record empirical constants against generous ceilings.
Finite differences are taken along directions of unit local norm and validated
by comparing step ``h`` with ``h/2`` before they are used to judge anything.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .barrier import (BarrierParams, MetricState, default_p, dmetric, metric,
                      metric_other_form, phi)
from .dynamics import drift
from .lewis import fixed_point_residual
from .polytope import (Polytope, box, cross_polytope, cube, find_interior_point,
                       random_polytope, simplex)

HARD = ("fixed_point", "ginfnorm", "barrier_parameter", "barrier_parameter_log", "row_norm",
        "infwithgnorm", "fd_gradient", "fd_hessian", "metric_forms", "fd_dmetric")
SOFT = ("selfconcordance", "selfconcordance_log", "bias_norm", "gaussian_percentile", "ricci")
FAMILIES = HARD + SOFT

SC_CONSTANT = 50.0


class OracleError(RuntimeError):
    """A finite-difference estimate failed its consistency check."""


@dataclass
class CheckReport:
    check: str
    polytope: str
    point: int
    measured: float
    bound: float
    tolerance: float
    hard: bool
    passed: bool = field(init=False)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.measured = float(self.measured)
        self.bound = float(self.bound)
        self.passed = bool(self.measured <= self.bound * (1.0 + self.tolerance))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CorpusEntry:
    polytope: Polytope
    points: list


@dataclass
class Corpus:
    entries: list
    seed: int
    n_range: tuple = (2, 8)
    m_max: int = 60

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


# ---------------------------------------------------------------------------
# corpus

def _bounded_random(n: int, m: int, rng: np.random.Generator) -> Polytope:
    if m >= 2 * n:
        return random_polytope(n, m, rng)
    # n+1 rotated regular-simplex normals positively span R^n, so P is bounded
    E = np.eye(n + 1) - 1.0 / (n + 1)
    U, _, _ = np.linalg.svd(E)
    N = E @ U[:, :n]
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = np.vstack([N @ Q, rng.standard_normal((m - n - 1, n))])
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = -(0.5 + rng.random(m))
    return Polytope(A, b, f"random{n}x{m}")


def _sample_points(P: Polytope, center: np.ndarray, rng: np.random.Generator,
                   fractions=(0.5, 0.9), near_slack: float | None = 1e-4) -> list:
    """``center`` plus points on random rays at the given fractions of the way to
    the boundary, plus one point whose smallest slack is ``near_slack``."""
    pts = [np.asarray(center, dtype=float)]
    s0 = P.A @ center - P.b
    for t in fractions:
        u = rng.standard_normal(P.n)
        Au = P.A @ u
        rmax = np.min(np.where(Au < 0, s0 / np.maximum(-Au, 1e-300), np.inf))
        pts.append(center + t * rmax * u)
    if near_slack is not None:
        u = rng.standard_normal(P.n)
        Au = P.A @ u
        ratios = np.where(Au < 0, (s0 - near_slack) / np.maximum(-Au, 1e-300), np.inf)
        pts.append(center + np.min(ratios) * u)
    return pts


def generate_corpus(seed: int = 0, n_random: int = 50, structured: bool = True,
                    n_range: tuple = (2, 8), m_max: int = 60) -> Corpus:
    """Random unit-row polytopes (origin slack >= 0.5) and structured instances."""
    rng = np.random.default_rng(seed)
    entries = []
    for _ in range(n_random):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        m = int(rng.integers(n + 1, m_max + 1))
        P = _bounded_random(n, m, rng)
        entries.append(CorpusEntry(P, _sample_points(P, np.zeros(n), rng)))
    if structured:
        shapes = [cube(2), cube(3), cube(5), simplex(2), simplex(3), simplex(6),
                  cross_polytope(3), box([0.0, 0.0], [1000.0, 1.0]),
                  box([-1.0, -1.0, -1e-3], [1.0, 1.0, 1e-3])]
        shapes[-2] = Polytope(shapes[-2].A, shapes[-2].b, "thinbox2")
        shapes[-1] = Polytope(shapes[-1].A, shapes[-1].b, "thinbox3")
        for P in shapes:
            c = find_interior_point(P).x
            entries.append(CorpusEntry(P, _sample_points(P, c, rng)))
    for e in entries:
        for x in e.points:
            assert np.min(e.polytope.A @ x - e.polytope.b) >= 1e-6 * 0.99
    return Corpus(entries, seed, tuple(n_range), m_max)


# ---------------------------------------------------------------------------
# finite-difference oracles

def _richardson(f, x, d, h, rtol=1e-4, ref=1.0):
    """Central difference of ``f`` along ``d`` at ``x`` with steps ``h`` and ``h/2``.

    Returns the extrapolated estimate. Raises :class:`OracleError` unless the
    two steps agree to ``rtol * max(|estimate|, ref)``, where ``ref`` is the
    natural size of the quantity (1 for g-normalized directions).
    """
    e1 = np.asarray((f(x + h * d) - f(x - h * d)) / (2.0 * h))
    h2 = 0.5 * h
    e2 = np.asarray((f(x + h2 * d) - f(x - h2 * d)) / (2.0 * h2))
    gap = float(np.max(np.abs(e1 - e2)))
    scale = max(float(np.max(np.abs(e2))), ref)
    if not gap <= rtol * scale:
        raise OracleError(f"finite differences inconsistent: gap {gap:.3e} at scale {scale:.3e}")
    return (4.0 * e2 - e1) / 3.0


def _unit(state: MetricState, v: np.ndarray) -> np.ndarray:
    nrm = math.sqrt(float(v @ state.g @ v))
    return v / nrm if nrm > 0 else v


def _whiten(state: MetricState, M: np.ndarray) -> np.ndarray:
    Li = np.linalg.solve(state.g_chol, np.eye(state.g.shape[0]))
    return Li @ M @ Li.T


def _gen_eig(state: MetricState, M: np.ndarray) -> float:
    W = _whiten(state, 0.5 * (M + M.T))
    return float(np.max(np.abs(np.linalg.eigvalsh(W))))


def _g_basis(state: MetricState) -> np.ndarray:
    """Columns form a g-orthonormal basis."""
    return np.linalg.solve(state.g_chol.T, np.eye(state.g.shape[0]))


# ---------------------------------------------------------------------------
# checks

def _rep(name, state, point, measured, bound, tol, details=None):
    return CheckReport(name, state.params.polytope.name, point, measured, bound, tol,
                       name in HARD, details or {})


def check_fixed_point(state: MetricState, point: int = 0, tol: float = 1e-10) -> CheckReport:
    """Lewis fixed-point residual and ``|sum w - n|``, both against ``tol``."""
    lw = state.lewis
    res = fixed_point_residual(state.A_x, lw.w, lw.p)
    drift_sum = abs(float(lw.w.sum()) - state.params.n)
    measured = max(res, drift_sum)
    return CheckReport("fixed_point", state.params.polytope.name, point, measured / tol, 1.0,
                       0.0, True, {"residual": res, "sum_w_minus_n": drift_sum,
                                   "iterations": lw.iterations})


def check_inf_operator_bound(state: MetricState, trials: int = 100,
                             rng: np.random.Generator | None = None,
                             point: int = 0) -> CheckReport:
    """``||G^{-1} W s||_inf <= ||s||_inf / (4/p - 1)`` over random ``s`` and a basis sweep."""
    rng = rng or np.random.default_rng(0)
    lw = state.lewis
    m = lw.w.size
    S = np.hstack([np.eye(m), rng.standard_normal((m, trials)),
                   rng.choice([-1.0, 1.0], size=(m, trials))])
    Y = np.linalg.solve(lw.G, lw.w[:, None] * S)
    ratios = np.max(np.abs(Y), axis=0) / np.max(np.abs(S), axis=0)
    bound = 1.0 / (4.0 / lw.p - 1.0)
    return _rep("ginfnorm", state, point, ratios.max(), bound, 1e-8,
                {"p": lw.p, "mean_ratio": float(ratios.mean())})


def _log_metric(state: MetricState, x: np.ndarray) -> np.ndarray:
    P = state.params.polytope
    A = P.A / (P.A @ x - P.b)[:, None]
    return A.T @ A


def _log_dmetric(state: MetricState, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    P = state.params.polytope
    A = P.A / (P.A @ x - P.b)[:, None]
    return -2.0 * (A.T * (A @ v)) @ A


def check_self_concordance(state: MetricState, order: int, trials: int = 5,
                           rng: np.random.Generator | None = None, norm: str = "inf",
                           barrier: str = "hybrid", point: int = 0,
                           constant: float = SC_CONSTANT, h: float = 2e-3,
                           directions: list | None = None) -> CheckReport:
    """Generalized eigenvalues of ``D^k g`` relative to ``g`` over norm products.

    ``order`` 1 uses the analytic derivative; orders 2 and 3 difference it
    once and twice. ``barrier="log"`` runs the same measurement on the plain
    log barrier ``A_x^T A_x``, whose exact constants are 2, 6, 24.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    rng = rng or np.random.default_rng(0)
    params = state.params
    n = params.n
    x0 = state.x
    w0 = state.lewis.w
    if barrier == "hybrid":
        ref = state

        def dg(y, v):
            return dmetric(state if y is x0 else metric(params, y, w0), v)

        def g_of(y):
            return state.g if y is x0 else metric(params, y, w0).g
    elif barrier == "log":
        H = _log_metric(state, x0)
        L = np.linalg.cholesky(H)
        ref = _LogRef(H, L)

        def dg(y, v):
            return _log_dmetric(state, y, v)

        def g_of(y):
            return _log_metric(state, y)
    else:
        raise ValueError(f"unknown barrier {barrier!r}")

    def nrm(v):
        if norm == "inf":
            return float(np.max(np.abs(state.A_x @ v)))
        return math.sqrt(float(v @ ref.g @ v))

    worst = 0.0
    oracle_failures = 0
    dirs = directions if directions is not None else [
        [_unit(ref, rng.standard_normal(n)) for _ in range(order)] for _ in range(trials)]
    for vs in dirs:
        denom = math.prod(nrm(v) for v in vs)
        if denom == 0:
            continue
        try:
            if order == 1:
                M = dg(x0, vs[0])
            elif order == 2:
                M = _richardson(lambda y: dg(y, vs[0]), x0, vs[1], h)
            else:
                M = _richardson(lambda y: _richardson(lambda u: dg(u, vs[0]), y, vs[1], h,
                                                      rtol=1e-3),
                                x0, vs[2], h, rtol=1e-2)
        except OracleError:
            oracle_failures += 1
            continue
        worst = max(worst, _gen_eig(ref, M) / denom)
    name = "selfconcordance" if barrier == "hybrid" else "selfconcordance_log"
    if barrier == "log":
        bound = {1: 2.0, 2: 6.0, 3: 24.0}[order]
        tol = 1e-6 if order == 1 else 1e-3
    else:
        m = params.m
        bound = constant * math.log(m) ** 3 if norm == "inf" else constant
        tol = 0.0
    return CheckReport(name, params.polytope.name, point, worst, bound, tol, False,
                       {"order": order, "norm": norm, "oracle_failures": oracle_failures,
                        "empirical_constant": worst / (math.log(params.m) ** 3
                                                       if norm == "inf" and barrier == "hybrid"
                                                       else 1.0)})


@dataclass
class _LogRef:
    g: np.ndarray
    g_chol: np.ndarray


def check_barrier_parameter(state: MetricState, point: int = 0) -> CheckReport:
    """``grad(phi)^T g^{-1} grad(phi) <= alpha0 * n``.

    Splitting phi into its Lewis and log parts only proves ``2 alpha0 n``
    (each part contributes at most ``alpha0 n``); both ratios are reported.
    """
    gp = state.grad_phi
    nu = float(gp @ state.g_inv @ gp)
    params = state.params
    an = params.alpha0 * params.n
    return _rep("barrier_parameter", state, point, nu, an, 1e-6,
                {"alpha0": params.alpha0, "ratio": nu / an, "within_sum_bound": nu <= 2 * an})


def check_barrier_parameter_log(state: MetricState, point: int = 0) -> CheckReport:
    """Plain log barrier: ``1^T A_x (A_x^T A_x)^{-1} A_x^T 1 <= m``."""
    A = state.A_x
    one = np.ones(A.shape[0])
    y = A.T @ one
    val = float(y @ np.linalg.solve(A.T @ A, y))
    return _rep("barrier_parameter_log", state, point, val, A.shape[0], 1e-10)


def check_row_norm_bound(state: MetricState, point: int = 0) -> CheckReport:
    """``a_i^T g^{-1} a_i <= 1`` for the rescaled rows (equivalently
    ``a_i^T g''^{-1} a_i <= alpha0`` with ``g = alpha0 g''``)."""
    A = state.A_x
    vals = np.einsum("ij,jk,ik->i", A, state.g_inv, A)
    a0 = state.params.alpha0
    return _rep("row_norm", state, point, vals.max(), 1.0, 1e-8,
                {"max_unscaled": float(a0 * vals.max()), "unscaled_bound": a0,
                 "min": float(vals.min())})


def check_inf_with_gnorm(state: MetricState, trials: int = 200,
                         rng: np.random.Generator | None = None, point: int = 0) -> CheckReport:
    """``||A_x v||_inf <= ||v||_g`` on random ``v``."""
    rng = rng or np.random.default_rng(0)
    V = rng.standard_normal((state.params.n, trials))
    inf = np.max(np.abs(state.A_x @ V), axis=0)
    gn = np.sqrt(np.einsum("ij,ik,kj->j", V, state.g, V))
    return _rep("infwithgnorm", state, point, float(np.max(inf / gn)), 1.0, 1e-8)


def check_bias_norm(state: MetricState, alpha: float = 0.0, point: int = 0) -> CheckReport:
    """``||mu||_g <= 2 (1 + alpha sqrt(alpha0)) sqrt(n)`` (factor 2 for the hidden constant)."""
    params = state.params.with_alpha(alpha)
    mu = drift(params, state)
    val = math.sqrt(max(float(mu @ state.g @ mu), 0.0))
    n = params.n
    bound = 2.0 * (1.0 + alpha * math.sqrt(params.alpha0)) * math.sqrt(n)
    return _rep("bias_norm", state, point, val, bound, 0.0,
                {"alpha": alpha, "ratio_to_sqrt_n": val / math.sqrt(n)})


def check_gaussian_percentile(state: MetricState, draws: int = 4000,
                              rng: np.random.Generator | None = None,
                              point: int = 0) -> CheckReport:
    """99th percentile of ``||s_v||_inf`` for ``v ~ N(0, g^{-1})`` vs ``sqrt(2 log(200 m))``."""
    rng = rng or np.random.default_rng(0)
    Z = rng.standard_normal((state.params.n, draws))
    V = np.linalg.solve(state.g_chol.T, Z)
    q = float(np.percentile(np.max(np.abs(state.A_x @ V), axis=0), 99))
    return _rep("gaussian_percentile", state, point, q,
                math.sqrt(2.0 * math.log(200 * state.params.m)), 0.0)


def check_fd_gradient(state: MetricState, point: int = 0, h: float = 1e-3) -> CheckReport:
    """Analytic gradient vs Richardson central differences of phi along a
    g-orthonormal basis; error relative to ``max(||grad||_{g^{-1}}, 1)``."""
    params = state.params
    D = _g_basis(state)
    f = lambda y: phi(params, y)  # noqa: E731
    fd = np.array([float(_richardson(f, state.x, D[:, j], h))
                   for j in range(D.shape[1])])
    an = D.T @ state.grad_phi
    err = float(np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1.0))
    return _rep("fd_gradient", state, point, err, 1e-6, 0.0)


def check_fd_hessian(state: MetricState, point: int = 0, h: float = 1e-3) -> CheckReport:
    """``g`` vs differences of the analytic gradient, in whitened coordinates
    (relative Frobenius error)."""
    params = state.params
    D = _g_basis(state)
    f = lambda y: metric(params, y, state.lewis.w).grad_phi  # noqa: E731
    cols = np.column_stack([_richardson(f, state.x, D[:, j], h) for j in range(D.shape[1])])
    fd = D.T @ cols  # ideally the identity
    err = float(np.linalg.norm(fd - np.eye(D.shape[1])) / math.sqrt(D.shape[1]))
    return _rep("fd_hessian", state, point, err, 1e-4, 0.0)


def check_metric_forms(state: MetricState, point: int = 0) -> CheckReport:
    """The two closed forms of the Lewis part of the metric agree (relative
    Frobenius; the whitened error is reported alongside)."""
    g1 = state.g1
    g1b = metric_other_form(state)
    err = float(np.linalg.norm(g1 - g1b) / max(np.linalg.norm(g1), 1e-300))
    white = float(np.linalg.norm(_whiten(state, g1 - g1b)) /
                  max(np.linalg.norm(_whiten(state, g1)), 1e-300))
    return _rep("metric_forms", state, point, err, 1e-10, 0.0, {"whitened": white})


def check_fd_dmetric(state: MetricState, trials: int = 3,
                     rng: np.random.Generator | None = None, point: int = 0,
                     h: float = 1e-3) -> CheckReport:
    """Analytic ``Dg(v)`` vs Richardson differences of ``g`` (whitened, relative)."""
    rng = rng or np.random.default_rng(0)
    params = state.params
    worst = 0.0
    for _ in range(trials):
        v = _unit(state, rng.standard_normal(params.n))
        fd = _richardson(lambda y: metric(params, y, state.lewis.w).g, state.x, v, h)
        an = dmetric(state, v)
        err = np.linalg.norm(_whiten(state, fd - an)) / max(np.linalg.norm(_whiten(state, an)),
                                                           1.0)
        worst = max(worst, float(err))
    return _rep("fd_dmetric", state, point, worst, 1e-5, 0.0)


# ---------------------------------------------------------------------------
# curvature

def ricci_diagnostic(state: MetricState, v) -> float:
    """Ricci curvature ``Ric(v, v)`` of the metric, in closed form:

        Ric(v, v) = 1/4 tr(g^{-1} Dg(v) g^{-1} Dg(v)) - 1/4 v^T Dg(g^{-1} t) v,

    ``t_k = tr(g^{-1} Dg(e_k))``. The sign follows the usual convention
    (negative on the hyperbolic plane), as confirmed by :func:`ricci_tensor_fd`.
    """
    return ricci_polarized(state, v, v)


def ricci_polarized(state: MetricState, u, v) -> float:
    """Symmetric bilinear form whose diagonal is :func:`ricci_diagnostic`."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    Gi = state.g_inv
    Bu = Gi @ dmetric(state, u)
    Bv = Gi @ dmetric(state, v)
    Dt = dmetric(state, Gi @ state.grad_logdet)
    return float(0.25 * np.trace(Bu @ Bv) - 0.25 * u @ Dt @ v)


def christoffel(state: MetricState) -> np.ndarray:
    """``Gamma[k, i, j]`` of the Levi-Civita connection from the analytic ``Dg``."""
    dg = state.dg_basis  # dg[l, i, j] = d_l g_ij
    T = dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg  # [l, i, j] -> d_i g_lj + d_j g_li - d_l g_ij
    return 0.5 * np.einsum("kl,lij->kij", state.g_inv, T)


def ricci_tensor_fd(params: BarrierParams, x, h: float = 1e-4) -> np.ndarray:
    """Ricci tensor from Christoffel symbols, differentiating them centrally:
    ``R_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik``."""
    x = np.asarray(x, dtype=float)
    st = metric(params, x)
    n = x.size
    Gam = christoffel(st)
    dGam = np.empty((n, n, n, n))  # [a, k, i, j] = d_a Gamma^k_ij
    for a in range(n):
        e = np.zeros(n)
        e[a] = h
        dGam[a] = (christoffel(metric(params, x + e, st.lewis.w))
                   - christoffel(metric(params, x - e, st.lewis.w))) / (2.0 * h)
    R = (np.einsum("kkij->ij", dGam) - np.einsum("jkik->ij", dGam)
         + np.einsum("kkl,lij->ij", Gam, Gam) - np.einsum("kjl,lik->ij", Gam, Gam))
    return 0.5 * (R + R.T)


def check_ricci(state: MetricState, trials: int = 3, rng: np.random.Generator | None = None,
                point: int = 0) -> CheckReport:
    """Soft report: ``max |Ric(v,v)| / ||v||_g^2`` over random unit directions."""
    rng = rng or np.random.default_rng(0)
    vals = [ricci_diagnostic(state, _unit(state, rng.standard_normal(state.params.n)))
            for _ in range(trials)]
    worst = float(np.max(np.abs(vals)))
    return _rep("ricci", state, point, worst, math.inf, 0.0, {"values": vals})


# ---------------------------------------------------------------------------
# suite

def _point_reports(args) -> list:
    P, x, pid, seed, idx, only, lewis_tol = args
    p = default_p(P.m)
    params = BarrierParams(P, p, 0.0, lewis_tol=lewis_tol)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx, pid)))
    out = []
    want = (lambda name: only is None or name in only)  # noqa: E731
    st = metric(params, x)
    if want("fixed_point"):
        out.append(check_fixed_point(st, pid))
    if want("ginfnorm"):
        out.append(check_inf_operator_bound(st, rng=rng, point=pid))
    if want("barrier_parameter"):
        out.append(check_barrier_parameter(st, pid))
    if want("barrier_parameter_log"):
        out.append(check_barrier_parameter_log(st, pid))
    if want("row_norm"):
        out.append(check_row_norm_bound(st, pid))
    if want("infwithgnorm"):
        out.append(check_inf_with_gnorm(st, rng=rng, point=pid))
    if want("fd_gradient"):
        out.append(check_fd_gradient(st, pid))
    if want("fd_hessian"):
        out.append(check_fd_hessian(st, pid))
    if want("metric_forms"):
        out.append(check_metric_forms(st, pid))
    if want("fd_dmetric"):
        out.append(check_fd_dmetric(st, rng=rng, point=pid))
    if want("selfconcordance"):
        for k in (1, 2, 3):
            out.append(check_self_concordance(st, k, trials=3, rng=rng, point=pid))
    if want("selfconcordance_log"):
        out.append(check_self_concordance(st, 1, trials=5, rng=rng, barrier="log", point=pid))
    if want("bias_norm"):
        out.append(check_bias_norm(st, 0.0, pid))
        out.append(check_bias_norm(st, 1.0, pid))
    if want("gaussian_percentile"):
        out.append(check_gaussian_percentile(st, rng=rng, point=pid))
    if want("ricci"):
        out.append(check_ricci(st, rng=rng, point=pid))
    return out


def run_suite(corpus: Corpus, only=None, threads: int = 1, lewis_tol: float = 1e-12,
              seed: int | None = None) -> list[CheckReport]:
    """Run the selected check families on every (polytope, point) pair.

    Results are ordered by corpus position regardless of ``threads``.
    """
    if only is not None:
        only = set([only] if isinstance(only, str) else only)
        unknown = only - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown check family: {sorted(unknown)}")
    seed = corpus.seed if seed is None else seed
    tasks = [(e.polytope, x, pid, seed, idx, only, lewis_tol)
             for idx, e in enumerate(corpus.entries) for pid, x in enumerate(e.points)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_point_reports, tasks))
    else:
        chunks = [_point_reports(t) for t in tasks]
    return [r for c in chunks for r in c]


def hard_failures(reports) -> list[CheckReport]:
    return [r for r in reports if r.hard and not r.passed]


def summary_table(reports) -> str:
    """One row per check family: count, failures, worst measured/bound."""
    rows = {}
    for r in reports:
        key = r.check
        if r.check.startswith("selfconcordance"):
            key = f"{r.check}[{r.details.get('order')}]"
        row = rows.setdefault(key, {"n": 0, "fail": 0, "worst": 0.0, "hard": r.hard,
                                    "measured": 0.0})
        row["n"] += 1
        row["fail"] += not r.passed
        if r.bound > 0 and math.isfinite(r.bound):
            row["worst"] = max(row["worst"], r.measured / r.bound)
        row["measured"] = max(row["measured"], r.measured)
    lines = [f"{'check':<24}{'kind':<6}{'count':>7}{'fail':>6}{'max meas':>14}{'max m/b':>12}"]
    for k, row in rows.items():
        lines.append(f"{k:<24}{'hard' if row['hard'] else 'soft':<6}{row['n']:>7}"
                     f"{row['fail']:>6}{row['measured']:>14.4e}{row['worst']:>12.4e}")
    return "\n".join(lines)


def reports_to_json(reports, **kw) -> str:
    return json.dumps([r.to_dict() for r in reports], default=_json_default, **kw)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
