"""Riemannian Hamiltonian dynamics on the barrier's Hessian manifold.

The Hamiltonian for target density ``exp(-alpha * phi)`` is

    H(x, v) = alpha * phi(x) + 1/2 v^T g(x)^{-1} v + 1/2 log det g(x)

with ``v`` the momentum in the Euclidean chart. The additive constant
``n/2 log(2 pi)`` is dropped; only energy differences are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .barrier import BarrierParams, MetricState, grad_logdet_g, metric
from .polytope import InfeasibleError

INFEASIBLE = "infeasible-iterate"
FP_NONCONVERGENCE = "fp-nonconvergence"


@dataclass(frozen=True, eq=False)
class PhaseState:
    x: np.ndarray
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class TrajectoryResult:
    end: PhaseState
    energy_start: float
    energy_end: float
    steps_taken: int
    fixed_point_iters_total: int
    rejected: bool
    reason: str | None = None
    end_state: MetricState | None = None

    @property
    def energy_error(self) -> float:
        return self.energy_end - self.energy_start


def hamiltonian(params: BarrierParams, ps: PhaseState, state: MetricState | None = None) -> float:
    if state is None:
        state = metric(params, ps.x)
    v = np.asarray(ps.v, dtype=float)
    y = np.linalg.solve(state.g_chol, v)
    return params.alpha * state.phi + 0.5 * float(y @ y) + 0.5 * state.logdet_g


def drift(params: BarrierParams, state: MetricState, method: str = "analytic") -> np.ndarray:
    """Bias ``mu = -g^{-1} alpha grad(phi) - 1/2 g^{-1} grad(log det g)``."""
    t = grad_logdet_g(state, method=method)
    return -state.g_inv @ (params.alpha * state.grad_phi + 0.5 * t)


def _field(params: BarrierParams, state: MetricState, v: np.ndarray):
    dx = state.g_inv @ v
    quad = np.einsum("kij,i,j->k", state.dg_basis, dx, dx)
    dv = -params.alpha * state.grad_phi - 0.5 * state.grad_logdet + 0.5 * quad
    return dx, dv


def ode_field(params: BarrierParams, ps: PhaseState, state: MetricState | None = None):
    """Right-hand side ``(dx/dt, dv/dt) = (dH/dv, -dH/dx)``."""
    if state is None:
        state = metric(params, ps.x)
    return _field(params, state, np.asarray(ps.v, dtype=float))


def _predict(x, v, half, fdx, fdv, mids):
    """Starting guess for the midpoint: Euler on the first step, then linear and
    quadratic extrapolation through the previous midpoints and ``(x, v)``."""
    if not mids:
        return x + half * fdx, v + half * fdv
    if len(mids) == 1:
        return 2.0 * x - mids[0][0], 2.0 * v - mids[0][1]
    (x2, v2), (x1, v1) = mids
    return x2 / 3.0 - 2.0 * x1 + (8.0 / 3.0) * x, v2 / 3.0 - 2.0 * v1 + (8.0 / 3.0) * v


def integrate(params: BarrierParams, ps: PhaseState, total_time: float, n_steps: int,
              tol_fp: float = 1e-12, max_fp_iter: int = 50,
              start_state: MetricState | None = None,
              compiled: bool = True, anderson: int = 0) -> TrajectoryResult:
    """Implicit midpoint integration of Hamilton's equations.

    Each step solves ``z_mid = z0 + (h/2) F(z_mid)`` by fixed-point iteration
    (damping 1, halved to 0.5 once the increments stop shrinking) and sets
    ``z1 = 2 z_mid - z0``. The step converges once the increment is below
    ``tol_fp`` measured in the local norms ``||dx||_g + ||dv||_{g^{-1}}``.
    Leaving the interior or failing to converge marks the trajectory rejected.
    ``compiled=False`` runs the loop in numpy (the reference path).
    ``anderson=k > 0`` (compiled only) accelerates the midpoint solve with
    Anderson mixing over the last ``k`` iterates; the converged step is the
    same up to ``tol_fp``.
    """
    if n_steps < 1 and total_time != 0:
        raise ValueError("n_steps must be >= 1")
    x = np.array(ps.x, dtype=float)
    v = np.array(ps.v, dtype=float)
    state = start_state if start_state is not None else metric(params, x, compiled=compiled)
    H0 = hamiltonian(params, PhaseState(x, v), state)
    if total_time == 0 or n_steps == 0:
        return TrajectoryResult(PhaseState(x, v), H0, H0, 0, 0, False, None, state)
    h = total_time / n_steps
    if compiled:
        return _integrate_compiled(params, x, v, h, n_steps, tol_fp, max_fp_iter, state, H0,
                                   anderson)
    if anderson:
        raise ValueError("Anderson acceleration needs compiled=True")
    half = 0.5 * h
    fdx, fdv = _field(params, state, v)
    fp_total = 0
    w_prev = state.lewis.w
    P = params.polytope

    def fail(reason, steps):
        return TrajectoryResult(PhaseState(x, v), H0, math.nan, steps, fp_total, True, reason)

    mids = []
    for step in range(n_steps):
        xm, vm = _predict(x, v, half, fdx, fdv, mids)
        damping = 1.0
        prev_err = math.inf
        converged = False
        for _ in range(max_fp_iter):
            fp_total += 1
            if not np.all(P.A @ xm - P.b > 0):
                return fail(INFEASIBLE, step)
            try:
                st = metric(params, xm, w_prev, compiled=False)
            except (InfeasibleError, np.linalg.LinAlgError, RuntimeError):
                return fail(INFEASIBLE, step)
            w_prev = st.lewis.w
            fdx, fdv = _field(params, st, vm)
            dxm = x + half * fdx - xm
            dvm = v + half * fdv - vm
            err = math.sqrt(max(float(dxm @ st.g @ dxm), 0.0)) + \
                math.sqrt(max(float(dvm @ st.g_inv @ dvm), 0.0))
            if err > prev_err and damping == 1.0:
                damping = 0.5
            prev_err = err
            xm = xm + damping * dxm
            vm = vm + damping * dvm
            if err <= tol_fp:
                converged = True
                break
        if not converged:
            return fail(FP_NONCONVERGENCE, step)
        mids = (mids + [(xm, vm)])[-2:]
        x = 2.0 * xm - x
        v = 2.0 * vm - v
        if not np.all(P.A @ x - P.b > 0):
            return fail(INFEASIBLE, step + 1)
    try:
        end_state = metric(params, x, w_prev, compiled=False)
    except (InfeasibleError, np.linalg.LinAlgError, RuntimeError):
        return fail(INFEASIBLE, n_steps)
    H1 = hamiltonian(params, PhaseState(x, v), end_state)
    return TrajectoryResult(PhaseState(x, v), H0, H1, n_steps, fp_total, False, None, end_state)


def _integrate_compiled(params, x, v, h, n_steps, tol_fp, max_fp_iter, state, H0, anderson):
    P = params.polytope
    x1, v1, w, steps, fp_total, status = _kernels.midpoint_trajectory(
        P.A, P.b, float(params.p), params.alpha0, float(params.alpha), x, v,
        np.ascontiguousarray(state.lewis.w), h, n_steps, tol_fp, max_fp_iter,
        params.lewis_tol, params.lewis_max_iter, int(anderson))
    if status != _kernels.OK:
        reason = FP_NONCONVERGENCE if status == _kernels.FP_FAIL else INFEASIBLE
        return TrajectoryResult(PhaseState(x1, v1), H0, math.nan, int(steps), int(fp_total),
                                True, reason)
    try:
        end_state = metric(params, x1, w)
    except (InfeasibleError, np.linalg.LinAlgError, RuntimeError):
        return TrajectoryResult(PhaseState(x1, v1), H0, math.nan, int(steps), int(fp_total),
                                True, INFEASIBLE)
    H1 = hamiltonian(params, PhaseState(x1, v1), end_state)
    return TrajectoryResult(PhaseState(x1, v1), H0, H1, n_steps, int(fp_total), False, None,
                            end_state)
