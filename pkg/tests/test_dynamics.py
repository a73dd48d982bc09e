import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmcvol.barrier import BarrierParams, g_norm, metric
from hmcvol.dynamics import (FP_NONCONVERGENCE, INFEASIBLE, PhaseState, drift, hamiltonian,
                             integrate, ode_field)
from hmcvol.polytope import cube, membership, random_polytope, simplex


def _setup(seed, n=3, m=10, alpha=0.0, p=None):
    r = np.random.default_rng(seed)
    P = random_polytope(n, m, r)
    prm = BarrierParams.for_polytope(P, alpha=alpha) if p is None else BarrierParams(P, p, alpha)
    x = 0.25 * r.standard_normal(n)
    while not membership(P, x):
        x *= 0.5
    return prm, x, r


def _raw_hamiltonian(A, b, p, alpha, x, v):
    """Everything from scratch: plain Lewis iteration and dense algebra."""
    s = A @ x - b
    Ax = A / s[:, None]
    m, n = Ax.shape
    w = np.full(m, n / m)
    for _ in range(2000):
        B = Ax * (w ** (0.5 - 1 / p))[:, None]
        w_new = np.einsum("ij,jk,ik->i", B, np.linalg.inv(B.T @ B), B)
        done = np.max(np.abs(w_new - w)) < 1e-15
        w = w_new
        if done:
            break
    a0 = (m / n) ** ((2 / p) / (1 + 2 / p))
    U = w ** (1 - 2 / p)
    gram = Ax.T @ (U[:, None] * Ax)
    phi = a0 * (0.5 * np.linalg.slogdet(gram)[1] - (n / m) * np.sum(np.log(s)))
    Proj = (Ax * np.sqrt(U)[:, None]) @ np.linalg.inv(gram) @ (Ax * np.sqrt(U)[:, None]).T
    P2 = Proj ** 2
    Lam = np.diag(w) - P2
    c = 1 - 2 / p
    G = np.diag(w) - c * Lam
    M = np.diag(w) + 2 * Lam + 2 * c * Lam @ np.linalg.inv(G) @ Lam + (n / m) * np.eye(m)
    g = a0 * Ax.T @ M @ Ax
    return alpha * phi + 0.5 * v @ np.linalg.solve(g, v) + 0.5 * np.linalg.slogdet(g)[1]


def test_hamiltonian_cube_center():
    prm = BarrierParams.for_polytope(cube(3), alpha=0.7)
    st_ = metric(prm, np.zeros(3))
    H = hamiltonian(prm, PhaseState(np.zeros(3), np.zeros(3)))
    assert H == pytest.approx(0.7 * st_.phi + 0.5 * st_.logdet_g, rel=1e-14)


@given(st.integers(0, 10 ** 6))
def test_hamiltonian_even_in_v(seed):
    prm, x, r = _setup(seed, alpha=1.3)
    v = r.standard_normal(3)
    assert hamiltonian(prm, PhaseState(x, v)) == \
        pytest.approx(hamiltonian(prm, PhaseState(x, -v)), abs=1e-14, rel=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_hamiltonian_recomputation_oracle(seed):
    prm, x, r = _setup(seed, alpha=0.8, p=3.0)
    v = r.standard_normal(3)
    P = prm.polytope
    ref = _raw_hamiltonian(P.A, P.b, 3.0, 0.8, x, v)
    assert hamiltonian(prm, PhaseState(x, v)) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_drift_zero_at_cube_center():
    prm = BarrierParams.for_polytope(cube(4))
    np.testing.assert_allclose(drift(prm, metric(prm, np.zeros(4))), 0, atol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_drift_dual_path(seed):
    prm, x, _ = _setup(seed, alpha=0.5)
    st_ = metric(prm, x)
    an = drift(prm, st_)
    fd = drift(prm, st_, method="fd")
    assert np.linalg.norm(an - fd) <= 1e-5 * np.linalg.norm(an)


@pytest.mark.parametrize("seed", range(5))
def test_bias_norm_bound(seed):
    alpha = 0.5
    prm, x, _ = _setup(seed, alpha=alpha)
    st_ = metric(prm, x)
    mu = drift(prm, st_)
    assert g_norm(st_, mu) <= 2 * (1 + alpha * math.sqrt(prm.alpha0)) * math.sqrt(3)


@given(st.integers(0, 10 ** 6))
def test_field_time_reversal(seed):
    prm, x, r = _setup(seed, alpha=0.4)
    v = r.standard_normal(3)
    dx, dv = ode_field(prm, PhaseState(x, v))
    dx2, dv2 = ode_field(prm, PhaseState(x, -v))
    np.testing.assert_allclose(dx2, -dx, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(dv2, dv, rtol=1e-12, atol=1e-13)


def _fd_grad_H(prm, x, v, h=1e-5):
    n = len(x)
    gx, gv = np.empty(n), np.empty(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        gx[k] = (hamiltonian(prm, PhaseState(x + e, v))
                 - hamiltonian(prm, PhaseState(x - e, v))) / (2 * h)
        gv[k] = (hamiltonian(prm, PhaseState(x, v + e))
                 - hamiltonian(prm, PhaseState(x, v - e))) / (2 * h)
    return gx, gv


@pytest.mark.parametrize("seed", range(4))
def test_field_is_hamiltonian(seed):
    prm, x, r = _setup(seed, alpha=0.6)
    v = r.standard_normal(3)
    dx, dv = ode_field(prm, PhaseState(x, v))
    gx, gv = _fd_grad_H(prm, x, v)
    np.testing.assert_allclose(dx, gv, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dv, -gx, rtol=1e-6, atol=1e-7 * np.linalg.norm(gx))
    assert abs(gx @ dx + gv @ dv) <= 1e-8 * max(1.0, np.linalg.norm(gx) * np.linalg.norm(dx))


def test_field_cube_center_unit_velocity():
    prm = BarrierParams.for_polytope(cube(2))
    v = np.array([1.0, 0.0])
    st_ = metric(prm, np.zeros(2))
    dx, dv = ode_field(prm, PhaseState(np.zeros(2), v))
    np.testing.assert_allclose(dx, st_.g_inv @ v, rtol=1e-15)
    gx, _ = _fd_grad_H(prm, np.zeros(2), v)
    np.testing.assert_allclose(dv, -gx, atol=1e-7)


def test_zero_time_is_identity():
    prm, x, r = _setup(1)
    v = r.standard_normal(3)
    res = integrate(prm, PhaseState(x, v), 0.0, 0)
    assert not res.rejected and res.steps_taken == 0
    np.testing.assert_array_equal(res.end.x, x)
    np.testing.assert_array_equal(res.end.v, v)
    assert res.energy_error == 0


def _drift_ratio(prm, x, v, T, k):
    e1 = abs(integrate(prm, PhaseState(x, v), T, k, tol_fp=1e-13, max_fp_iter=200).energy_error)
    e2 = abs(integrate(prm, PhaseState(x, v), T, 2 * k, tol_fp=1e-13,
                       max_fp_iter=200).energy_error)
    return e1 / e2


def test_energy_drift_second_order():
    ratios = []
    for seed in range(7):
        prm, x, r = _setup(seed, alpha=0.3)
        st_ = metric(prm, x)
        v = st_.g_chol @ r.standard_normal(3)
        ratios.append(_drift_ratio(prm, x, v, 0.4, 4))
    assert 3 <= np.median(ratios) <= 5


@pytest.mark.parametrize("seed", range(5))
def test_reversibility(seed):
    prm, x, r = _setup(seed, alpha=0.2)
    st_ = metric(prm, x)
    v = st_.g_chol @ r.standard_normal(3)
    fwd = integrate(prm, PhaseState(x, v), 0.3, 6, tol_fp=1e-12)
    if fwd.rejected:
        pytest.skip("forward leg rejected")
    back = integrate(prm, PhaseState(fwd.end.x, -fwd.end.v), 0.3, 6, tol_fp=1e-12)
    assert not back.rejected
    assert g_norm(st_, back.end.x - x) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_compiled_matches_numpy(seed):
    prm, x, r = _setup(seed, alpha=0.5)
    st_ = metric(prm, x)
    v = st_.g_chol @ r.standard_normal(3)
    a = integrate(prm, PhaseState(x, v), 0.2, 4, tol_fp=1e-13, max_fp_iter=100)
    b = integrate(prm, PhaseState(x, v), 0.2, 4, tol_fp=1e-13, max_fp_iter=100, compiled=False)
    c = integrate(prm, PhaseState(x, v), 0.2, 4, tol_fp=1e-13, max_fp_iter=100, anderson=3)
    for other in (b, c):
        np.testing.assert_allclose(other.end.x, a.end.x, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(other.end.v, a.end.v, rtol=1e-9, atol=1e-10)


def test_deterministic():
    prm, x, r = _setup(2, alpha=0.1)
    v = r.standard_normal(3)
    a = integrate(prm, PhaseState(x, v), 0.3, 5, anderson=3)
    b = integrate(prm, PhaseState(x, v), 0.3, 5, anderson=3)
    assert a.end.x.tobytes() == b.end.x.tobytes()
    assert a.energy_end == b.energy_end


@pytest.mark.parametrize("compiled", [True, False])
def test_leaving_polytope_is_rejected(compiled):
    prm = BarrierParams.for_polytope(simplex(2))
    x = np.array([0.3, 0.3])
    st_ = metric(prm, x)
    # a huge momentum along -e1 overshoots the facet x1 = 0 in one step
    res = integrate(prm, PhaseState(x, st_.g @ np.array([-50.0, 0.0])), 1.0, 1,
                    compiled=compiled)
    assert res.rejected and res.reason in (INFEASIBLE, FP_NONCONVERGENCE)
    assert math.isnan(res.energy_end)


def test_accepted_endpoints_are_interior():
    prm, x, r = _setup(4)
    st_ = metric(prm, x)
    for _ in range(10):
        v = st_.g_chol @ r.standard_normal(3)
        res = integrate(prm, PhaseState(x, v), 0.5, 4, anderson=3)
        if not res.rejected:
            assert membership(prm.polytope, res.end.x)
            assert math.isfinite(res.energy_error)
