import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmcvol.barrier import (BarrierParams, default_p, dmetric, dmetric_batch, fd_step, g_norm,
                            grad_logdet_g, metric, metric_other_form, minimize_phi, phi)
from hmcvol.lewis import ParameterError, local_inf_norm
from hmcvol.polytope import (InfeasibleError, Polytope, cross_polytope, cube,
                             find_interior_point, random_polytope, simplex)


def _point(seed, n=3, m=12, frac=None):
    r = np.random.default_rng(seed)
    P = random_polytope(n, m, r)
    u = r.standard_normal(n)
    Au = P.A @ u
    tmax = np.min(np.where(Au < 0, -P.b / np.maximum(-Au, 1e-300), np.inf))
    t = r.uniform(0, 0.95) if frac is None else frac
    return P, t * tmax * u


def _params(P, alpha=0.0):
    return BarrierParams.for_polytope(P, alpha=alpha)


def _whitened_rel(state, M, ref):
    Li = np.linalg.inv(state.g_chol)
    return np.linalg.norm(Li @ (M - ref) @ Li.T) / max(np.linalg.norm(Li @ ref @ Li.T), 1.0)


def test_alpha0_formula():
    for m, n in [(8, 4), (60, 7), (5, 4)]:
        P = random_polytope(n, m, np.random.default_rng(0)) if m >= 2 * n else simplex(n)
        prm = _params(P)
        q = 2 / prm.p
        assert prm.alpha0 == pytest.approx((P.m / P.n) ** (q / (1 + q)), rel=1e-14)
        assert prm.alpha0 >= 1


def test_default_p():
    assert default_p(100) == pytest.approx(4 - 1 / math.log(100))
    assert default_p(2) == pytest.approx(4 - 1 / math.log(2))
    assert default_p(1) == 2.0
    assert default_p(10 ** 500) == 3.999  # 1/log m < 1e-3 is clamped
    with pytest.raises(ParameterError):
        BarrierParams(cube(2), 4.0)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_phi_cube_center_closed_form(n):
    P = cube(n)
    prm = _params(P)
    # A_x^T W^{1-2/p} A_x = 2 (1/2)^{1-2/p} I and the log part vanishes (all slacks 1)
    expected = prm.alpha0 * 0.5 * n * math.log(2 * 0.5 ** (1 - 2 / prm.p))
    assert phi(prm, np.zeros(n)) == pytest.approx(expected, rel=1e-13)


def test_phi_diverges_along_ray():
    P = simplex(3)
    prm = _params(P)
    c = find_interior_point(P).x
    target = np.array([1.0, 0.0, 0.0])
    ts = 1 - np.logspace(-1, -8, 10)
    vals = [phi(prm, c + t * (target - c)) for t in ts]
    assert np.all(np.diff(vals) > 0) and vals[-1] > vals[0] + 5


def test_phi_infeasible_raises():
    with pytest.raises(InfeasibleError):
        phi(_params(cube(2)), [1.0, 0.0])


@given(st.integers(0, 10 ** 6))
def test_phi_translation_invariant(seed):
    P, x = _point(seed)
    shift = np.random.default_rng(seed + 1).standard_normal(3) * 5
    Q = P.translated(shift)
    assert phi(_params(Q), x + shift) == pytest.approx(phi(_params(P), x), abs=1e-12)


def test_grad_zero_at_cube_center():
    st_ = metric(_params(cube(4)), np.zeros(4))
    np.testing.assert_allclose(st_.grad_phi, 0, atol=1e-14)


def _fd_grad(prm, x, h=1e-4):
    out = np.empty(len(x))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = h
        f1, f2 = phi(prm, x + e), phi(prm, x - e)
        f3, f4 = phi(prm, x + 2 * e), phi(prm, x - 2 * e)
        out[k] = (8 * (f1 - f2) - (f3 - f4)) / (12 * h)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_gradient_finite_difference(seed):
    P, x = _point(seed)
    prm = _params(P)
    g = metric(prm, x).grad_phi
    assert np.linalg.norm(_fd_grad(prm, x) - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)


def test_gradient_fd_simplex_center():
    P = simplex(3)
    prm = _params(P)
    x = find_interior_point(P).x + np.array([0.01, -0.02, 0.005])
    g = metric(prm, x).grad_phi
    assert np.linalg.norm(_fd_grad(prm, x) - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_metric_is_fd_hessian(seed):
    P, x = _point(seed)
    prm = _params(P)
    state = metric(prm, x)
    h = 1e-5
    H = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        H[:, k] = (metric(prm, x + e).grad_phi - metric(prm, x - e).grad_phi) / (2 * h)
    assert np.linalg.norm(H - state.g) <= 1e-4 * np.linalg.norm(state.g)


@given(st.integers(0, 10 ** 6))
def test_metric_forms_agree(seed):
    P, x = _point(seed, 4, 15)
    state = metric(_params(P), x)
    other = metric_other_form(state)
    assert np.linalg.norm(other - state.g1) <= 1e-10 * np.linalg.norm(state.g1)
    assert np.linalg.eigvalsh(state.g).min() > 0


@given(st.integers(0, 10 ** 6))
def test_lewis_part_sandwich(seed):
    # A^T W A <= g1 <= (1 + p) A^T W A
    P, x = _point(seed, 3, 10)
    state = metric(_params(P), x)
    A, w, p = state.A_x, state.lewis.w, state.lewis.p
    B = A.T @ (w[:, None] * A)
    L = np.linalg.cholesky(B)
    Li = np.linalg.inv(L)
    lam = np.linalg.eigvalsh(Li @ state.g1 @ Li.T)
    assert lam.min() >= 1 - 1e-10
    assert lam.max() <= (1 + p) * (1 + 1e-10)


@given(st.integers(0, 10 ** 6))
def test_row_norms_and_domination(seed):
    P, x = _point(seed, 4, 16)
    state = metric(_params(P), x)
    A = state.A_x
    assert np.max(np.einsum("ij,jk,ik->i", A, state.g_inv, A)) <= 1 + 1e-8
    r = np.random.default_rng(seed)
    for _ in range(20):
        v = r.standard_normal(4)
        assert local_inf_norm(A, v) <= g_norm(state, v) * (1 + 1e-8)
        # ellipsoid sandwich with g'' = g / alpha0
        gpp = v @ state.g @ v / state.params.alpha0
        assert gpp <= 4 * state.lewis.p * local_inf_norm(A, v) ** 2 * (1 + 1e-6)


def test_g_norm_examples():
    state = metric(_params(cube(3)), np.zeros(3))
    v = np.array([0.2, -1.0, 0.5])
    assert g_norm(state, np.zeros(3)) == 0
    assert g_norm(state, 2 * v) == pytest.approx(2 * g_norm(state, v), rel=1e-15)


def test_barrier_parameter_two_part_bound():
    # the Lewis part and the log part each contribute at most alpha0 n
    r = np.random.default_rng(7)
    for k in range(100):
        P, x = _point(int(r.integers(1 << 30)), 3, int(r.integers(6, 30)))
        state = metric(_params(P), x)
        nu = state.grad_phi @ state.g_inv @ state.grad_phi
        assert nu <= 2 * state.params.alpha0 * 3 * (1 + 1e-6)
        # the corresponding dual-norm statement at alpha = 1
        assert math.sqrt(nu) <= 2 * math.sqrt(3 * state.params.alpha0)


def test_dmetric_linear_and_zero(rng):
    P, x = _point(3)
    state = metric(_params(P), x)
    assert not np.any(dmetric(state, np.zeros(3)))
    u, v = rng.standard_normal(3), rng.standard_normal(3)
    ref = dmetric(state, u + v)
    assert np.linalg.norm(dmetric(state, u) + dmetric(state, v) - ref) <= \
        1e-10 * np.linalg.norm(ref)
    batch = dmetric_batch(state, np.column_stack([u, v]))
    np.testing.assert_allclose(batch[0], dmetric(state, u), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("seed", range(6))
def test_dmetric_finite_difference(seed):
    P, x = _point(seed)
    prm = _params(P)
    state = metric(prm, x)
    v = np.random.default_rng(seed).standard_normal(3)
    v /= g_norm(state, v)

    def fd(h):
        return (metric(prm, x + h * v).g - metric(prm, x - h * v).g) / (2 * h)

    h = 1e-3
    e1, e2 = fd(h), fd(h / 2)
    est = (4 * e2 - e1) / 3
    an = dmetric(state, v)
    assert _whitened_rel(state, e1, e2) <= 1e-3  # Richardson consistency
    assert _whitened_rel(state, est, an) <= 1e-5


def test_grad_logdet_cube_center_and_fd():
    state = metric(_params(cube(3)), np.zeros(3))
    np.testing.assert_allclose(grad_logdet_g(state), 0, atol=1e-12)
    P, x = _point(4)
    state = metric(_params(P), x)
    an = grad_logdet_g(state)
    fd = grad_logdet_g(state, method="fd", h=1e-5)
    assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(an), 1.0)
    v = np.random.default_rng(0).standard_normal(3)
    assert v @ an == pytest.approx(np.trace(state.g_inv @ dmetric(state, v)), rel=1e-10)


def test_gaussian_inf_norm_percentile():
    P, x = _point(9, 5, 40)
    state = metric(_params(P), x)
    Z = np.random.default_rng(1).standard_normal((5, 10_000))
    V = np.linalg.solve(state.g_chol.T, Z)
    q = np.percentile(np.max(np.abs(state.A_x @ V), axis=0), 99)
    assert q <= math.sqrt(2 * math.log(200 * 40))


@given(st.integers(0, 10 ** 6))
def test_compiled_matches_numpy(seed):
    P, x = _point(seed, 4, 13)
    prm = _params(P)
    a = metric(prm, x)
    b = metric(prm, x, compiled=False)
    np.testing.assert_allclose(a.g, b.g, rtol=1e-10)
    assert a.phi == pytest.approx(b.phi, rel=1e-12)
    np.testing.assert_allclose(a.grad_phi, b.grad_phi, rtol=1e-10, atol=1e-12)
    V = np.random.default_rng(seed).standard_normal((4, 2))
    np.testing.assert_allclose(dmetric_batch(a, V), dmetric_batch(b, V), rtol=1e-8,
                               atol=1e-9 * np.abs(dmetric_batch(b, V)).max())


def test_fd_step_shrinks_near_facet():
    prm = _params(cube(2))
    far = metric(prm, np.zeros(2))
    near = metric(prm, np.array([1 - 1e-6, 0.0]))
    assert fd_step(near) < 1e-5 * fd_step(far)


@pytest.mark.parametrize("P", [cube(3), simplex(3), cross_polytope(3)], ids=lambda P: P.name)
def test_minimize_phi(P):
    prm = _params(P)
    st_ = minimize_phi(prm)
    dec = st_.grad_phi @ st_.g_inv @ st_.grad_phi
    assert dec <= 1e-20
    if P.name == "cube3":
        np.testing.assert_allclose(st_.x, 0, atol=1e-12)


def test_rank_deficient_polytope_rejected():
    # a slab in R^2 has no bounded interior and a rank-one A
    with pytest.raises(Exception):
        P = Polytope(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([-1.0, -1.0]))
        metric(_params(P), np.zeros(2))
