"""Compiled kernels for the per-point geometry used inside trajectories.

These mirror ``lewis.lewis_weights``, ``barrier.metric`` and
``barrier._dmetric_batch`` operation for operation; the numpy versions stay
the reference and the test suite checks agreement.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
INFEASIBLE = 1
NO_CONVERGENCE = 2
RANK = 3

# Lewis solve: accept a residual stuck for STALL_ITERS iterations if within STALL_FACTOR * tol
STALL_ITERS = 5
STALL_FACTOR = 100.0


@njit(cache=True)
def _chol(M):
    n = M.shape[0]
    try:
        return np.linalg.cholesky(M), True
    except Exception:  # noqa: BLE001
        pass
    jitter = 1e-12 * np.trace(M) / n
    try:
        return np.linalg.cholesky(M + jitter * np.eye(n)), True
    except Exception:  # noqa: BLE001
        return np.zeros_like(M), False


@njit(cache=True)
def _projection(A, u):
    # thin QR of U^{1/2} A; avoids squaring the condition number of A_x
    m, n = A.shape
    su = np.sqrt(u)
    Q, R = np.linalg.qr(A * su.reshape(m, 1))
    d = np.abs(np.diag(R))
    if np.min(d) <= 1e-14 * np.max(d):
        return np.zeros((m, m)), 0.0, False
    Q = np.ascontiguousarray(Q)
    P = Q @ Q.T
    logdet = 2.0 * np.sum(np.log(d))
    return P, logdet, True


@njit(cache=True)
def lewis_newton(A, p, w0, tol, max_iter):
    """Return (w, P, gram_logdet, iterations, residual, status).

    Besides the step and residual tests, a residual that has stopped
    improving (roundoff floor) within ``STALL_FACTOR * tol`` counts as converged.
    """
    m = A.shape[0]
    c = 1.0 - 2.0 / p
    w = w0.copy()
    P = np.zeros((m, m))
    logdet = 0.0
    residual = np.inf
    best = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        u = w ** c
        P, logdet, ok = _projection(A, u)
        if not ok:
            return w, P, logdet, it, residual, RANK
        sigma = np.diag(P).copy()
        F = sigma - w
        residual = np.max(np.abs(F))
        if residual <= 0.5 * best:
            best = residual
            stall = 0
        else:
            stall += 1
            if stall >= STALL_ITERS and residual <= STALL_FACTOR * tol:
                return w, P, logdet, it, residual, OK
        use_newton = c > 0
        step = np.zeros(m)
        if use_newton:
            J = c * (P * P)
            for i in range(m):
                J[i, i] += w[i] - c * sigma[i]
            try:
                step = np.linalg.solve(J, F)
            except Exception:  # noqa: BLE001
                use_newton = False
            if use_newton:
                big = np.max(np.abs(step))
                if not (np.isfinite(big) and big < 0.5):
                    use_newton = False
        if not use_newton:
            step = 0.5 * p * (np.log(sigma) - np.log(w))
        if np.max(np.abs(step)) <= tol or residual <= tol:
            return w, P, logdet, it, residual, OK
        w = w * np.exp(step)
    return w, P, logdet, max_iter, residual, NO_CONVERGENCE


@njit(cache=True)
def gsolve(G, w, X):
    """``G^{-1} X`` through the well-conditioned ``W^{-1/2} G W^{-1/2}``."""
    m = w.shape[0]
    r = 1.0 / np.sqrt(w)
    Gh = G * r.reshape(m, 1) * r.reshape(1, m)
    return np.linalg.solve(Gh, X * r.reshape(m, 1)) * r.reshape(m, 1)


@njit(cache=True)
def geometry(Araw, b, x, p, a0, w0, use_w0, tol, max_iter):
    m, n = Araw.shape
    s = Araw @ x - b
    status = OK
    for i in range(m):
        if not s[i] > 0:
            status = INFEASIBLE
    A = Araw / s.reshape(m, 1)
    z_mm = np.zeros((m, m))
    z_nn = np.zeros((n, n))
    if status != OK:
        return (s, A, np.zeros(m), z_mm, z_mm, z_mm, z_mm, z_mm, z_nn, z_nn, z_nn,
                np.zeros(n), 0.0, 0.0, 0.0, 0, np.inf, status)
    if use_w0:
        w_init = w0
    else:
        P0, _, ok = _projection(A, np.ones(m))
        if not ok:
            return (s, A, np.zeros(m), z_mm, z_mm, z_mm, z_mm, z_mm, z_nn, z_nn, z_nn,
                    np.zeros(n), 0.0, 0.0, 0.0, 0, np.inf, RANK)
        w_init = np.diag(P0).copy()
    w, P, gram_logdet, iters, residual, status = lewis_newton(A, p, w_init, tol, max_iter)
    if status != OK:
        return (s, A, w, P, z_mm, z_mm, z_mm, z_mm, z_nn, z_nn, z_nn,
                np.zeros(n), 0.0, 0.0, gram_logdet, iters, residual, status)
    c = 1.0 - 2.0 / p
    P2 = P * P
    Lam = -P2
    G = c * P2
    for i in range(m):
        Lam[i, i] += w[i]
        G[i, i] += (2.0 / p) * w[i]
    GinvLam = gsolve(G, w, Lam)
    M2 = 2.0 * Lam + (2.0 * c) * (Lam @ GinvLam)
    for i in range(m):
        M2[i, i] += w[i]
    M2 = 0.5 * (M2 + M2.T)
    ratio = n / m
    Mg = M2.copy()
    for i in range(m):
        Mg[i, i] += ratio
    g = a0 * (A.T @ (Mg @ A))
    g = 0.5 * (g + g.T)
    L, ok = _chol(g)
    if not ok:
        return (s, A, w, P, Lam, G, GinvLam, M2, g, z_nn, z_nn,
                np.zeros(n), 0.0, 0.0, gram_logdet, iters, residual, RANK)
    Linv = np.linalg.solve(L, np.eye(n))
    g_inv = Linv.T @ Linv
    logdet_g = 2.0 * np.sum(np.log(np.diag(L)))
    grad = -a0 * (A.T @ (w + ratio))
    phi = a0 * (0.5 * gram_logdet - ratio * np.sum(np.log(s)))
    return (s, A, w, P, Lam, G, GinvLam, M2, g, L, g_inv, grad, logdet_g, phi,
            gram_logdet, iters, residual, OK)


@njit(cache=True)
def dmetric_batch(A, w, p, P, Lam, G, GinvLam, M2, a0, V):
    m, n = A.shape
    q = V.shape[1]
    c = 1.0 - 2.0 / p
    S = A @ V
    r = gsolve(G, w, S * w.reshape(m, 1))
    dw = -2.0 * (Lam @ r)
    H = GinvLam
    HT = np.ascontiguousarray(H.T)
    ratio = n / m
    B = M2 @ A
    for i in range(m):
        for j in range(n):
            B[i, j] += ratio * A[i, j]
    out = np.empty((q, n, n))
    for k in range(q):
        rk = np.ascontiguousarray(r[:, k])
        sk = np.ascontiguousarray(S[:, k])
        PR = P * rk.reshape(1, m)
        PRP = PR @ P
        DP = 2.0 * PRP - rk.reshape(m, 1) * P - PR
        DP2 = 2.0 * P * DP
        DLam = -DP2
        DG = c * DP2
        for i in range(m):
            DLam[i, i] += dw[i, k]
            DG[i, i] += (1.0 - c) * dw[i, k]
        inner = DLam @ H
        DM2 = 2.0 * DLam + (2.0 * c) * (inner + inner.T - HT @ (DG @ H))
        for i in range(m):
            DM2[i, i] += dw[i, k]
        core = A.T @ (DM2 @ A)
        left = (A * sk.reshape(m, 1)).T @ B
        out[k] = a0 * (core - left - left.T)
    return out


FP_FAIL = 4


@njit(cache=True)
def _field(Araw, b, x, v, p, a0, alpha, w0, tol, max_iter):
    (s, A, w, P, Lam, G, GinvLam, M2, g, L, g_inv, grad, logdet_g, phi, gram_logdet,
     iters, residual, status) = geometry(Araw, b, x, p, a0, w0, True, tol, max_iter)
    n = x.shape[0]
    if status != OK:
        return np.zeros(n), np.zeros(n), w, g, g_inv, status
    dg = dmetric_batch(A, w, p, P, Lam, G, GinvLam, M2, a0, np.eye(n))
    dx = g_inv @ v
    dv = -alpha * grad
    for k in range(n):
        t = 0.0
        q = 0.0
        for i in range(n):
            for j in range(n):
                t += g_inv[i, j] * dg[k, j, i]
                q += dg[k, i, j] * dx[i] * dx[j]
        dv[k] += -0.5 * t + 0.5 * q
    return dx, dv, w, g, g_inv, OK


@njit(cache=True)
def midpoint_trajectory(Araw, b, p, a0, alpha, x0, v0, w0, h, n_steps, tol_fp, max_fp,
                        lewis_tol, lewis_max_iter, memory):
    """Compiled twin of ``dynamics.integrate``'s loop.

    ``memory > 0`` switches the midpoint solve from damped fixed-point
    iteration to Anderson acceleration with that many stored differences,
    mixed in coordinates whitened by the metric at the step's first iterate.
    Returns (x, v, w, steps_done, fp_total, status).
    """
    n = x0.shape[0]
    x = x0.copy()
    v = v0.copy()
    half = 0.5 * h
    fdx, fdv, w, _, _, status = _field(Araw, b, x, v, p, a0, alpha, w0, lewis_tol,
                                       lewis_max_iter)
    fp_total = 0
    if status != OK:
        return x, v, w, 0, fp_total, status
    mem = max(memory, 1)
    dF = np.zeros((mem, 2 * n))
    dG = np.zeros((mem, 2 * n))
    xm_1 = x.copy()
    vm_1 = v.copy()
    xm_2 = x.copy()
    vm_2 = v.copy()
    for step in range(n_steps):
        if step == 0:
            xm = x + half * fdx
            vm = v + half * fdv
        elif step == 1:
            xm = 2.0 * x - xm_1
            vm = 2.0 * v - vm_1
        else:
            xm = xm_2 / 3.0 - 2.0 * xm_1 + (8.0 / 3.0) * x
            vm = vm_2 / 3.0 - 2.0 * vm_1 + (8.0 / 3.0) * v
        damping = 1.0
        prev_err = np.inf
        converged = False
        Lw = np.eye(n)
        Lw_inv = np.eye(n)
        f_prev = np.zeros(2 * n)
        g_prev = np.zeros(2 * n)
        n_hist = 0
        head = 0
        for it in range(max_fp):
            fp_total += 1
            fdx, fdv, w_new, g, g_inv, status = _field(Araw, b, xm, vm, p, a0, alpha, w,
                                                       lewis_tol, lewis_max_iter)
            if status != OK:
                return x, v, w, step, fp_total, status
            w = w_new
            dxm = x + half * fdx - xm
            dvm = v + half * fdv - vm
            err = np.sqrt(max(dxm @ (g @ dxm), 0.0)) + np.sqrt(max(dvm @ (g_inv @ dvm), 0.0))
            if err <= tol_fp or memory <= 0:
                if err > prev_err and damping == 1.0:
                    damping = 0.5
                prev_err = err
                xm = xm + damping * dxm
                vm = vm + damping * dvm
                if err <= tol_fp:
                    converged = True
                    break
                continue
            if it == 0:
                Lw = np.linalg.cholesky(g)
                Lw_inv = np.ascontiguousarray(np.linalg.solve(Lw, np.eye(n)))
            # whitened residual f and image G(u) = u + f
            f = np.empty(2 * n)
            gimg = np.empty(2 * n)
            f[:n] = Lw.T @ dxm
            f[n:] = Lw_inv @ dvm
            gimg[:n] = Lw.T @ (xm + dxm)
            gimg[n:] = Lw_inv @ (vm + dvm)
            if it > 0:
                dF[head] = f - f_prev
                dG[head] = gimg - g_prev
                head = (head + 1) % mem
                n_hist = min(n_hist + 1, mem)
            f_prev = f
            g_prev = gimg
            u_new = gimg.copy()
            if n_hist > 0:
                Fm = dF[:n_hist]
                Gm = dG[:n_hist]
                N = Fm @ Fm.T
                reg = 1e-12 * np.trace(N) + 1e-300
                for i in range(n_hist):
                    N[i, i] += reg
                gamma = np.linalg.solve(N, Fm @ f)
                u_new = gimg - Gm.T @ gamma
            xm = Lw_inv.T @ u_new[:n]
            vm = Lw @ u_new[n:]
        if not converged:
            return x, v, w, step, fp_total, FP_FAIL
        xm_2 = xm_1
        vm_2 = vm_1
        xm_1 = xm
        vm_1 = vm
        x = 2.0 * xm - x
        v = 2.0 * vm - v
        s = Araw @ x - b
        for i in range(s.shape[0]):
            if not s[i] > 0:
                return x, v, w, step + 1, fp_total, INFEASIBLE
    return x, v, w, n_steps, fp_total, OK
