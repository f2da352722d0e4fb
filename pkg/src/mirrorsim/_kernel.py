"""Compiled inner loops of the solver.

Everything here works on plain arrays.  Matrices and vectors have one extra
trailing row/slot standing for ground (index ``n``); its contents are junk
and never reach the linear solve.  MOSFETs are described by an integer array
``mos_i`` of ``(drain, gate, source)`` indices and a float array ``mos_f`` of
``(beta, vt0, lam)``.
"""

import numpy as np
from numba import njit

from .devices import drift_update, mosfet_iv

OK, SINGULAR, NO_CONVERGENCE = 0, 1, 2


@njit(cache=True)
def residual(A, b, x, gmin, n_nodes, mos_i, mos_f):
    """``(J, F)`` with ``F(x) = A x - b + i_mos(x) + gmin*v`` and its Jacobian."""
    J = A.copy()
    F = A @ x - b
    for k in range(mos_i.shape[0]):
        d, g, s = mos_i[k, 0], mos_i[k, 1], mos_i[k, 2]
        vs = x[s]
        i, gm, gds = mosfet_iv(x[g] - vs, x[d] - vs, mos_f[k, 0], mos_f[k, 1], mos_f[k, 2])
        F[d] += i
        F[s] -= i
        J[d, g] += gm
        J[d, d] += gds
        J[d, s] -= gm + gds
        J[s, g] -= gm
        J[s, d] -= gds
        J[s, s] += gm + gds
    if gmin != 0.0:
        for j in range(n_nodes):
            J[j, j] += gmin
            F[j] += gmin * x[j]
    return J, F


@njit(cache=True)
def lu_solve(M, r, n):
    """Solve the leading ``n x n`` block of ``M`` against ``r``; partial pivoting.

    Returns ``(x, ok)``; ``ok`` is False for an exactly or numerically singular block.
    """
    a = M[:n, :n].copy()
    y = r[:n].copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(a[i, j]))
    tiny = scale * 1e-300 if scale > 0.0 else 1e-300
    for c in range(n):
        p = c
        best = abs(a[c, c])
        for i in range(c + 1, n):
            if abs(a[i, c]) > best:
                best = abs(a[i, c])
                p = i
        if not best > tiny:
            return y, False
        if p != c:
            for j in range(n):
                a[c, j], a[p, j] = a[p, j], a[c, j]
            y[c], y[p] = y[p], y[c]
        piv = a[c, c]
        for i in range(c + 1, n):
            f = a[i, c] / piv
            if f != 0.0:
                for j in range(c + 1, n):
                    a[i, j] -= f * a[c, j]
                y[i] -= f * y[c]
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= a[i, j] * y[j]
        y[i] = acc / a[i, i]
    for i in range(n):
        if not np.isfinite(y[i]):
            return y, False
    return y, True


@njit(cache=True)
def newton(A, b, x0, gmin, n, n_nodes, mos_i, mos_f, max_iter, vtol, itol, step_limit):
    """Damped Newton-Raphson.  Returns ``(x, iterations, status, last_residual)``."""
    x = x0.copy()
    x[n] = 0.0
    resid = np.inf
    for it in range(1, max_iter + 1):
        J, F = residual(A, b, x, gmin, n_nodes, mos_i, mos_f)
        dx, ok = lu_solve(J, -F, n)
        if not ok:
            return x, it, SINGULAR, resid
        resid = 0.0
        vstep = 0.0
        for j in range(n_nodes):
            resid = max(resid, abs(F[j]))
            vstep = max(vstep, abs(dx[j]))
        if vstep < vtol and resid < itol:
            for j in range(n):
                x[j] += dx[j]
            return x, it, OK, resid
        damp = step_limit / vstep if vstep > step_limit else 1.0
        for j in range(n):
            x[j] += damp * dx[j]
    return x, max_iter, NO_CONVERGENCE, resid


@njit(cache=True)
def transient(
    G, B, dt, x0, icap0, cap_ab, cap_c, mem_ab, mem_f, mem_p, mem_x0,
    n, n_nodes, mos_i, mos_f, max_iter, vtol, itol, step_limit,
):
    """Fixed-step transient; backward Euler on step 1, trapezoidal afterwards.

    ``G`` holds the static stamps (resistors, voltage sources).  ``mem_f``
    rows are ``(r_on, r_off, drift_rate, v_t)``.  Returns
    ``(X, I_cap, M, status, failed_step, residual)``; sample ``k`` of ``M``
    is the memristor state used while solving step ``k``.
    """
    n_steps = B.shape[0] - 1
    n_cap = cap_c.shape[0]
    n_mem = mem_x0.shape[0]
    X = np.empty((n_steps + 1, n + 1))
    I_cap = np.empty((n_steps + 1, n_cap))
    M = np.empty((n_steps + 1, n_mem))
    x = x0.copy()
    x_prev = x0.copy()
    i_cap = icap0.copy()
    mx = mem_x0.copy()
    X[0] = x
    I_cap[0] = i_cap
    M[0] = mx
    hist = np.zeros(n_cap)
    geq = np.zeros(n_cap)
    A = G.copy()
    dirty = True
    for k in range(1, n_steps + 1):
        scale = (1.0 if k == 1 else 2.0) / dt
        if dirty or k <= 2:
            A = G.copy()
            for j in range(n_cap):
                a, c = cap_ab[j, 0], cap_ab[j, 1]
                g = scale * cap_c[j]
                A[a, a] += g
                A[c, c] += g
                A[a, c] -= g
                A[c, a] -= g
            for j in range(n_mem):
                a, c = mem_ab[j, 0], mem_ab[j, 1]
                g = 1.0 / (mem_f[j, 0] * mx[j] + mem_f[j, 1] * (1.0 - mx[j]))
                A[a, a] += g
                A[c, c] += g
                A[a, c] -= g
                A[c, a] -= g
            dirty = False
        b = B[k].copy()
        for j in range(n_cap):
            a, c = cap_ab[j, 0], cap_ab[j, 1]
            geq[j] = scale * cap_c[j]
            hist[j] = geq[j] * (x[a] - x[c])
            if k > 1:
                hist[j] += i_cap[j]
            b[a] += hist[j]
            b[c] -= hist[j]
        if k == 1:
            guess = x.copy()
        else:
            guess = 2.0 * x - x_prev
        x_new, _, status, resid = newton(
            A, b, guess, 0.0, n, n_nodes, mos_i, mos_f, max_iter, vtol, itol, step_limit
        )
        if status != OK:
            x_new, _, status, resid = newton(
                A, b, x, 0.0, n, n_nodes, mos_i, mos_f, max_iter, vtol, itol, step_limit
            )
            if status != OK:
                return X[:k], I_cap[:k], M[:k], status, k, resid
        for j in range(n_cap):
            a, c = cap_ab[j, 0], cap_ab[j, 1]
            i_cap[j] = geq[j] * (x_new[a] - x_new[c]) - hist[j]
        x_prev = x
        x = x_new
        X[k] = x
        I_cap[k] = i_cap
        M[k] = mx
        for j in range(n_mem):
            a, c = mem_ab[j, 0], mem_ab[j, 1]
            v = x[a] - x[c]
            xm = mx[j]
            i = v / (mem_f[j, 0] * xm + mem_f[j, 1] * (1.0 - xm))
            xn = drift_update(xm, i, v, dt, mem_f[j, 2], mem_p[j], mem_f[j, 3])
            if xn != xm:
                mx[j] = xn
                dirty = True
    return X, I_cap, M, OK, n_steps, 0.0
