# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mirror of ``_pykernel.solve_arrays`` and ``_pykernel.total_cost``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, atan2, cos, sin, fabs, isfinite, INFINITY

cnp.import_array()

DEF NX = 4
DEF N_STEPS = 11
cdef double REG_INIT = 1e-6
cdef double REG_MAX = 1e10
cdef double EIG_FLOOR = 1e-6


cdef struct Prob:
    int N
    bint interp
    double A[4][4]
    double b[4]
    double Q[4][4]
    double P[4][4]
    double S[3][3]
    double R
    double qs1, qs2, qu1, qu2, ql1, ql2, ql3, ql4
    double x0min, x0max, x2min, x2max
    double br[3][3]
    double lam_d


cdef Prob _load(p):
    cdef Prob q
    cdef int i, j
    q.N = p.N
    q.interp = p.interp
    for i in range(4):
        q.b[i] = p.b[i]
        for j in range(4):
            q.A[i][j] = p.A[i, j]
            q.Q[i][j] = p.Q[i, j]
            q.P[i][j] = p.P[i, j]
    for i in range(3):
        for j in range(3):
            q.S[i][j] = p.S[i, j]
            q.br[i][j] = p.bracket[i, j]
    q.R = p.R
    q.qs1, q.qs2, q.qu1, q.qu2, q.ql1, q.ql2, q.ql3, q.ql4 = [float(v) for v in p.barrier]
    q.x0min, q.x0max, q.x2min, q.x2max = [float(v) for v in p.xbounds]
    q.lam_d = p.lambda_d
    return q


cdef inline double _bound(Prob* q, int row, double ls, double lb) nogil:
    return ls * q.br[row][0] + q.lam_d * q.br[row][1] + lb * q.br[row][2]


cdef void _rollout(Prob* q, double[:, ::1] X, double[::1] U) nogil:
    cdef int i, r, c
    cdef double s
    for i in range(q.N):
        for r in range(NX):
            s = q.b[r] * U[i]
            for c in range(NX):
                s += q.A[r][c] * X[i, c]
            X[i + 1, r] = s


cdef double _lam_cost(Prob* q, int i, double ls, double lb, double x1, double x3, double u) nogil:
    """Every term of step ``i`` that depends on the interpolation weights."""
    cdef double lam[3]
    cdef double c = 0.0, sig, b1, b3, bu
    cdef int j, k
    lam[0] = ls
    lam[1] = q.lam_d
    lam[2] = lb
    for j in range(3):
        for k in range(3):
            c += lam[j] * q.S[j][k] * lam[k]
        c += q.ql1 * (exp(-q.ql2 * lam[j]) + exp(q.ql2 * (lam[j] - 1.0)))
    sig = lam[0] + lam[1] + lam[2]
    c += q.ql3 * (exp(q.ql4 * (1.0 - sig)) + exp(q.ql4 * (sig - 1.0)))
    b1 = _bound(q, 0, ls, lb)
    b3 = _bound(q, 1, ls, lb)
    c += exp(-b1 - x1) + exp(x1 - b1)
    c += exp(-b3 - x3) + exp(x3 - b3)
    if i < q.N:
        bu = _bound(q, 2, ls, lb)
        c += q.qu1 * (exp(q.qu2 * (-bu - u)) + exp(q.qu2 * (u - bu)))
    if not isfinite(c):
        return INFINITY
    return c


cdef double _cost(Prob* q, double[:, ::1] X, double[::1] U, double[:, ::1] L) nogil:
    cdef int N = q.N, i, r, c, j, k
    cdef double tot = 0.0, xq, ls, lb, b1, b3, bu, sig, v
    cdef double lam[3]
    for i in range(N + 1):
        xq = 0.0
        for r in range(NX):
            for c in range(NX):
                if i < N:
                    xq += X[i, r] * q.Q[r][c] * X[i, c]
                else:
                    xq += X[i, r] * q.P[r][c] * X[i, c]
        tot += xq
        tot += q.qs1 * (exp(q.qs2 * (q.x0min - X[i, 0])) + exp(q.qs2 * (X[i, 0] - q.x0max)))
        tot += q.qs1 * (exp(q.qs2 * (q.x2min - X[i, 2])) + exp(q.qs2 * (X[i, 2] - q.x2max)))
        ls = L[i, 0]
        lb = L[i, 1]
        b1 = _bound(q, 0, ls, lb)
        b3 = _bound(q, 1, ls, lb)
        tot += exp(-b1 - X[i, 1]) + exp(X[i, 1] - b1)
        tot += exp(-b3 - X[i, 3]) + exp(X[i, 3] - b3)
        if i < N:
            tot += q.R * U[i] * U[i]
            bu = _bound(q, 2, ls, lb)
            tot += q.qu1 * (exp(q.qu2 * (-bu - U[i])) + exp(q.qu2 * (U[i] - bu)))
        if q.interp:
            lam[0] = ls
            lam[1] = q.lam_d
            lam[2] = lb
            for j in range(3):
                for k in range(3):
                    tot += lam[j] * q.S[j][k] * lam[k]
                tot += q.ql1 * (exp(-q.ql2 * lam[j]) + exp(q.ql2 * (lam[j] - 1.0)))
            sig = lam[0] + lam[1] + lam[2]
            tot += q.ql3 * (exp(q.ql4 * (1.0 - sig)) + exp(q.ql4 * (sig - 1.0)))
    if not isfinite(tot):
        return INFINITY
    return tot


cdef int _backward(Prob* q, double[:, ::1] X, double[::1] U, double[:, ::1] L,
                   double[::1] kff, double[:, ::1] Kfb) nogil:
    """Returns 0 on success, -1 if the control Hessian could not be regularised."""
    cdef int N = q.N, i, r, c, m
    cdef double gx[4]
    cdef double hx[4]
    cdef double Vx[4]
    cdef double Vxx[4][4]
    cdef double VxxA[4][4]
    cdef double Vxxb[4]
    cdef double Qx[4]
    cdef double Qux[4]
    cdef double Qxx[4][4]
    cdef double Qu, Quu, gu, huu, reg = 0.0, ehi, elo, b1, b3, bu, s
    cdef bint ok
    while True:
        ok = True
        for i in range(N, -1, -1):
            # state derivatives at step i
            b1 = _bound(q, 0, L[i, 0], L[i, 1])
            b3 = _bound(q, 1, L[i, 0], L[i, 1])
            for r in range(NX):
                s = 0.0
                for c in range(NX):
                    s += (q.Q[r][c] if i < N else q.P[r][c]) * X[i, c]
                gx[r] = 2.0 * s
                hx[r] = 0.0
            ehi = exp(q.qs2 * (X[i, 0] - q.x0max))
            elo = exp(q.qs2 * (q.x0min - X[i, 0]))
            gx[0] += q.qs1 * q.qs2 * (ehi - elo)
            hx[0] += q.qs1 * q.qs2 * q.qs2 * (ehi + elo)
            ehi = exp(q.qs2 * (X[i, 2] - q.x2max))
            elo = exp(q.qs2 * (q.x2min - X[i, 2]))
            gx[2] += q.qs1 * q.qs2 * (ehi - elo)
            hx[2] += q.qs1 * q.qs2 * q.qs2 * (ehi + elo)
            ehi = exp(X[i, 1] - b1)
            elo = exp(-b1 - X[i, 1])
            gx[1] += ehi - elo
            hx[1] += ehi + elo
            ehi = exp(X[i, 3] - b3)
            elo = exp(-b3 - X[i, 3])
            gx[3] += ehi - elo
            hx[3] += ehi + elo
            if i == N:
                for r in range(NX):
                    Vx[r] = gx[r]
                    for c in range(NX):
                        Vxx[r][c] = 2.0 * q.P[r][c]
                    Vxx[r][r] += hx[r]
                continue
            bu = _bound(q, 2, L[i, 0], L[i, 1])
            ehi = exp(q.qu2 * (U[i] - bu))
            elo = exp(q.qu2 * (-bu - U[i]))
            gu = 2.0 * q.R * U[i] + q.qu1 * q.qu2 * (ehi - elo)
            huu = 2.0 * q.R + q.qu1 * q.qu2 * q.qu2 * (ehi + elo)
            for r in range(NX):
                Vxxb[r] = 0.0
                for c in range(NX):
                    s = 0.0
                    for m in range(NX):
                        s += Vxx[r][m] * q.A[m][c]
                    VxxA[r][c] = s
                    Vxxb[r] += Vxx[r][c] * q.b[c]
            Qu = gu
            Quu = huu + reg
            for r in range(NX):
                Qu += q.b[r] * Vx[r]
                Quu += q.b[r] * Vxxb[r]
            for c in range(NX):
                s = gx[c]
                for m in range(NX):
                    s += q.A[m][c] * Vx[m]
                Qx[c] = s
                s = 0.0
                for m in range(NX):
                    s += q.b[m] * VxxA[m][c]
                Qux[c] = s
            for r in range(NX):
                for c in range(NX):
                    s = 2.0 * q.Q[r][c]
                    for m in range(NX):
                        s += q.A[m][r] * VxxA[m][c]
                    Qxx[r][c] = s
                Qxx[r][r] += hx[r]
            if not Quu > 0.0:
                ok = False
                break
            kff[i] = -Qu / Quu
            for c in range(NX):
                Kfb[i, c] = -Qux[c] / Quu
            for r in range(NX):
                Vx[r] = Qx[r] + Kfb[i, r] * (Quu * kff[i] + Qu) + Qux[r] * kff[i]
                for c in range(NX):
                    Vxx[r][c] = (Qxx[r][c] + Quu * Kfb[i, r] * Kfb[i, c]
                                 + Kfb[i, r] * Qux[c] + Qux[r] * Kfb[i, c])
            for r in range(NX):
                for c in range(r + 1, NX):
                    s = 0.5 * (Vxx[r][c] + Vxx[c][r])
                    Vxx[r][c] = s
                    Vxx[c][r] = s
        if ok:
            return 0
        reg = REG_INIT if reg == 0.0 else reg * 10.0
        if reg > REG_MAX:
            return -1


cdef double _forward(Prob* q, double[:, ::1] X, double[::1] U, double[:, ::1] L,
                     double[::1] kff, double[:, ::1] Kfb, double step,
                     double[:, ::1] Xn, double[::1] Un) nogil:
    cdef int N = q.N, i, r, c
    cdef double u, s
    for r in range(NX):
        Xn[0, r] = X[0, r]
    for i in range(N):
        u = U[i] + step * kff[i]
        for c in range(NX):
            u += Kfb[i, c] * (Xn[i, c] - X[i, c])
        Un[i] = u
        for r in range(NX):
            s = q.b[r] * u
            for c in range(NX):
                s += q.A[r][c] * Xn[i, c]
            if not isfinite(s):
                return INFINITY
            Xn[i + 1, r] = s
    return _cost(q, Xn, Un, L)


cdef void _lambda_step(Prob* q, double[:, ::1] X, double[::1] U, double[:, ::1] L) nogil:
    cdef int N = q.N, i, j, k, row, t
    cdef double lam[3]
    cdef double S2[3][3]
    cdef double g0, g1, h00, h01, h11, elo, ehi, em, ep, sig, f, sharp, d0, d1, bnd, xv
    cdef double a, bb, cc, mean, rad, l1, l2, th, cs, sn, p1, p2, dir0, dir1, u, base, trial, stp
    for j in range(3):
        for k in range(3):
            S2[j][k] = q.S[j][k] + q.S[k][j]
    for i in range(N + 1):
        lam[0] = L[i, 0]
        lam[1] = q.lam_d
        lam[2] = L[i, 1]
        u = U[i] if i < N else 0.0
        g0 = S2[0][0] * lam[0] + S2[0][1] * lam[1] + S2[0][2] * lam[2]
        g1 = S2[2][0] * lam[0] + S2[2][1] * lam[1] + S2[2][2] * lam[2]
        h00 = S2[0][0]
        h01 = S2[0][2]
        h11 = S2[2][2]
        elo = exp(-q.ql2 * lam[0])
        ehi = exp(q.ql2 * (lam[0] - 1.0))
        g0 += q.ql1 * q.ql2 * (ehi - elo)
        h00 += q.ql1 * q.ql2 * q.ql2 * (elo + ehi)
        elo = exp(-q.ql2 * lam[2])
        ehi = exp(q.ql2 * (lam[2] - 1.0))
        g1 += q.ql1 * q.ql2 * (ehi - elo)
        h11 += q.ql1 * q.ql2 * q.ql2 * (elo + ehi)
        sig = lam[0] + lam[1] + lam[2]
        em = exp(q.ql4 * (1.0 - sig))
        ep = exp(q.ql4 * (sig - 1.0))
        f = q.ql3 * q.ql4 * (ep - em)
        g0 += f
        g1 += f
        f = q.ql3 * q.ql4 * q.ql4 * (ep + em)
        h00 += f
        h01 += f
        h11 += f
        for row in range(3):
            if row == 2 and i == N:
                continue
            bnd = _bound(q, row, lam[0], lam[2])
            if row == 2:
                xv = u
                sharp = q.qu2
                f = q.qu1 * (exp(q.qu2 * (-bnd - u)) + exp(q.qu2 * (u - bnd)))
            else:
                xv = X[i, 1] if row == 0 else X[i, 3]
                sharp = 1.0
                f = exp(-bnd - xv) + exp(xv - bnd)
            d0 = q.br[row][0]
            d1 = q.br[row][2]
            g0 -= sharp * f * d0
            g1 -= sharp * f * d1
            h00 += sharp * sharp * f * d0 * d0
            h01 += sharp * sharp * f * d0 * d1
            h11 += sharp * sharp * f * d1 * d1
        # eigenvalue-floored Newton direction
        a = h00
        bb = h01
        cc = h11
        mean = 0.5 * (a + cc)
        rad = sqrt((0.5 * (a - cc)) * (0.5 * (a - cc)) + bb * bb)
        l1 = mean + rad
        l2 = mean - rad
        if l1 < EIG_FLOOR:
            l1 = EIG_FLOOR
        if l2 < EIG_FLOOR:
            l2 = EIG_FLOOR
        th = 0.5 * atan2(2.0 * bb, a - cc)
        cs = cos(th)
        sn = sin(th)
        p1 = (cs * g0 + sn * g1) / l1
        p2 = (-sn * g0 + cs * g1) / l2
        dir0 = -(cs * p1 - sn * p2)
        dir1 = -(sn * p1 + cs * p2)
        base = _lam_cost(q, i, lam[0], lam[2], X[i, 1], X[i, 3], u)
        stp = 1.0
        for t in range(N_STEPS):
            trial = _lam_cost(q, i, lam[0] + stp * dir0, lam[2] + stp * dir1, X[i, 1], X[i, 3], u)
            if trial <= base:
                L[i, 0] = lam[0] + stp * dir0
                L[i, 1] = lam[2] + stp * dir1
                break
            stp *= 0.5


def total_cost(p, X, U, L):
    cdef Prob q = _load(p)
    return _cost(&q, np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(U, dtype=float),
                 np.ascontiguousarray(L, dtype=float))


def solve_arrays(p, x0, U0, L0):
    """Same contract as the numpy reference: returns ``(X, U, L, cost, iterations, converged)``."""
    cdef Prob q = _load(p)
    cdef int N = q.N, it = 0, t, max_iter = p.max_iter, status = 0
    cdef double tol = p.tol, cost, prev, cn, step
    cdef bint converged = False
    X_a = np.empty((N + 1, NX))
    Xn_a = np.empty((N + 1, NX))
    U_a = np.array(U0, dtype=float)
    Un_a = np.empty(N)
    L_a = np.array(L0, dtype=float)
    k_a = np.empty(N)
    K_a = np.empty((N, NX))
    cdef double[:, ::1] X = X_a
    cdef double[:, ::1] Xn = Xn_a
    cdef double[::1] U = U_a
    cdef double[::1] Un = Un_a
    cdef double[:, ::1] L = L_a
    cdef double[::1] kff = k_a
    cdef double[:, ::1] Kfb = K_a
    cdef int r
    for r in range(NX):
        X[0, r] = x0[r]
    with nogil:
        _rollout(&q, X, U)
        cost = _cost(&q, X, U, L)
        it = 0
        while it < max_iter:
            it += 1
            prev = cost
            status = _backward(&q, X, U, L, kff, Kfb)
            if status != 0:
                break
            step = 1.0
            for t in range(N_STEPS):
                cn = _forward(&q, X, U, L, kff, Kfb, step, Xn, Un)
                if cn < cost:
                    X[:, :] = Xn
                    U[:] = Un
                    cost = cn
                    break
                step *= 0.5
            if q.interp:
                _lambda_step(&q, X, U, L)
                cost = _cost(&q, X, U, L)
            if isfinite(prev) and prev - cost <= tol * (fabs(prev) if fabs(prev) > 1e-12 else 1e-12):
                converged = True
                break
    if status != 0:
        raise FloatingPointError("control Hessian not positive definite after maximal regularisation")
    return X_a, U_a, L_a, cost, it, converged
