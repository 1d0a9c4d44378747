"""Reference numpy implementation of the barrier-ILQR kernel.

Every function takes a :class:`~itube.cilqr.problem.CilqrProblem` plus the
trajectory arrays ``X (N+1, 4)``, ``U (N,)`` and ``L (N+1, 2)`` holding the
free interpolation weights ``(lam_s, lam_b)``. The compiled kernel mirrors
:func:`solve_arrays` and :func:`total_cost` exactly.
"""

from __future__ import annotations

import numpy as np

LINE_SEARCH_STEPS = tuple(0.5**k for k in range(11))
REG_INIT = 1e-6
REG_MAX = 1e10
EIG_FLOOR = 1e-6


def rollout(p, x0, U) -> np.ndarray:
    X = np.empty((U.shape[0] + 1, 4))
    X[0] = x0
    for i in range(U.shape[0]):
        X[i + 1] = p.A @ X[i] + p.b * U[i]
    return X


def effective_bounds(p, L) -> np.ndarray:
    """Per-step bounds for ``(x1, x3, steer)``, shape (N+1, 3)."""
    lam = np.column_stack([L[:, 0], np.full(L.shape[0], p.lambda_d), L[:, 1]])
    return lam @ p.bracket.T


def cost_terms(p, X, U, L) -> dict:
    """Each additive term of the objective, keyed by name."""
    qs1, qs2, qu1, qu2, ql1, ql2, ql3, ql4 = p.barrier
    x0min, x0max, x2min, x2max = p.xbounds
    N = p.N
    bnd = effective_bounds(p, L)
    with np.errstate(over="ignore", invalid="ignore"):
        terms = {
            "stage": float(np.einsum("ij,jk,ik->", X[:N], p.Q, X[:N]) + p.R * np.dot(U, U)),
            "terminal": float(X[N] @ p.P @ X[N]),
            "x0": qs1
            * float(
                np.sum(np.exp(qs2 * (x0min - X[:, 0])) + np.exp(qs2 * (X[:, 0] - x0max)))
                + np.sum(np.exp(qs2 * (x2min - X[:, 2])) + np.exp(qs2 * (X[:, 2] - x2max)))
            ),
            "x1": float(np.sum(np.exp(-bnd[:, 0] - X[:, 1]) + np.exp(X[:, 1] - bnd[:, 0]))),
            "x3": float(np.sum(np.exp(-bnd[:, 1] - X[:, 3]) + np.exp(X[:, 3] - bnd[:, 1]))),
            "u": qu1 * float(np.sum(np.exp(qu2 * (-bnd[:N, 2] - U)) + np.exp(qu2 * (U - bnd[:N, 2])))),
        }
        if p.interp:
            lam = np.column_stack([L[:, 0], np.full(N + 1, p.lambda_d), L[:, 1]])
            sig = lam.sum(axis=1)
            terms["l"] = float(np.einsum("ij,jk,ik->", lam, p.S, lam))
            terms["lu"] = ql1 * float(np.sum(np.exp(-ql2 * lam) + np.exp(ql2 * (lam - 1.0))))
            terms["ls"] = ql3 * float(np.sum(np.exp(ql4 * (1.0 - sig)) + np.exp(ql4 * (sig - 1.0))))
    return terms


def total_cost(p, X, U, L) -> float:
    c = sum(cost_terms(p, X, U, L).values())
    return c if np.isfinite(c) else np.inf


def state_derivatives(p, X, L):
    """Gradient (N+1, 4) and diagonal barrier Hessian (N+1, 4) of the state terms.

    The quadratic ``x'Qx`` / ``x'Px`` contributions are included in the
    gradient; their Hessians ``2Q`` / ``2P`` are added by the caller.
    """
    qs1, qs2 = p.barrier[0], p.barrier[1]
    x0min, x0max, x2min, x2max = p.xbounds
    bnd = effective_bounds(p, L)
    N = p.N
    g = np.empty_like(X)
    g[:N] = 2.0 * X[:N] @ p.Q
    g[N] = 2.0 * p.P @ X[N]
    h = np.zeros_like(X)
    for k, lo, hi in ((0, x0min, x0max), (2, x2min, x2max)):
        ehi = np.exp(qs2 * (X[:, k] - hi))
        elo = np.exp(qs2 * (lo - X[:, k]))
        g[:, k] += qs1 * qs2 * (ehi - elo)
        h[:, k] += qs1 * qs2 * qs2 * (ehi + elo)
    for k, j in ((1, 0), (3, 1)):
        ehi = np.exp(X[:, k] - bnd[:, j])
        elo = np.exp(-bnd[:, j] - X[:, k])
        g[:, k] += ehi - elo
        h[:, k] += ehi + elo
    return g, h


def control_derivatives(p, U, L):
    qu1, qu2 = p.barrier[2], p.barrier[3]
    bu = effective_bounds(p, L)[: p.N, 2]
    ehi = np.exp(qu2 * (U - bu))
    elo = np.exp(qu2 * (-bu - U))
    return 2.0 * p.R * U + qu1 * qu2 * (ehi - elo), 2.0 * p.R + qu1 * qu2 * qu2 * (ehi + elo)


def backward_pass(p, X, U, L):
    """ILQR value recursion; returns ``(k (N,), K (N, 4), expected_decrease (2,))``.

    ``expected_decrease = (sum k Q_u, sum k^2 Q_uu / 2)``; a unit step is
    predicted to change the cost by their sum.
    """
    N = p.N
    A, b = p.A, p.b
    gx, hx = state_derivatives(p, X, L)
    gu, huu = control_derivatives(p, U, L)
    k = np.empty(N)
    K = np.empty((N, 4))
    reg = 0.0
    while True:
        Vx = gx[N].copy()
        Vxx = 2.0 * p.P + np.diag(hx[N])
        dV = np.zeros(2)
        ok = True
        for i in range(N - 1, -1, -1):
            VxxA = Vxx @ A
            Vxxb = Vxx @ b
            Qx = gx[i] + A.T @ Vx
            Qu = gu[i] + b @ Vx
            Qxx = 2.0 * p.Q + np.diag(hx[i]) + A.T @ VxxA
            Quu = huu[i] + b @ Vxxb + reg
            Qux = b @ VxxA
            if not Quu > 0.0:
                ok = False
                break
            k[i] = -Qu / Quu
            K[i] = -Qux / Quu
            Vx = Qx + K[i] * (Quu * k[i] + Qu) + Qux * k[i]
            Vxx = Qxx + Quu * np.outer(K[i], K[i]) + np.outer(K[i], Qux) + np.outer(Qux, K[i])
            Vxx = 0.5 * (Vxx + Vxx.T)
            dV[0] += k[i] * Qu
            dV[1] += 0.5 * k[i] * k[i] * Quu
        if ok:
            return k, K, dV
        reg = REG_INIT if reg == 0.0 else reg * 10.0
        if reg > REG_MAX:
            raise FloatingPointError("control Hessian not positive definite after maximal regularisation")


def forward_pass(p, X, U, L, k, K, step: float):
    """Closed-loop rollout ``u = U + step*k + K (x_new - X)``; returns ``(X_new, U_new, cost)``."""
    N = p.N
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = X[0]
    for i in range(N):
        Un[i] = U[i] + step * k[i] + K[i] @ (Xn[i] - X[i])
        Xn[i + 1] = p.A @ Xn[i] + p.b * Un[i]
    if not np.all(np.isfinite(Xn)):
        return Xn, Un, np.inf
    return Xn, Un, total_cost(p, Xn, Un, L)


def lambda_step_costs(p, X, U, L) -> np.ndarray:
    """Per-step sum of every term that depends on ``(lam_s, lam_b)``, shape (N+1,)."""
    qu1, qu2, ql1, ql2, ql3, ql4 = p.barrier[2:]
    N = p.N
    lam = np.column_stack([L[:, 0], np.full(N + 1, p.lambda_d), L[:, 1]])
    bnd = lam @ p.bracket.T
    sig = lam.sum(axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        c = np.einsum("ij,jk,ik->i", lam, p.S, lam)
        c += ql1 * np.sum(np.exp(-ql2 * lam) + np.exp(ql2 * (lam - 1.0)), axis=1)
        c += ql3 * (np.exp(ql4 * (1.0 - sig)) + np.exp(ql4 * (sig - 1.0)))
        c += np.exp(-bnd[:, 0] - X[:, 1]) + np.exp(X[:, 1] - bnd[:, 0])
        c += np.exp(-bnd[:, 1] - X[:, 3]) + np.exp(X[:, 3] - bnd[:, 1])
        c[:N] += qu1 * (np.exp(qu2 * (-bnd[:N, 2] - U)) + np.exp(qu2 * (U - bnd[:N, 2])))
    return np.where(np.isfinite(c), c, np.inf)


def lambda_derivatives(p, X, U, L):
    """Gradient (N+1, 2) and Hessian (N+1, 2, 2) of the per-step λ-cost."""
    qu1, qu2, ql1, ql2, ql3, ql4 = p.barrier[2:]
    N = p.N
    lam = np.column_stack([L[:, 0], np.full(N + 1, p.lambda_d), L[:, 1]])
    bnd = lam @ p.bracket.T
    sig = lam.sum(axis=1)
    free = (0, 2)
    S2 = p.S + p.S.T
    g = (lam @ S2.T)[:, free]
    H = np.broadcast_to(S2[np.ix_(free, free)], (N + 1, 2, 2)).copy()
    # box barriers on each free weight
    e_lo = np.exp(-ql2 * lam[:, free])
    e_hi = np.exp(ql2 * (lam[:, free] - 1.0))
    g += ql1 * ql2 * (e_hi - e_lo)
    H[:, 0, 0] += ql1 * ql2 * ql2 * (e_lo[:, 0] + e_hi[:, 0])
    H[:, 1, 1] += ql1 * ql2 * ql2 * (e_lo[:, 1] + e_hi[:, 1])
    # sum-to-one barrier
    e_m = np.exp(ql4 * (1.0 - sig))
    e_p = np.exp(ql4 * (sig - 1.0))
    g += (ql3 * ql4 * (e_p - e_m))[:, None]
    H += (ql3 * ql4 * ql4 * (e_p + e_m))[:, None, None]
    # bound barriers: f(bound), d bound / d lam = bracket column
    f_list = [
        (np.exp(-bnd[:, 0] - X[:, 1]) + np.exp(X[:, 1] - bnd[:, 0]), 1.0, 0),
        (np.exp(-bnd[:, 1] - X[:, 3]) + np.exp(X[:, 3] - bnd[:, 1]), 1.0, 1),
    ]
    fu = np.zeros(N + 1)
    fu[:N] = qu1 * (np.exp(qu2 * (-bnd[:N, 2] - U)) + np.exp(qu2 * (U - bnd[:N, 2])))
    f_list.append((fu, qu2, 2))
    for f, sharp, row in f_list:
        d = p.bracket[row, [0, 2]]
        g -= (sharp * f)[:, None] * d[None, :]
        H += (sharp * sharp * f)[:, None, None] * np.outer(d, d)[None, :, :]
    return g, H


def _pd_solve(H, g):
    """Solve ``H d = g`` per step after flooring the eigenvalues of each 2x2 ``H``."""
    a, bb, c = H[:, 0, 0], 0.5 * (H[:, 0, 1] + H[:, 1, 0]), H[:, 1, 1]
    mean = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + bb * bb)
    l1 = np.maximum(mean + rad, EIG_FLOOR)
    l2 = np.maximum(mean - rad, EIG_FLOOR)
    # eigenvector of the larger eigenvalue
    theta = 0.5 * np.arctan2(2.0 * bb, a - c)
    cs, sn = np.cos(theta), np.sin(theta)
    p1 = cs * g[:, 0] + sn * g[:, 1]
    p2 = -sn * g[:, 0] + cs * g[:, 1]
    p1 /= l1
    p2 /= l2
    return np.column_stack([cs * p1 - sn * p2, sn * p1 + cs * p2])


def lambda_newton_step(p, X, U, L) -> np.ndarray:
    """One damped Newton step on every ``(lam_s, lam_b)`` pair; never increases the cost."""
    g, H = lambda_derivatives(p, X, U, L)
    direction = -_pd_solve(H, g)
    base = lambda_step_costs(p, X, U, L)
    out = L.copy()
    pending = np.ones(L.shape[0], dtype=bool)
    for step in LINE_SEARCH_STEPS:
        trial = L + step * direction
        c = lambda_step_costs(p, X, U, trial)
        accept = pending & (c <= base)
        out[accept] = trial[accept]
        pending &= ~accept
        if not pending.any():
            break
    return out


def solve_arrays(p, x0, U, L):
    """Alternate ILQR sweeps and λ Newton steps until the relative decrease < ``p.tol``.

    Returns ``(X, U, L, cost, iterations, converged)``.
    """
    U = np.array(U, dtype=float)
    L = np.array(L, dtype=float)
    X = rollout(p, np.asarray(x0, dtype=float), U)
    cost = total_cost(p, X, U, L)
    converged = False
    it = 0
    for it in range(1, p.max_iter + 1):
        prev = cost
        k, K, _ = backward_pass(p, X, U, L)
        for step in LINE_SEARCH_STEPS:
            Xn, Un, cn = forward_pass(p, X, U, L, k, K, step)
            if cn < cost:
                X, U, cost = Xn, Un, cn
                break
        if p.interp:
            L = lambda_newton_step(p, X, U, L)
            cost = total_cost(p, X, U, L)
        if np.isfinite(prev) and prev - cost <= p.tol * max(abs(prev), 1e-12):
            converged = True
            break
    return X, U, L, cost, it, converged
