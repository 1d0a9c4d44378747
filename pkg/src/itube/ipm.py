"""Primal-dual interior-point solver for the hard-constrained lane-keeping QPs.

The decision vector is laid out as ``[x_0 .. x_N, u_0 .. u_{N-1}, (lam_s, lam_b)_0 .. _N]``
(the last block only for P3). Equalities are eliminated with a nullspace basis
``z = z_p + Z y`` and the reduced inequality QP is solved by plain
path-following with slack variables.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .interp import InterpolationBracket
from .params import ControlParams, CostWeights
from .vehicle import LateralModel

log = logging.getLogger(__name__)

QP_VARIANTS = ("P1", "P2", "P3")
STATUSES = ("optimal", "max_iter", "infeasible", "numerical_error")


class QpBuildError(ValueError):
    pass


@dataclass(eq=False)
class QpProblem:
    """``min 1/2 z'Hz + f'z  s.t.  Aeq z = beq,  G z <= h``.

    ``Z``/``z_p`` optionally supply a nullspace basis of ``Aeq`` and a
    particular solution; otherwise they are computed on first use.
    """

    H: np.ndarray
    f: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray
    G: np.ndarray
    h: np.ndarray
    Z: np.ndarray | None = None
    z_p: np.ndarray | None = None
    variant: str = ""
    N: int = 0
    const: float = 0.0
    Phi: np.ndarray | None = None  # z_p = z_p(0) + Phi x0 when built by build_qp

    def __post_init__(self):
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.f.shape != (n,):
            raise QpBuildError("objective dimensions are inconsistent")
        if self.Aeq.shape[1] != n or self.G.shape[1] != n:
            raise QpBuildError("constraint matrices do not match the decision vector")
        if self.Aeq.shape[0] != self.beq.shape[0] or self.G.shape[0] != self.h.shape[0]:
            raise QpBuildError("constraint right-hand sides have the wrong length")
        if not np.allclose(self.H, self.H.T, atol=1e-10):
            raise QpBuildError("objective Hessian is not symmetric")
        if np.linalg.eigvalsh(self.H).min() < -1e-9 * max(1.0, np.abs(self.H).max()):
            raise QpBuildError("objective is not convex (Hessian not PSD)")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def nullspace(self):
        if self.Z is None:
            if self.Aeq.shape[0] == 0:
                self.Z = np.eye(self.n)
                self.z_p = np.zeros(self.n)
            else:
                self.Z = sla.null_space(self.Aeq)
                self.z_p = np.linalg.lstsq(self.Aeq, self.beq, rcond=None)[0]
        return self.Z, self.z_p

    def reanchored(self, x0) -> "QpProblem":
        """Same problem with a new initial state; reuses every matrix."""
        if self.Phi is None:
            raise QpBuildError("problem was not built with a free-response map")
        x0 = np.asarray(x0, dtype=float).reshape(4)
        out = copy.copy(self)
        out.beq = self.beq.copy()
        out.beq[:4] = x0
        out.z_p = self.z_p + self.Phi @ (x0 - self.beq[:4])
        return out

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z + self.const)

    # layout helpers
    def states(self, z) -> np.ndarray:
        return z[: 4 * (self.N + 1)].reshape(self.N + 1, 4)

    def controls(self, z) -> np.ndarray:
        i = 4 * (self.N + 1)
        return z[i : i + self.N]

    def lambdas(self, z) -> np.ndarray | None:
        if self.variant != "P3":
            return None
        i = 4 * (self.N + 1) + self.N
        return z[i:].reshape(self.N + 1, 2)


@dataclass(eq=False)
class QpSolution:
    z: np.ndarray
    mu: np.ndarray  # inequality duals
    nu: np.ndarray  # equality duals
    residuals: dict
    iterations: int
    status: str
    objective: float = field(default=np.nan)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def build_qp(variant: str, x0, bounds, model: LateralModel, weights: CostWeights, ctrl: ControlParams) -> QpProblem:
    """Assemble P1 (original bounds), P2 (fixed tightened bounds) or P3 (interpolated bounds).

    ``bounds`` is ``(x1_max, x3_max, steer_max)`` for P1/P2 and an
    :class:`InterpolationBracket` for P3. State bounds are not imposed on
    ``x_0``, which is fixed by the measurement.
    """
    if variant not in QP_VARIANTS:
        raise QpBuildError(f"variant must be one of {QP_VARIANTS}, got {variant!r}")
    N = ctrl.N
    c = ctrl.constraints
    x0 = np.asarray(x0, dtype=float).reshape(4)
    nx, nu = 4 * (N + 1), N
    nl = 2 * (N + 1) if variant == "P3" else 0
    n = nx + nu + nl
    iu, il = nx, nx + nu

    H = np.zeros((n, n))
    f = np.zeros(n)
    for i in range(N):
        H[4 * i : 4 * i + 4, 4 * i : 4 * i + 4] = 2.0 * weights.Q
    H[4 * N : nx, 4 * N : nx] = 2.0 * weights.P
    H[iu : iu + nu, iu : iu + nu] = 2.0 * float(weights.R[0, 0]) * np.eye(nu)
    const = 0.0
    if variant == "P3":
        if not isinstance(bounds, InterpolationBracket):
            raise QpBuildError("P3 needs an InterpolationBracket")
        S = weights.S
        E = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        d = np.array([0.0, ctrl.lambda_d, 0.0])
        for i in range(N + 1):
            s = slice(il + 2 * i, il + 2 * i + 2)
            H[s, s] = 2.0 * E.T @ S @ E
            f[s] = 2.0 * E.T @ S @ d
        const = (N + 1) * float(d @ S @ d)

    # dynamics and (P3) the sum constraint lam_s + lam_b = 1 - lam_d
    rows = 4 * (N + 1) + (N + 1 if variant == "P3" else 0)
    Aeq = np.zeros((rows, n))
    beq = np.zeros(rows)
    Aeq[:4, :4] = np.eye(4)
    beq[:4] = x0
    A, b = model.A, model.B[:, 0]
    for i in range(N):
        r = 4 * (i + 1)
        Aeq[r : r + 4, 4 * (i + 1) : 4 * (i + 2)] = np.eye(4)
        Aeq[r : r + 4, 4 * i : 4 * (i + 1)] = -A
        Aeq[r : r + 4, iu + i] = -b
    if variant == "P3":
        for i in range(N + 1):
            Aeq[4 * (N + 1) + i, il + 2 * i : il + 2 * i + 2] = 1.0
            beq[4 * (N + 1) + i] = 1.0 - ctrl.lambda_d

    # nullspace basis from the condensed dynamics
    free = nu + (N + 1 if variant == "P3" else 0)
    Z = np.zeros((n, free))
    Phi = np.zeros((n, 4))
    Ai = np.eye(4)
    for i in range(N + 1):
        Phi[4 * i : 4 * i + 4] = Ai
        Ai = A @ Ai
    z_p = Phi @ x0
    for j in range(N):
        Z[iu + j, j] = 1.0
        resp = b.copy()
        for i in range(j + 1, N + 1):
            Z[4 * i : 4 * i + 4, j] = resp
            resp = A @ resp
    if variant == "P3":
        half = 0.5 * (1.0 - ctrl.lambda_d)
        for i in range(N + 1):
            z_p[il + 2 * i : il + 2 * i + 2] = half
            Z[il + 2 * i, nu + i] = 1.0
            Z[il + 2 * i + 1, nu + i] = -1.0

    G_rows, h_rows = [], []

    def add(coeffs: dict, rhs: float):
        row = np.zeros(n)
        for k, v in coeffs.items():
            row[k] += v
        G_rows.append(row)
        h_rows.append(rhs)

    for i in range(1, N + 1):
        for k, bound in ((0, c.delta_max), (2, c.theta_max)):
            add({4 * i + k: 1.0}, bound)
            add({4 * i + k: -1.0}, bound)
    if variant == "P3":
        table = bounds.table
        if np.any(table < 0.0):
            raise QpBuildError("bracket bounds must be non-negative")
        for i in range(N + 1):
            ls, lb = il + 2 * i, il + 2 * i + 1
            add({ls: -1.0}, 0.0)
            add({lb: -1.0}, 0.0)
            targets = [(4 * i + 1, 0), (4 * i + 3, 1)] if i > 0 else []
            if i < N:
                targets.append((iu + i, 2))
            for var, q in targets:
                qs, qd, qb = table[q]
                for sgn in (1.0, -1.0):
                    add({var: sgn, ls: -qs, lb: -qb}, ctrl.lambda_d * qd)
    else:
        if isinstance(bounds, InterpolationBracket):
            bounds = bounds.detected
        x1m, x3m, um = (float(v) for v in bounds)
        if min(x1m, x3m, um) < 0.0:
            raise QpBuildError(f"bounds must be non-negative (lo <= hi), got {(x1m, x3m, um)}")
        for i in range(1, N + 1):
            for k, bound in ((1, x1m), (3, x3m)):
                add({4 * i + k: 1.0}, bound)
                add({4 * i + k: -1.0}, bound)
        for i in range(N):
            add({iu + i: 1.0}, um)
            add({iu + i: -1.0}, um)
    G = np.array(G_rows)
    h = np.array(h_rows)
    return QpProblem(H, f, Aeq, beq, G, h, Z=Z, z_p=z_p, variant=variant, N=N, const=const, Phi=Phi)


def kkt_residuals(qp: QpProblem, z, mu, nu) -> dict:
    """Infinity-norm stationarity, primal feasibility and complementarity."""
    stat = qp.H @ z + qp.f + qp.G.T @ mu + qp.Aeq.T @ nu
    slack = qp.h - qp.G @ z
    eq = qp.Aeq @ z - qp.beq
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(max(np.abs(eq).max(initial=0.0), np.maximum(-slack, 0.0).max(initial=0.0))),
        "dual": float(np.maximum(-mu, 0.0).max(initial=0.0)),
        "complementarity": float(np.abs(mu * slack).max(initial=0.0)),
    }


def _boundary_step(v, dv, frac):
    neg = dv < 0.0
    if not neg.any():
        return 1.0
    return min(1.0, frac * float(np.min(-v[neg] / dv[neg])))


def solve_qp(
    qp: QpProblem,
    warm_start=None,
    *,
    tol: float = 1e-8,
    max_iter: int = 200,
    sigma: float = 0.1,
    frac: float = 0.995,
) -> QpSolution:
    """Path-following interior-point method on the nullspace-reduced problem."""
    Z, z_p = qp.nullspace()
    Hr = Z.T @ qp.H @ Z
    g = Z.T @ (qp.H @ z_p + qp.f)
    Gr = qp.G @ Z
    hr = qp.h - qp.G @ z_p

    # rows that do not depend on the free variables are either satisfied or infeasible
    scale = np.abs(Gr).max(axis=1, initial=0.0)
    fixed = scale <= 1e-12
    if np.any(hr[fixed] < -tol):
        z = z_p.copy()
        mu = np.zeros(qp.G.shape[0])
        nu = np.zeros(qp.Aeq.shape[0])
        return QpSolution(z, mu, nu, kkt_residuals(qp, z, mu, nu), 0, "infeasible", qp.objective(z))
    keep = ~fixed
    Gk, hk = Gr[keep], hr[keep]
    m = Gk.shape[0]

    y = np.zeros(Z.shape[1])
    if warm_start is not None:
        y = np.linalg.lstsq(Z, np.asarray(warm_start, dtype=float) - z_p, rcond=None)[0]
    s = np.maximum(hk - Gk @ y, 1.0)
    lam = np.ones(m)
    status = "max_iter"
    hscale = 1.0 + max(np.abs(hk).max(initial=0.0), np.abs(g).max(initial=0.0))
    it = 0
    for it in range(1, max_iter + 1):
        rd = Hr @ y + g + Gk.T @ lam
        rp = Gk @ y + s - hk
        gap = float(s @ lam) / max(m, 1)
        if (
            np.abs(rd).max(initial=0.0) <= tol
            and np.abs(rp).max(initial=0.0) <= tol
            and (m == 0 or np.abs(s * lam).max() <= tol)
        ):
            status = "optimal"
            break
        if not np.isfinite(gap) or lam.max(initial=0.0) > 1e14 * hscale:
            status = "infeasible"
            break
        rc = s * lam - sigma * gap
        D = lam / s
        M = Hr + (Gk.T * D) @ Gk
        rhs = -rd - Gk.T @ ((lam * rp - rc) / s)
        try:
            dy = sla.solve(M, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            status = "numerical_error"
            log.warning("singular reduced KKT matrix at iteration %d", it)
            break
        ds = -rp - Gk @ dy
        dl = (-rc - lam * ds) / s
        ap = _boundary_step(s, ds, frac)
        ad = _boundary_step(lam, dl, frac)
        y = y + ap * dy
        s = s + ap * ds
        lam = lam + ad * dl
    if status == "max_iter":
        rp = Gk @ y + s - hk
        if np.abs(rp).max(initial=0.0) > 1e-6 * hscale or np.any(Gk @ y - hk > 1e-6 * hscale):
            status = "infeasible"

    z = z_p + Z @ y
    mu = np.zeros(qp.G.shape[0])
    mu[keep] = lam
    # equality duals from stationarity in the full space
    r = qp.H @ z + qp.f + qp.G.T @ mu
    if qp.Aeq.shape[0]:
        nu = np.linalg.lstsq(qp.Aeq.T, -r, rcond=None)[0]
    else:
        nu = np.zeros(0)
    return QpSolution(z, mu, nu, kkt_residuals(qp, z, mu, nu), it, status, qp.objective(z))
