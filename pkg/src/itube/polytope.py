"""Planar convex-set algebra, RPI outer bounds and the curvature lookup table.

Sets are kept in vertex form and re-hulled after every operation. Degenerate
sets (points, segments) are allowed throughout because a curvature
disturbance acting along a fixed direction is a segment.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .riccati import lqr_gain, solve_dare, spectral_radius
from .vehicle import VehicleParams, build_subsystem

log = logging.getLogger(__name__)

HULL_TOL = 1e-12


class EmptySetError(ValueError):
    """Raised when a Pontryagin difference is empty."""


class AlphaError(ValueError):
    """Raised when the contraction factor cannot be evaluated."""


def convex_hull(points, tol: float = HULL_TOL) -> np.ndarray:
    """Counter-clockwise hull vertices (Andrew's monotone chain).

    Collinear and duplicate points are dropped, so a segment comes back as two
    vertices and a point as one.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("cannot take the hull of an empty point set")
    scale = max(1.0, float(np.abs(pts).max()))
    if pts.shape[0] == 1:
        return pts.copy()
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    eps = tol * scale * scale

    def half(seq):
        chain: list = []
        for p in seq:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
                if cross > eps:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] == 0:
        hull = pts[[0]]
    # all points collinear: the two chains give the same two endpoints
    if hull.shape[0] == 2 and np.allclose(hull[0], hull[1], atol=tol * scale):
        hull = hull[:1]
    return hull


class Polygon2:
    """Convex planar set in vertex representation (CCW order)."""

    __slots__ = ("vertices",)

    def __init__(self, vertices, *, hull: bool = True):
        v = convex_hull(vertices) if hull else np.asarray(vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        self.vertices = v

    @classmethod
    def point(cls, p=(0.0, 0.0)) -> "Polygon2":
        return cls([p])

    @classmethod
    def box(cls, lo, hi) -> "Polygon2":
        (x0, y0), (x1, y1) = lo, hi
        return cls([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    def __len__(self):
        return self.vertices.shape[0]

    def __repr__(self):
        return f"Polygon2({self.vertices.tolist()!r})"

    @property
    def dim(self) -> int:
        return min(len(self) - 1, 2)

    def area(self) -> float:
        if len(self) < 3:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def scale(self, s: float) -> "Polygon2":
        return Polygon2(self.vertices * float(s))

    def support(self, d) -> float:
        return support(self, d)

    def contains(self, p, tol: float = 1e-9) -> bool:
        return contains(self, p, tol)

    def __add__(self, other: "Polygon2") -> "Polygon2":
        return minkowski_sum(self, other)


@dataclass(frozen=True)
class Box2:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box bounds cross: lo={self.lo} hi={self.hi}")

    @classmethod
    def symmetric(cls, a: float, b: float) -> "Box2":
        return cls((-a, -b), (a, b))

    def to_polygon(self) -> Polygon2:
        return Polygon2.box(self.lo, self.hi)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval bounds cross: [{self.lo}, {self.hi}]")

    @classmethod
    def symmetric(cls, a: float) -> "Interval":
        return cls(-a, a)


@dataclass(frozen=True)
class TightenedBounds:
    x1_max: float
    x3_max: float
    steer_max: float
    kappa: float = 0.0

    def as_tuple(self):
        return (self.x1_max, self.x3_max, self.steer_max)


def minkowski_sum(P: Polygon2, Q: Polygon2) -> Polygon2:
    sums = (P.vertices[:, None, :] + Q.vertices[None, :, :]).reshape(-1, 2)
    return Polygon2(sums)


def linear_image(M, P: Polygon2):
    """Image of ``P`` under ``M``: a polygon for 2x2 ``M``, an interval for 1x2."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    img = P.vertices @ M.T
    if M.shape == (2, 2):
        return Polygon2(img)
    if M.shape == (1, 2):
        return Interval(float(img.min()), float(img.max()))
    raise ValueError(f"expected a 2x2 or 1x2 matrix, got shape {M.shape}")


def support(P: Polygon2, d) -> float:
    d = np.asarray(d, dtype=float).reshape(2)
    if not np.any(d):
        raise ValueError("support direction must be non-zero")
    return float(np.max(P.vertices @ d))


def contains(P: Polygon2, p, tol: float = 1e-9) -> bool:
    p = np.asarray(p, dtype=float).reshape(2)
    v = P.vertices
    if len(v) == 1:
        return bool(np.linalg.norm(p - v[0]) <= tol)
    if len(v) == 2:
        a, b = v
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        return bool(np.linalg.norm(p - (a + t * ab)) <= tol)
    edges = np.roll(v, -1, axis=0) - v
    rel = p - v
    cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
    # distance of p to the supporting line of each edge (positive inside)
    return bool(np.all(cross / np.linalg.norm(edges, axis=1) >= -tol))


def pontryagin_diff_box(X: Box2, S: Polygon2) -> Box2:
    lo, hi = [], []
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = 1.0
        lo.append(X.lo[axis] + support(S, -e))
        hi.append(X.hi[axis] - support(S, e))
    if any(l > h for l, h in zip(lo, hi)):
        raise EmptySetError("constraints infeasible for this disturbance: tightened state box is empty")
    return Box2(tuple(lo), tuple(hi))


def pontryagin_diff_interval(U: Interval, V: Interval) -> Interval:
    lo, hi = U.lo - V.lo, U.hi - V.hi
    if lo > hi:
        raise EmptySetError("constraints infeasible for this disturbance: tightened input interval is empty")
    return Interval(lo, hi)


def disturbance_box(c_sub, kappa_bound: float) -> np.ndarray:
    """Half-widths ``(w_v0, w_v1)`` of the box hull of ``kappa * c_sub``, |kappa| <= bound."""
    return np.abs(np.asarray(c_sub, dtype=float)) * abs(float(kappa_bound))


def _box_vertices(w) -> np.ndarray:
    w0, w1 = w
    return np.array([[w0, w1], [-w0, w1], [-w0, -w1], [w0, -w1]], dtype=float)


def compute_alpha(A_K, K, w, N: int) -> float:
    """Contraction factor of ``A_K^N`` on the box ``[+-w0] x [+-w1]``, vertex form.

    The state ratio is measured in the box gauge ``max_j |z_j| / w_j``, so
    ``A_K^N W ⊆ alpha W`` holds exactly for the returned alpha (and it agrees
    with the linear-programming form).
    """
    w = np.asarray(w, dtype=float).reshape(2)
    K = np.asarray(K, dtype=float).reshape(2)
    if N < 1:
        raise ValueError("N must be >= 1")
    if np.any(w <= 0.0):
        raise AlphaError("degenerate disturbance box (zero half-width)")
    V = _box_vertices(w)
    Ku_ref = np.abs(V @ K).max()
    if Ku_ref == 0.0:
        raise AlphaError("K maps the disturbance box to zero")
    M = np.linalg.matrix_power(np.asarray(A_K, dtype=float), N)
    img = V @ M.T
    state_ratio = np.abs(img / w).max()
    input_ratio = np.abs(img @ K).max() / Ku_ref
    return float(max(state_ratio, input_ratio))


def alpha_constraint_matrix(w, K) -> np.ndarray:
    """Rows ``F`` with ``{z : F z <= 1}`` = box ∩ {|K z| <= max |K W|}."""
    w0, w1 = np.asarray(w, dtype=float).reshape(2)
    K = np.asarray(K, dtype=float).reshape(2)
    if w0 <= 0.0 or w1 <= 0.0:
        raise AlphaError("degenerate disturbance box (zero half-width)")
    h = abs(K[0]) * w0 + abs(K[1]) * w1
    if h == 0.0:
        raise AlphaError("K maps the disturbance box to zero")
    return np.array(
        [
            [-1.0 / w0, 0.0],
            [1.0 / w0, 0.0],
            [0.0, -1.0 / w1],
            [0.0, 1.0 / w1],
            [-K[0] / h, -K[1] / h],
            [K[0] / h, K[1] / h],
        ]
    )


def _feasible_vertices(F, tol=1e-12) -> np.ndarray:
    """Vertices of ``{z : F z <= 1}`` in the plane by pairwise line intersection."""
    F = np.asarray(F, dtype=float)
    rows = F.shape[0]
    # bounded iff the origin is interior to conv(rows of F)
    hull = Polygon2(F)
    if hull.dim < 2 or not hull.contains((0.0, 0.0), tol=-1e-14):
        raise AlphaError("constraint set {Fz <= 1} is unbounded")
    out = []
    for i in range(rows):
        for j in range(i + 1, rows):
            M = F[[i, j]]
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < 1e-300:
                continue
            z = np.linalg.solve(M, np.ones(2))
            if np.all(F @ z <= 1.0 + tol * max(1.0, np.abs(F @ z).max())):
                out.append(z)
    return np.array(out)


def compute_alpha_lp(A_K, K, F, N: int) -> float:
    """``max_i max_{Fz <= 1} F_i A_K^N z``, solved by vertex enumeration.

    ``K`` is accepted for symmetry with :func:`compute_alpha`; it only enters
    through the rows of ``F``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    F = np.asarray(F, dtype=float)
    Z = _feasible_vertices(F)
    if Z.size == 0:
        raise AlphaError("constraint set {Fz <= 1} has no vertices")
    M = np.linalg.matrix_power(np.asarray(A_K, dtype=float), N)
    return float((F @ M @ Z.T).max())


def _accumulate(A_K, W: Polygon2, N: int) -> Polygon2:
    S = W
    M = np.eye(2)
    for _ in range(1, N):
        M = A_K @ M
        S = minkowski_sum(S, linear_image(M, W))
    return S


def _self_contraction(A_K, S: Polygon2, N: int) -> float:
    """Smallest alpha with ``A_K^N S ⊆ alpha S`` (S full-dimensional, 0 interior)."""
    v = S.vertices
    edges = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    offsets = np.einsum("ij,ij->i", normals, v)
    img = v @ np.linalg.matrix_power(A_K, N).T
    return float(((img @ normals.T).max(axis=0) / offsets).max())


def rpi_order(A_K, K, kappa_bound: float, c_sub, *, alpha_max: float = 0.1, n_cap: int = 1000, mode: str = "box"):
    """Smallest ``N`` whose contraction factor is <= ``alpha_max``; returns ``(N, alpha)``."""
    if not 0.0 < alpha_max < 1.0:
        raise ValueError("alpha_max must lie in (0, 1)")
    if spectral_radius(A_K) >= 1.0:
        raise ValueError("closed-loop matrix is not Schur stable")
    if mode == "box":
        w = disturbance_box(c_sub, kappa_bound)
        for N in range(1, n_cap + 1):
            alpha = compute_alpha(A_K, K, w, N)
            if alpha <= alpha_max:
                return N, alpha
    elif mode == "segment":
        W = _segment(c_sub, kappa_bound)
        S = W
        M = np.eye(2)
        for N in range(1, n_cap + 1):
            if S.dim == 2:
                alpha = _self_contraction(A_K, S, N)
                if alpha <= alpha_max:
                    return N, alpha
            M = A_K @ M
            S = minkowski_sum(S, linear_image(M, W))
    else:
        raise ValueError(f"unknown disturbance mode {mode!r}")
    raise AlphaError(f"disturbance not contractible within N <= {n_cap}")


def _segment(c_sub, kappa_bound) -> Polygon2:
    c = np.asarray(c_sub, dtype=float) * abs(float(kappa_bound))
    return Polygon2([c, -c])


def disturbance_set(c_sub, kappa_bound: float, mode: str = "box") -> Polygon2:
    if mode == "box":
        w = disturbance_box(c_sub, kappa_bound)
        return Polygon2.box(-w, w)
    if mode == "segment":
        return _segment(c_sub, kappa_bound)
    raise ValueError(f"unknown disturbance mode {mode!r}")


def rpi_outer(sub, K, kappa_bound: float, alpha_max: float = 0.1, *, mode: str = "box", n_cap: int = 1000) -> Polygon2:
    """Outer RPI bound ``S_N / (1 - alpha)`` for the error dynamics ``A' + B'K``.

    ``mode="box"`` uses the box hull of the curvature disturbance (the
    default); ``mode="segment"`` keeps the exact segment and measures the
    contraction of ``S_N`` itself.
    """
    K = np.asarray(K, dtype=float).reshape(1, 2)
    A_K = np.asarray(sub.A) + np.asarray(sub.B) @ K
    if kappa_bound == 0.0:
        return Polygon2.point()
    N, alpha = rpi_order(A_K, K, kappa_bound, sub.c, alpha_max=alpha_max, n_cap=n_cap, mode=mode)
    S_N = _accumulate(A_K, disturbance_set(sub.c, kappa_bound, mode), N)
    return S_N.scale(1.0 / (1.0 - alpha))


def tighten(X: Box2, U: Interval, S_rpi: Polygon2, K, kappa: float = 0.0) -> TightenedBounds:
    K = np.asarray(K, dtype=float).reshape(1, 2)
    Xt = pontryagin_diff_box(X, S_rpi)
    Ut = pontryagin_diff_interval(U, linear_image(K, S_rpi))
    return TightenedBounds(
        x1_max=min(Xt.hi[0], -Xt.lo[0]),
        x3_max=min(Xt.hi[1], -Xt.lo[1]),
        steer_max=min(Ut.hi, -Ut.lo),
        kappa=kappa,
    )


def subsystem_gain(params: VehicleParams, q_sub=(1.0, 1.0), r: float = 60.0) -> np.ndarray:
    """LQR gain ``K'`` (1x2) for the reduced model."""
    sub = build_subsystem(params)
    R = np.array([[r]])
    P = solve_dare(sub.A, sub.B, np.diag(q_sub), R)
    return lqr_gain(sub.A, sub.B, P, R)


@dataclass(frozen=True, eq=False)
class KappaTable:
    """Tightened bounds on a uniform curvature grid, looked up by nearest neighbour."""

    grid: np.ndarray
    x1_max: np.ndarray
    x3_max: np.ndarray
    steer_max: np.ndarray
    v_x: float
    original: tuple  # (x1_max, x3_max, steer_max) before tightening

    def __len__(self):
        return self.grid.size

    def entry(self, i: int) -> TightenedBounds:
        return TightenedBounds(float(self.x1_max[i]), float(self.x3_max[i]), float(self.steer_max[i]), float(self.grid[i]))

    def index(self, kappa: float) -> int:
        lo, hi = float(self.grid[0]), float(self.grid[-1])
        if kappa < lo or kappa > hi:
            log.info("curvature %.4g outside table range [%g, %g]; clamped", kappa, lo, hi)
            kappa = min(max(kappa, lo), hi)
        dist = np.abs(self.grid - kappa)
        best = dist.min()
        ties = np.flatnonzero(dist <= best + 1e-12)
        return int(ties[np.argmin(np.abs(self.grid[ties]))])

    def lookup(self, kappa: float) -> TightenedBounds:
        return self.entry(self.index(kappa))

    def save(self, path) -> None:
        x1, x3, u = self.original
        lines = [
            "# kappa-table",
            f"# v_x = {self.v_x!r}",
            f"# x1_max = {x1!r}",
            f"# x3_max = {x3!r}",
            f"# steer_max = {u!r}",
            "# kappa,x1_max,x3_max,steer_max",
        ]
        for row in zip(self.grid, self.x1_max, self.x3_max, self.steer_max):
            lines.append(",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "KappaTable":
        header: dict = {}
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    key, value = line[1:].split("=", 1)
                    header[key.strip()] = float(value)
                continue
            if line.startswith("kappa"):
                continue
            rows.append([float(v) for v in line.split(",")])
        data = np.array(rows)
        return cls(
            grid=data[:, 0],
            x1_max=data[:, 1],
            x3_max=data[:, 2],
            steer_max=data[:, 3],
            v_x=header["v_x"],
            original=(header["x1_max"], header["x3_max"], header["steer_max"]),
        )


def build_kappa_table(
    params: VehicleParams,
    v_x: float | None = None,
    X: Box2 | None = None,
    U: Interval | None = None,
    *,
    kappa_max: float = 0.1,
    n_points: int = 201,
    alpha_max: float = 0.1,
    q_sub=(1.0, 1.0),
    r: float = 60.0,
    mode: str = "box",
) -> KappaTable:
    """Tabulate tightened bounds for ``n_points`` curvatures on ``[-kappa_max, kappa_max]``.

    Raises :class:`EmptySetError` naming the first curvature whose tightened
    set is empty.
    """
    if v_x is not None:
        params = params.with_speed(v_x)
    X = X or Box2.symmetric(8.0, 4.0)
    U = U or Interval.symmetric(math.pi / 6)
    sub = build_subsystem(params)
    K = subsystem_gain(params, q_sub, r)
    # The disturbance set is |kappa| times a fixed set, and N, alpha are
    # scale invariant, so one RPI computation serves every grid point.
    S_unit = rpi_outer(sub, K, 1.0, alpha_max, mode=mode)
    step = 2.0 * kappa_max / (n_points - 1)
    grid = np.array([(i - (n_points - 1) / 2) * step for i in range(n_points)])
    out = np.empty((n_points, 3))
    for i, kappa in enumerate(grid):
        S = S_unit.scale(abs(kappa)) if kappa != 0.0 else Polygon2.point()
        try:
            out[i] = tighten(X, U, S, K, kappa).as_tuple()
        except EmptySetError as exc:
            raise EmptySetError(f"{exc} (kappa = {kappa:+.4f})") from exc
    original = (min(X.hi[0], -X.lo[0]), min(X.hi[1], -X.lo[1]), min(U.hi, -U.lo))
    return KappaTable(grid, out[:, 0], out[:, 1], out[:, 2], params.v_x, original)
