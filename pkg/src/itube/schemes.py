"""The ten lane-keeping controllers and their per-step control laws.

Policies:

* ``nominal``  - ``u = ubar(x)`` with the original bounds,
* ``tube-un``  - ``u = ubar(xbar) + K (x - xbar)``,
* ``tube-ua``  - ``u = ubar(x)``,
* ``tube-up``  - ``u = ubar(xbar) + K (x - xbar) + ubar(x)``,
* ``itube``    - as ``tube-up`` with interpolated bounds.

Tube policies read tightened bounds from the curvature table; the nominal
state advances with the disturbance-free model under ``ubar(xbar)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import cilqr
from .interp import InterpolationBracket, design_bracket
from .ipm import build_qp, solve_qp
from .params import ControlParams, cost_weights, feedback_gain
from .polytope import KappaTable
from .vehicle import LateralModel

log = logging.getLogger(__name__)

SOLVERS = ("CILQR", "MPC")
POLICIES = ("nominal", "tube-un", "tube-ua", "tube-up", "itube")


@dataclass(frozen=True)
class SchemeId:
    solver: str
    policy: str

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")

    @property
    def name(self) -> str:
        if self.policy in ("nominal", "itube"):
            return f"{self.policy}-{self.solver}"
        return f"tube-{self.solver}-{self.policy[5:]}"

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, text: str) -> "SchemeId":
        """Accepts names such as ``itube-CILQR``, ``tube-MPC-up``, ``nominal-IPM``."""
        t = text.strip().replace("_", "-")
        parts = t.split("-")
        solver = {"cilqr": "CILQR", "mpc": "MPC", "ipm": "MPC"}
        try:
            if len(parts) == 2 and parts[0].lower() in ("nominal", "itube"):
                return cls(solver[parts[1].lower()], parts[0].lower())
            if len(parts) == 3 and parts[0].lower() == "tube":
                return cls(solver[parts[1].lower()], "tube-" + parts[2].lower())
        except KeyError:
            pass
        raise ValueError(f"unknown scheme {text!r}; expected one of {[s.name for s in ALL_SCHEMES]}")

    @property
    def variant(self) -> str:
        if self.policy == "nominal":
            return "P1"
        if self.policy == "itube":
            return "P4" if self.solver == "CILQR" else "P3"
        return "P2"

    @property
    def uses_nominal(self) -> bool:
        return self.policy in ("tube-un", "tube-up", "itube")

    @property
    def uses_actual(self) -> bool:
        return self.policy in ("nominal", "tube-ua", "tube-up", "itube")


ALL_SCHEMES = tuple(SchemeId(s, p) for s in SOLVERS for p in POLICIES)


@dataclass
class SolveInfo:
    u0: float
    ok: bool
    iterations: int
    cost: float
    time: float
    lam: np.ndarray | None = None  # (lam_s, lam_d, lam_b) at the first step
    raw: object = None


def readout_lambda(lam) -> np.ndarray:
    """Project ``(lam_s, lam_b)`` onto ``lam_s + lam_b = 1 - lam_d``, both >= 0, keeping ``lam_d``."""
    lam = np.asarray(lam, dtype=float).reshape(3)
    total = 1.0 - lam[1]
    d = 0.5 * (total - lam[0] - lam[2])
    s, b = lam[0] + d, lam[2] + d
    if s < 0.0:
        s, b = 0.0, total
    elif b < 0.0:
        s, b = total, 0.0
    return np.array([s, lam[1], b])


@dataclass(eq=False)
class ControllerState:
    """Mutable per-vehicle controller: nominal state, warm starts and cached problems."""

    scheme: SchemeId
    model: LateralModel
    ctrl: ControlParams
    table: KappaTable | None = None
    cap: str = "asymmetric"
    backend: str | None = None
    x_bar: np.ndarray = field(default_factory=lambda: np.zeros(4))
    u_prev: float = 0.0
    ubar_nom_prev: float = 0.0

    def __post_init__(self):
        self.weights = cost_weights(self.model, self.ctrl)
        self.K = feedback_gain(self.model, self.weights)[0]
        self.original = self.ctrl.constraints.rate_bounds
        self._warm: dict = {}
        self._problems: dict = {}
        if self.scheme.policy != "nominal" and self.table is None:
            raise ValueError(f"{self.scheme} needs a curvature table")

    def reset(self, x) -> None:
        self.x_bar = np.array(x, dtype=float).reshape(4)
        self.u_prev = 0.0
        self.ubar_nom_prev = 0.0
        self._warm.clear()

    def bounds_for(self, kappa_det: float):
        """Bound source for the scheme's problem variant at curvature ``kappa_det``."""
        if self.scheme.variant == "P1":
            return tuple(self.original)
        det = self.table.lookup(kappa_det)
        if self.scheme.variant == "P2":
            return det.as_tuple()
        return design_bracket(det, self.original, self.ctrl.delta_frac, self.cap)

    def _problem(self, bounds):
        key = (bounds.table.tobytes() if isinstance(bounds, InterpolationBracket) else tuple(bounds))
        prob = self._problems.get(key)
        if prob is None:
            if self.scheme.solver == "CILQR":
                prob = cilqr.make_problem(self.model, self.ctrl, self.weights, bounds, self.scheme.variant)
            else:
                prob = build_qp(self.scheme.variant, np.zeros(4), bounds, self.model, self.weights, self.ctrl)
            if len(self._problems) > 64:
                self._problems.clear()
            self._problems[key] = prob
        return prob

    def _solve(self, which: str, x0, bounds) -> SolveInfo:
        prob = self._problem(bounds)
        t0 = time.perf_counter()
        if self.scheme.solver == "CILQR":
            try:
                sol = cilqr.solve(prob, x0, self._warm.get(which), backend=self.backend)
            except (FloatingPointError, ValueError) as exc:
                log.warning("%s: CILQR failure from %s state: %s", self.scheme, which, exc)
                return SolveInfo(np.nan, False, 0, np.inf, time.perf_counter() - t0)
            dt = time.perf_counter() - t0
            ok = sol.converged and np.isfinite(sol.cost)
            if ok:
                self._warm[which] = sol
            lam = sol.lambda0 if sol.L is not None else np.array([0.25, self.ctrl.lambda_d, 0.25])
            return SolveInfo(sol.u0, ok, sol.iterations, sol.cost, dt, readout_lambda(lam), sol)
        qp = prob.reanchored(x0)
        sol = solve_qp(qp, self._warm.get(which))
        dt = time.perf_counter() - t0
        if sol.ok:
            self._warm[which] = sol.z
        lam = qp.lambdas(sol.z)
        lam = np.array([lam[0, 0], self.ctrl.lambda_d, lam[0, 1]]) if lam is not None else np.array(
            [0.25, self.ctrl.lambda_d, 0.25]
        )
        return SolveInfo(float(qp.controls(sol.z)[0]), sol.ok, sol.iterations, sol.objective, dt, readout_lambda(lam), sol)

    def control_step(self, x, kappa_det: float):
        """Return ``(u_applied, diagnostics)`` for measured state ``x``."""
        x = np.asarray(x, dtype=float).reshape(4)
        kmax = self.ctrl.constraints.kappa_max
        kappa_det = min(max(float(kappa_det), -kmax), kmax)
        bounds = self.bounds_for(kappa_det)
        sch = self.scheme
        nom = self._solve("nominal", self.x_bar, bounds) if sch.uses_nominal else None
        act = self._solve("actual", x, bounds) if sch.uses_actual else None
        failed = any(s is not None and not s.ok for s in (nom, act))

        u = 0.0
        if nom is not None:
            u += nom.u0 + float(self.K @ (x - self.x_bar))
        if act is not None:
            u += act.u0
        if failed or not math.isfinite(u):
            log.warning("%s: solver failure, holding previous control %.4f", sch, self.u_prev)
            u = self.u_prev
        steer = self.ctrl.constraints.steer_max
        u_applied = min(max(u, -steer), steer)

        diag = {
            "scheme": sch.name,
            "bounds": bounds.detected.copy() if isinstance(bounds, InterpolationBracket) else np.asarray(bounds),
            "solve_times": [s.time for s in (nom, act) if s is not None],
            "iterations": [s.iterations for s in (nom, act) if s is not None],
            "cost": [s.cost for s in (nom, act) if s is not None],
            "failed": failed,
            "u_raw": u,
            "lam": (act or nom).lam,
            "lam_nominal": nom.lam if nom is not None else None,
            "x_bar": self.x_bar.copy(),
        }
        if nom is not None:
            ubar = nom.u0 if nom.ok and math.isfinite(nom.u0) else self.ubar_nom_prev
            self.ubar_nom_prev = ubar
            self.x_bar = self.model.A @ self.x_bar + self.model.B[:, 0] * ubar
        self.u_prev = u_applied
        return u_applied, diag


def make_controller(scheme, model: LateralModel, ctrl: ControlParams, table: KappaTable | None = None, **kw):
    if isinstance(scheme, str):
        scheme = SchemeId.parse(scheme)
    return ControllerState(scheme, model, ctrl, table, **kw)
