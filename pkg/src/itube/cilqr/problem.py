"""Barrier-form trajectory optimisation problems for the nominal lane-keeping model.

One container covers the three variants:

* ``"P1"`` – original bounds,
* ``"P2"`` – fixed tightened bounds,
* ``"P4"`` – interpolated bounds with free ``(lam_s, lam_b)`` per step.

P1 and P2 are P4 with a collapsed bracket and pinned interpolation weights;
their interpolation penalty terms are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..interp import InterpolationBracket
from ..params import ControlParams, CostWeights
from ..vehicle import LateralModel

VARIANTS = ("P1", "P2", "P4")
LAMBDA_INIT = (0.25, 0.25)


@dataclass(eq=False)
class CilqrProblem:
    A: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    R: float
    P: np.ndarray
    S: np.ndarray
    barrier: np.ndarray
    xbounds: np.ndarray  # (x0_min, x0_max, x2_min, x2_max)
    bracket: np.ndarray  # rows x1, x3, steer; columns small, detected, big
    variant: str = "P1"
    lambda_d: float = 0.5
    N: int = 30
    max_iter: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        self.A = np.ascontiguousarray(self.A, dtype=float).reshape(4, 4)
        self.b = np.ascontiguousarray(self.b, dtype=float).reshape(4)
        self.Q = np.ascontiguousarray(self.Q, dtype=float).reshape(4, 4)
        self.P = np.ascontiguousarray(self.P, dtype=float).reshape(4, 4)
        self.S = np.ascontiguousarray(self.S, dtype=float).reshape(3, 3)
        self.barrier = np.ascontiguousarray(self.barrier, dtype=float).reshape(8)
        self.xbounds = np.ascontiguousarray(self.xbounds, dtype=float).reshape(4)
        self.bracket = np.ascontiguousarray(self.bracket, dtype=float).reshape(3, 3)
        self.R = float(self.R)
        if self.variant != "P4" and not np.allclose(self.bracket, self.bracket[:, :1]):
            raise ValueError(f"{self.variant} needs a collapsed bracket (fixed bounds)")

    @property
    def interp(self) -> bool:
        return self.variant == "P4"

    def initial_lambda(self) -> np.ndarray:
        return np.tile(np.array(LAMBDA_INIT), (self.N + 1, 1))


@dataclass(eq=False)
class CilqrSolution:
    X: np.ndarray
    U: np.ndarray
    L: np.ndarray | None
    cost: float
    iterations: int
    converged: bool
    backend: str = field(default="python")

    @property
    def u0(self) -> float:
        return float(self.U[0])

    @property
    def lambda0(self) -> np.ndarray | None:
        """First interpolation triple ``(lam_s, lam_d, lam_b)``."""
        if self.L is None:
            return None
        return self.L[0]

    @property
    def gap(self) -> float:
        """``lam_b - lam_s`` at the first step (0 when weights are pinned)."""
        if self.L is None:
            return 0.0
        return float(self.L[0, 2] - self.L[0, 0])


def make_problem(
    model: LateralModel,
    ctrl: ControlParams,
    weights: CostWeights,
    bounds,
    variant: str = "P1",
    **overrides,
) -> CilqrProblem:
    """Assemble a problem from model, weights and a bound source.

    ``bounds`` is a 3-tuple ``(x1_max, x3_max, steer_max)`` for P1/P2 or an
    :class:`InterpolationBracket` for P4.
    """
    c = ctrl.constraints
    if variant == "P4":
        if not isinstance(bounds, InterpolationBracket):
            raise TypeError("P4 needs an InterpolationBracket")
        bracket = bounds.table
    else:
        if isinstance(bounds, InterpolationBracket):
            bounds = bounds.detected
        b = np.asarray(bounds, dtype=float).reshape(3)
        bracket = np.repeat(b[:, None], 3, axis=1)
    kw = dict(
        A=model.A,
        b=model.B[:, 0],
        Q=weights.Q,
        R=float(weights.R[0, 0]),
        P=weights.P,
        S=weights.S,
        barrier=ctrl.barrier.as_array(),
        xbounds=(-c.delta_max, c.delta_max, -c.theta_max, c.theta_max),
        bracket=bracket,
        variant=variant,
        lambda_d=ctrl.lambda_d,
        N=ctrl.N,
    )
    kw.update(overrides)
    return CilqrProblem(**kw)
