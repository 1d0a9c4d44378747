"""Controller weights, barrier parameters and constraint boxes with their default values."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .polytope import Box2, Interval
from .riccati import lqr_gain, solve_dare
from .vehicle import LateralModel


@dataclass(frozen=True)
class BarrierParams:
    q_s1: float = 5.0
    q_s2: float = 1.0
    q_u1: float = 80.0
    q_u2: float = 1.0
    q_l1: float = 80.0
    q_l2: float = 1.0
    q_l3: float = 20.0
    q_l4: float = 20.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0.0:
                raise ValueError(f"barrier parameter {name} must be positive, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.q_s1, self.q_s2, self.q_u1, self.q_u2, self.q_l1, self.q_l2, self.q_l3, self.q_l4])


@dataclass(frozen=True)
class Constraints:
    """Symmetric bounds on every state and the steering angle."""

    delta_max: float = 2.0
    ddelta_max: float = 8.0
    theta_max: float = math.pi / 2
    dtheta_max: float = 4.0
    steer_max: float = math.pi / 6
    kappa_max: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0.0:
                raise ValueError(f"constraint {name} must be positive, got {value!r}")

    @property
    def sub_box(self) -> Box2:
        return Box2.symmetric(self.ddelta_max, self.dtheta_max)

    @property
    def steer_interval(self) -> Interval:
        return Interval.symmetric(self.steer_max)

    @property
    def rate_bounds(self) -> tuple:
        """``(x1_max, x3_max, steer_max)`` in the order the bracket uses."""
        return (self.ddelta_max, self.dtheta_max, self.steer_max)


@dataclass(frozen=True)
class ControlParams:
    N: int = 30
    Q: tuple = (20.0, 1.0, 20.0, 1.0)
    R: float = 60.0
    S: tuple = (50.0, 50.0, 50.0)
    barrier: BarrierParams = field(default_factory=BarrierParams)
    constraints: Constraints = field(default_factory=Constraints)
    delta_frac: float = 0.25
    lambda_d: float = 0.5

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        if not (min(self.Q) > 0 and self.R > 0 and min(self.S) > 0):
            raise ValueError("Q, R and S must be positive definite")

    def replace(self, **changes) -> "ControlParams":
        return replace(self, **changes)

    @property
    def Q_mat(self) -> np.ndarray:
        return np.diag(self.Q)

    @property
    def S_mat(self) -> np.ndarray:
        return np.diag(self.S)

    @property
    def q_sub(self) -> tuple:
        """Weights of the two rate states, reused for the reduced-model gain."""
        return (self.Q[1], self.Q[3])


@dataclass(frozen=True, eq=False)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    P: np.ndarray


def cost_weights(model: LateralModel, ctrl: ControlParams) -> CostWeights:
    R = np.array([[ctrl.R]])
    P = solve_dare(model.A, model.B, ctrl.Q_mat, R)
    return CostWeights(ctrl.Q_mat, R, ctrl.S_mat, P)


def feedback_gain(model: LateralModel, weights: CostWeights) -> np.ndarray:
    return lqr_gain(model.A, model.B, weights.P, weights.R)
