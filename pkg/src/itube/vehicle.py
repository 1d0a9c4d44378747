"""Discrete-time lateral lane-keeping dynamics.

State ordering is ``[delta, delta_dot, theta, theta_dot]`` (lateral offset,
its rate, heading error, its rate); the single input is the front steering
angle. Road curvature enters as an additive disturbance ``kappa * c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_STATE = 4
N_SUB = 2


@dataclass(frozen=True)
class VehicleParams:
    dt: float = 0.01
    v_x: float = 20.0
    m: float = 1150.0
    I_z: float = 2000.0
    C_af: float = 80000.0
    C_ar: float = 80000.0
    l_f: float = 1.27
    l_r: float = 1.37

    def __post_init__(self):
        for name in ("v_x", "m", "I_z", "C_af", "C_ar", "l_f", "l_r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        # dt == 0 is accepted as the degenerate "frozen" model
        if not (math.isfinite(self.dt) and 0.0 <= self.dt <= 0.1):
            raise ValueError(f"dt must lie in [0, 0.1], got {self.dt!r}")

    def with_speed(self, v_x: float) -> "VehicleParams":
        return VehicleParams(self.dt, v_x, self.m, self.I_z, self.C_af, self.C_ar, self.l_f, self.l_r)


@dataclass(frozen=True, eq=False)
class LateralModel:
    """``x+ = A x + B u + kappa * c``. ``B`` is a (4, 1) column, ``c`` a (4,) vector."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    params: VehicleParams

    def step(self, x, u: float, kappa: float = 0.0) -> np.ndarray:
        return step_actual(self, x, u, kappa)


@dataclass(frozen=True, eq=False)
class SubsystemModel:
    """Two-state ``[delta_dot, theta_dot]`` model used for set computations."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    params: VehicleParams


def _coefficients(p: VehicleParams) -> dict:
    dt, vx = p.dt, p.v_x
    cf2, cr2 = 2.0 * p.C_af, 2.0 * p.C_ar
    moment = cf2 * p.l_f - cr2 * p.l_r
    inertia = cf2 * p.l_f**2 + cr2 * p.l_r**2
    return {
        "a22": 1.0 - (cf2 + cr2) * dt / (p.m * vx),
        "a23": (cf2 + cr2) * dt / p.m,
        "a24": -moment * dt / (p.m * vx),
        "a42": -moment * dt / (p.I_z * vx),
        "a43": moment * dt / p.I_z,
        "a44": 1.0 - inertia * dt / (p.I_z * vx),
        "b1": cf2 * dt / p.m,
        "b2": cf2 * p.l_f * dt / p.I_z,
        "c1": -moment * dt / p.m - vx**2 * dt,
        "c2": -inertia * dt / p.I_z,
    }


def build_model(params: VehicleParams) -> LateralModel:
    k = _coefficients(params)
    dt = params.dt
    A = np.array(
        [
            [1.0, dt, 0.0, 0.0],
            [0.0, k["a22"], k["a23"], k["a24"]],
            [0.0, 0.0, 1.0, dt],
            [0.0, k["a42"], k["a43"], k["a44"]],
        ]
    )
    B = np.array([[0.0], [k["b1"]], [0.0], [k["b2"]]])
    c = np.array([0.0, k["c1"], 0.0, k["c2"]])
    for arr in (A, B, c):
        arr.setflags(write=False)
    return LateralModel(A, B, c, params)


def build_subsystem(params: VehicleParams) -> SubsystemModel:
    # The -v_x*dt coupling appears only in the reduced model, as published.
    k = _coefficients(params)
    A = np.array([[k["a22"], k["a24"] - params.v_x * params.dt], [k["a42"], k["a44"]]])
    B = np.array([[k["b1"]], [k["b2"]]])
    c = np.array([k["c1"], k["c2"]])
    for arr in (A, B, c):
        arr.setflags(write=False)
    return SubsystemModel(A, B, c, params)


def step_actual(model: LateralModel, x, u: float, kappa: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return model.A @ x + model.B[:, 0] * float(u) + float(kappa) * model.c


def step_nominal(model: LateralModel, x, u: float) -> np.ndarray:
    return step_actual(model, x, u, 0.0)


def rollout(model: LateralModel, x0, U) -> np.ndarray:
    """Nominal trajectory of ``len(U) + 1`` states driven by ``U`` from ``x0``."""
    U = np.asarray(U, dtype=float).reshape(-1)
    X = np.empty((U.size + 1, N_STATE))
    X[0] = x0
    A, b = model.A, model.B[:, 0]
    for i, u in enumerate(U):
        X[i + 1] = A @ X[i] + b * u
    return X
