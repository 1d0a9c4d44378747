"""Discrete algebraic Riccati equation and LQR gains."""

from __future__ import annotations

import numpy as np


class RiccatiError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _riccati_map(A, B, Q, R, P):
    BtPA = B.T @ P @ A
    gain_term = A.T @ P @ B @ np.linalg.solve(B.T @ P @ B + R, BtPA)
    return A.T @ P @ A + Q - gain_term


def dare_residual(A, B, Q, R, P) -> float:
    """Infinity-norm of ``P - riccati_map(P)``."""
    A, B, Q, R, P = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R, P))
    return float(np.abs(P - _riccati_map(A, B, Q, R, P)).max())


def solve_dare(A, B, Q, R, *, tol: float = 1e-15, max_iter: int = 10_000) -> np.ndarray:
    """Fixed-point iteration of the Riccati map started from ``P = Q``.

    Iterates are symmetrized each step. The loop stops once the step falls
    below ``tol * max|P|`` or, at round-off level, stops shrinking. Raises
    :class:`RiccatiError` if neither happens within ``max_iter`` steps.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    P = Q.copy()
    best, stall = np.inf, 0
    for _ in range(max_iter):
        P_next = _riccati_map(A, B, Q, R, P)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise RiccatiError("Riccati iteration diverged", float("inf"))
        change = np.abs(P_next - P).max()
        P = P_next
        scale = max(1.0, np.abs(P).max())
        if change <= tol * scale:
            return P
        # round-off floor: no progress for a while although already tiny
        if change < best:
            best, stall = change, 0
        else:
            stall += 1
        if stall >= 20 and best <= 1e-11 * scale:
            return P
    raise RiccatiError(f"Riccati iteration did not converge in {max_iter} steps", dare_residual(A, B, Q, R, P))


def lqr_gain(A, B, P, R) -> np.ndarray:
    """``K = -(B'PB + R)^-1 B'PA``, shaped (m, n); the control law is ``u = K x``."""
    A, B, P, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, P, R))
    return -np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A)


def spectral_radius(M) -> float:
    return float(np.abs(np.linalg.eigvals(np.atleast_2d(M))).max())


def dlqr(A, B, Q, R):
    """Convenience wrapper returning ``(P, K)``."""
    P = solve_dare(A, B, Q, R)
    return P, lqr_gain(A, B, P, R)
