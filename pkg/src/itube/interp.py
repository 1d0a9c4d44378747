"""Small/detected/big constraint brackets fused by interpolation weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polytope import TightenedBounds

QUANTITIES = ("x1", "x3", "steer")
CAP_MODES = ("symmetric", "asymmetric", "none")


class BracketError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InterpolationBracket:
    """``table[q] = (small, detected, big)`` for q in (x1, x3, steer)."""

    table: np.ndarray  # shape (3, 3)
    delta: np.ndarray  # effective fraction per quantity, shape (3,)

    def __getitem__(self, name: str) -> tuple:
        return tuple(self.table[QUANTITIES.index(name)])

    @classmethod
    def collapsed(cls, bounds) -> "InterpolationBracket":
        """Degenerate bracket (all three bounds equal) for the fixed-bound problems."""
        b = np.asarray(bounds, dtype=float).reshape(3)
        return cls(np.repeat(b[:, None], 3, axis=1), np.zeros(3))

    @property
    def detected(self) -> np.ndarray:
        return self.table[:, 1]


def design_bracket(det, original, delta_frac: float = 0.25, cap: str = "symmetric") -> InterpolationBracket:
    """Build ``(q_s, q_det, q_b)`` with ``q_s = (1 - d) q_det`` and ``q_b = (1 + d) q_det``.

    ``cap`` decides what happens when ``q_b`` would exceed the original bound:
    ``"symmetric"`` shrinks ``d`` so both sides stay equal, ``"asymmetric"``
    clips ``q_b`` only and keeps ``q_s``, ``"none"`` leaves ``q_b`` uncapped.
    """
    if cap not in CAP_MODES:
        raise ValueError(f"cap must be one of {CAP_MODES}, got {cap!r}")
    if not delta_frac > 0.0:
        raise BracketError("bracket fraction must be positive (strict ordering q_s < q_det < q_b)")
    q_det = np.asarray(det.as_tuple() if isinstance(det, TightenedBounds) else det, dtype=float).reshape(3)
    orig = np.asarray(original, dtype=float).reshape(3)
    if np.any(q_det <= 0.0):
        raise BracketError(f"detected bounds must be positive, got {q_det.tolist()}")
    table = np.empty((3, 3))
    deltas = np.full(3, float(delta_frac))
    for i in range(3):
        d = delta_frac
        big = (1.0 + d) * q_det[i]
        small = (1.0 - d) * q_det[i]
        if cap != "none" and big > orig[i]:
            if cap == "symmetric":
                d = (orig[i] - q_det[i]) / q_det[i]
                if d <= 0.0:
                    raise BracketError(
                        f"{QUANTITIES[i]}: detected bound {q_det[i]:.6g} already equals the original bound; "
                        "a symmetric capped bracket is degenerate"
                    )
                small = (1.0 - d) * q_det[i]
                deltas[i] = d
            big = max(orig[i], q_det[i])
        table[i] = (max(small, 0.0), q_det[i], big)
    return InterpolationBracket(table, deltas)


def interp_bound(bracket: InterpolationBracket, lam) -> np.ndarray:
    """Effective bounds ``lam_s q_s + lam_d q_det + lam_b q_b`` for every quantity."""
    lam = np.asarray(lam, dtype=float).reshape(3)
    return bracket.table @ lam


def full_lambda(lam_sb, lambda_d: float = 0.5) -> np.ndarray:
    """``(lam_s, lam_b)`` pairs -> ``(lam_s, lam_d, lam_b)`` triples."""
    lam_sb = np.asarray(lam_sb, dtype=float)
    out = np.empty(lam_sb.shape[:-1] + (3,))
    out[..., 0] = lam_sb[..., 0]
    out[..., 1] = lambda_d
    out[..., 2] = lam_sb[..., 1]
    return out


def project_simplex(lam) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    n = lam.shape[1]
    srt = -np.sort(-lam, axis=1)
    css = np.cumsum(srt, axis=1) - 1.0
    idx = np.arange(1, n + 1)
    cond = srt - css / idx > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(lam.shape[0]), rho] / (rho + 1)
    return np.maximum(lam - theta[:, None], 0.0)


def conservatism_gap(lam) -> float:
    """``lam_b - lam_s`` of a single ``(lam_s, lam_d, lam_b)`` triple or ``(lam_s, lam_b)`` pair."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    return float(lam[-1] - lam[0])
