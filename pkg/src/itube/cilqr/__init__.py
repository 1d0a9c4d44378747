"""Barrier-based constrained ILQR.

The hot loop lives in a compiled extension (``_ckernel``); if it is missing,
or ``ITUBE_PURE_PYTHON=1`` is set, the numpy reference kernel is used.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernel
from ._pykernel import backward_pass, forward_pass, lambda_newton_step, total_cost
from .problem import CilqrProblem, CilqrSolution, make_problem

try:
    if os.environ.get("ITUBE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python kernel requested")
    from . import _ckernel
except ImportError:
    _ckernel = None

BACKENDS = ("compiled", "python") if _ckernel is not None else ("python",)
DEFAULT_BACKEND = BACKENDS[0]

__all__ = [
    "BACKENDS",
    "DEFAULT_BACKEND",
    "CilqrProblem",
    "CilqrSolution",
    "backward_pass",
    "forward_pass",
    "lambda_newton_step",
    "make_problem",
    "solve",
    "total_cost",
]


def _kernel(backend: str | None):
    backend = backend or DEFAULT_BACKEND
    if backend == "compiled":
        if _ckernel is None:
            raise RuntimeError("compiled CILQR kernel is not available")
        return _ckernel
    if backend == "python":
        return _pykernel
    raise ValueError(f"unknown backend {backend!r}")


def shift(sol: CilqrSolution):
    """Warm start for the next receding-horizon step: drop the first entry, repeat the last."""
    U = np.concatenate([sol.U[1:], sol.U[-1:]])
    L = None
    if sol.L is not None:
        L = np.concatenate([sol.L[1:], sol.L[-1:]])[:, [0, 2]]
    return U, L


def solve(problem: CilqrProblem, x0, warm_start=None, *, backend: str | None = None) -> CilqrSolution:
    """Solve ``problem`` from the initial nominal state ``x0``.

    ``warm_start`` is ``(U, L)`` (``L`` may be None) or a previous
    :class:`CilqrSolution`, which is shifted by one step.
    """
    x0 = np.asarray(x0, dtype=float).reshape(4)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    U0 = np.zeros(problem.N)
    L0 = problem.initial_lambda()
    if isinstance(warm_start, CilqrSolution):
        warm_start = shift(warm_start)
    if warm_start is not None:
        U_ws, L_ws = warm_start
        if U_ws is not None and len(U_ws) == problem.N:
            U0 = np.asarray(U_ws, dtype=float).copy()
        if problem.interp and L_ws is not None and len(L_ws) == problem.N + 1:
            L0 = np.asarray(L_ws, dtype=float).copy()
    name = backend or DEFAULT_BACKEND
    X, U, L, cost, iters, converged = _kernel(name).solve_arrays(problem, x0, U0, L0)
    L_full = None
    if problem.interp:
        L_full = np.column_stack([L[:, 0], np.full(L.shape[0], problem.lambda_d), L[:, 1]])
    return CilqrSolution(np.asarray(X), np.asarray(U), L_full, float(cost), int(iters), bool(converged), name)
