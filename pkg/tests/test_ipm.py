import numpy as np
import pytest

from itube.interp import design_bracket
from itube.ipm import QpBuildError, QpProblem, build_qp, kkt_residuals, solve_qp
from itube.vehicle import rollout


def generic_qp(H, f, G, h, Aeq=None, beq=None):
    n = len(f)
    Aeq = np.zeros((0, n)) if Aeq is None else np.asarray(Aeq, dtype=float)
    beq = np.zeros(0) if beq is None else np.asarray(beq, dtype=float)
    return QpProblem(np.asarray(H, float), np.asarray(f, float), Aeq, beq, np.asarray(G, float), np.asarray(h, float))


def fista_box(H, f, lo, hi, iters=20000):
    """Accelerated projected gradient for min 1/2 x'Hx + f'x on a box."""
    L = np.linalg.eigvalsh(H).max()
    x = np.clip(np.zeros_like(f), lo, hi)
    y, t = x.copy(), 1.0
    for _ in range(iters):
        xn = np.clip(y - (H @ y + f) / L, lo, hi)
        tn = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = xn + (t - 1) / tn * (xn - x)
        x, t = xn, tn
    return x


def equality_qp_solution(qp):
    """Direct solve of the equality-constrained KKT system (no inequalities active)."""
    n, m = qp.n, qp.Aeq.shape[0]
    K = np.block([[qp.H, qp.Aeq.T], [qp.Aeq, np.zeros((m, m))]])
    sol = np.linalg.lstsq(K, np.concatenate([-qp.f, qp.beq]), rcond=None)[0]
    return sol[:n]


def test_scalar_lower_bound():
    qp = generic_qp([[2.0]], [0.0], [[-1.0]], [-1.0])
    sol = solve_qp(qp)
    assert sol.ok
    assert sol.z[0] == pytest.approx(1.0, abs=1e-8)
    assert sol.mu[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def test_p1_short_horizon_at_origin(model, ctrl, weights):
    qp = build_qp("P1", np.zeros(4), ctrl.constraints.rate_bounds, model, weights, ctrl.replace(N=1))
    sol = solve_qp(qp)
    assert sol.ok
    np.testing.assert_allclose(sol.z, 0.0, atol=1e-8)
    assert sol.objective == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("x0", [[0.2, 0.0, 0.0, 0.0], [0.1, 0.2, -0.01, 0.05], [-0.3, 0.1, 0.02, 0.0]])
def test_interior_p1_matches_equality_kkt(model, ctrl, weights, x0):
    qp = build_qp("P1", x0, ctrl.constraints.rate_bounds, model, weights, ctrl)
    sol = solve_qp(qp)
    ref = equality_qp_solution(qp)
    assert sol.ok
    np.testing.assert_allclose(sol.z, ref, atol=1e-8)
    assert sol.objective == pytest.approx(qp.objective(ref), rel=1e-8, abs=1e-10)
    assert np.all(qp.h - qp.G @ sol.z > 0)


def test_p3_weights_split_evenly_when_inactive(model, ctrl, weights, bracket):
    qp = build_qp("P3", [0.1, 0.0, 0.0, 0.0], bracket, model, weights, ctrl)
    sol = solve_qp(qp)
    assert sol.ok
    L = qp.lambdas(sol.z)
    # 1-D grid over lam_s with lam_b = 1 - lam_d - lam_s
    S = weights.S
    grid = np.linspace(0, 1 - ctrl.lambda_d, 50001)
    trip = np.column_stack([grid, np.full_like(grid, ctrl.lambda_d), 1 - ctrl.lambda_d - grid])
    best = grid[np.argmin(np.einsum("ij,jk,ik->i", trip, S, trip))]
    assert best == pytest.approx(0.25, abs=1e-4)
    np.testing.assert_allclose(L, best, atol=1e-4)


def test_p3_active_bound_loosens(model, ctrl, weights):
    br = design_bracket((0.3, 0.3, 0.1), (8.0, 4.0, 0.5))
    qp = build_qp("P3", [0.0, 0.29, 0.0, 0.29], br, model, weights, ctrl)
    sol = solve_qp(qp)
    assert sol.ok
    L = qp.lambdas(sol.z)
    assert L[1:, 1].max() > L[1:, 0].min()
    np.testing.assert_allclose(L.sum(axis=1), 1 - ctrl.lambda_d, atol=1e-8)


def test_dynamics_rows_annihilate_rollout(model, ctrl, weights, det_bounds, rng):
    qp = build_qp("P2", [1.0, 0.2, 0.0, 0.1], det_bounds, model, weights, ctrl)
    U = rng.normal(size=ctrl.N) * 0.1
    X = rollout(model, [1.0, 0.2, 0.0, 0.1], U)
    z = np.concatenate([X.ravel(), U])
    assert np.abs(qp.Aeq @ z - qp.beq).max() < 1e-12
    Z, z_p = qp.nullspace()
    assert np.abs(qp.Aeq @ Z).max() < 1e-12
    assert np.abs(qp.Aeq @ z_p - qp.beq).max() < 1e-12


def test_random_box_qps_match_projected_gradient():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.5 * np.eye(n)
        f = rng.normal(size=n) * 3
        lo = -rng.uniform(0.1, 1.0, n)
        hi = rng.uniform(0.1, 1.0, n)
        qp = generic_qp(H, f, np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))
        sol = solve_qp(qp)
        ref = fista_box(H, f, lo, hi)
        assert sol.ok
        f_ref = 0.5 * ref @ H @ ref + f @ ref
        assert abs(sol.objective - f_ref) <= 1e-5 * max(1.0, abs(f_ref))
        np.testing.assert_allclose(sol.z, ref, atol=1e-5)


@pytest.mark.parametrize("variant", ["P1", "P2", "P3"])
def test_kkt_residuals_small(model, ctrl, weights, bracket, variant):
    bounds = bracket if variant == "P3" else (ctrl.constraints.rate_bounds if variant == "P1" else bracket.detected)
    qp = build_qp(variant, [2.0, 0.0, 0.0, 0.0], bounds, model, weights, ctrl)
    sol = solve_qp(qp)
    assert sol.ok
    res = kkt_residuals(qp, sol.z, sol.mu, sol.nu)
    assert res == sol.residuals
    assert res["primal"] < 1e-8 and res["dual"] == 0.0 and res["complementarity"] < 1e-8
    assert res["stationarity"] < 1e-8 * max(1.0, np.abs(qp.H).max())


def test_infeasible_is_reported(model, ctrl, weights):
    # zero steering authority and a tight lateral-rate box that the free response leaves
    qp = build_qp("P2", [0.0, 0.5, 0.4, 0.0], (0.1, 4.0, 0.0), model, weights, ctrl)
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert not sol.ok


def test_invalid_problems_rejected(model, ctrl, weights, bracket):
    with pytest.raises(QpBuildError):
        generic_qp(-np.eye(2), np.zeros(2), np.eye(2), np.ones(2))
    with pytest.raises(QpBuildError):
        generic_qp([[1.0, 2.0], [0.0, 1.0]], np.zeros(2), np.eye(2), np.ones(2))
    with pytest.raises(QpBuildError):
        generic_qp(np.eye(2), np.zeros(3), np.eye(2), np.ones(2))
    with pytest.raises(QpBuildError):
        build_qp("P2", np.zeros(4), (-1.0, 1.0, 0.1), model, weights, ctrl)
    with pytest.raises(QpBuildError):
        build_qp("P3", np.zeros(4), (1.0, 1.0, 0.1), model, weights, ctrl)
    with pytest.raises(QpBuildError):
        build_qp("P4", np.zeros(4), bracket, model, weights, ctrl)


@pytest.mark.parametrize("variant", ["P2", "P3"])
def test_reanchored_matches_fresh_build(model, ctrl, weights, bracket, variant):
    bounds = bracket if variant == "P3" else bracket.detected
    base = build_qp(variant, np.zeros(4), bounds, model, weights, ctrl)
    x0 = [1.2, -0.3, 0.05, 0.1]
    fresh = build_qp(variant, x0, bounds, model, weights, ctrl)
    moved = base.reanchored(x0)
    np.testing.assert_allclose(moved.beq, fresh.beq)
    np.testing.assert_allclose(moved.z_p, fresh.z_p, atol=1e-12)
    a, b = solve_qp(moved), solve_qp(fresh)
    np.testing.assert_allclose(a.z, b.z, atol=1e-8)
    np.testing.assert_array_equal(base.beq[:4], 0.0)


def test_warm_start_not_slower(model, ctrl, weights, det_bounds):
    qp = build_qp("P2", [1.5, 0.0, 0.0, 0.0], det_bounds, model, weights, ctrl)
    cold = solve_qp(qp)
    warm = solve_qp(qp, warm_start=cold.z)
    assert warm.ok
    np.testing.assert_allclose(warm.z, cold.z, atol=1e-7)
