import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itube import cilqr
from itube.interp import InterpolationBracket
from itube.schemes import ALL_SCHEMES, ControllerState, SchemeId, make_controller, readout_lambda
from itube.simulator import ScenarioConfig, scenario_table


@pytest.fixture(scope="module")
def table():
    return scenario_table(ScenarioConfig())


def controller(name, model, ctrl, table, **kw):
    return make_controller(name, model, ctrl, table, **kw)


def test_names_and_parse():
    names = [s.name for s in ALL_SCHEMES]
    assert len(set(names)) == 10
    assert "itube-CILQR" in names and "tube-MPC-up" in names and "nominal-MPC" in names
    for s in ALL_SCHEMES:
        assert SchemeId.parse(s.name) == s
    assert SchemeId.parse("itube_ipm") == SchemeId("MPC", "itube")
    assert SchemeId.parse("TUBE-cilqr-UA") == SchemeId("CILQR", "tube-ua")
    for bad in ("itube", "tube-CILQR", "tube-QP-up", "foo-CILQR"):
        with pytest.raises(ValueError):
            SchemeId.parse(bad)
    with pytest.raises(ValueError):
        SchemeId("LQR", "itube")


def test_variants_and_solve_sets():
    v = {s.name: s.variant for s in ALL_SCHEMES}
    assert v["nominal-CILQR"] == v["nominal-MPC"] == "P1"
    assert v["itube-CILQR"] == "P4" and v["itube-MPC"] == "P3"
    assert all(v[f"tube-{s}-{p}"] == "P2" for s in ("CILQR", "MPC") for p in ("un", "ua", "up"))
    both = {s.name for s in ALL_SCHEMES if s.uses_nominal and s.uses_actual}
    assert both == {"tube-CILQR-up", "tube-MPC-up", "itube-CILQR", "itube-MPC"}
    assert not SchemeId("CILQR", "nominal").uses_nominal
    assert not SchemeId("MPC", "tube-un").uses_actual


def test_tube_needs_table(model, ctrl):
    with pytest.raises(ValueError):
        ControllerState(SchemeId("CILQR", "tube-up"), model, ctrl)
    ControllerState(SchemeId("CILQR", "nominal"), model, ctrl)


@pytest.mark.parametrize("name", ["tube-CILQR-up", "itube-CILQR", "tube-MPC-up", "itube-MPC"])
def test_combined_law_doubles_when_nominal_equals_actual(name, model, ctrl, table):
    c = controller(name, model, ctrl, table)
    x = np.array([0.3, 0.1, 0.01, 0.0])
    c.reset(x)
    _, diag = c.control_step(x, 0.0)
    bounds = c.bounds_for(0.0)
    if c.scheme.solver == "CILQR":
        ubar = cilqr.solve(c._problem(bounds), x).u0
    else:
        from itube.ipm import solve_qp

        qp = c._problem(bounds).reanchored(x)
        ubar = float(qp.controls(solve_qp(qp).z)[0])
    assert diag["u_raw"] == pytest.approx(2.0 * ubar, abs=1e-9)


@pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
def test_zero_state_zero_control(scheme, model, ctrl, table):
    c = controller(scheme.name, model, ctrl, table)
    c.reset(np.zeros(4))
    for _ in range(3):
        u, diag = c.control_step(np.zeros(4), 0.0)
        assert u == pytest.approx(0.0, abs=1e-9)
        assert not diag["failed"]
    np.testing.assert_allclose(c.x_bar, 0.0, atol=1e-9)


def test_un_and_ua_policies(model, ctrl, table):
    x = np.array([0.5, 0.0, 0.02, 0.0])
    un = controller("tube-CILQR-un", model, ctrl, table)
    ua = controller("tube-CILQR-ua", model, ctrl, table)
    un.reset(np.zeros(4))
    ua.reset(np.zeros(4))
    u_n, _ = un.control_step(x, 0.0)
    u_a, _ = ua.control_step(x, 0.0)
    # from a zero nominal state the un law is pure feedback
    assert u_n == pytest.approx(float(un.K @ x))
    assert u_a == pytest.approx(cilqr.solve(ua._problem(ua.bounds_for(0.0)), x).u0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-60.0, 60.0))
def test_applied_control_saturates(offset):
    from itube.params import ControlParams
    from itube.vehicle import VehicleParams, build_model

    model, ctrl = build_model(VehicleParams()), ControlParams()
    c = make_controller("nominal-CILQR", model, ctrl)
    c.reset(np.zeros(4))
    x = np.array([0.0, offset, 0.0, 0.0])
    u, diag = c.control_step(x, 0.0)
    steer = ctrl.constraints.steer_max
    assert abs(u) <= steer + 1e-15
    if abs(diag["u_raw"]) <= steer:
        assert u == diag["u_raw"]
    else:
        assert u == math.copysign(steer, diag["u_raw"])


def test_failure_holds_previous_control(model, ctrl, table, monkeypatch):
    c = controller("itube-CILQR", model, ctrl, table)
    x = np.array([0.4, 0.0, 0.0, 0.0])
    c.reset(np.zeros(4))
    u1, _ = c.control_step(x, 0.0)
    xbar_before = c.x_bar.copy()

    def boom(*a, **k):
        raise FloatingPointError("regularisation exhausted")

    monkeypatch.setattr(cilqr, "solve", boom)
    u2, diag = c.control_step(x, 0.0)
    assert diag["failed"] and u2 == u1
    # the nominal state still advances with the last good nominal control
    np.testing.assert_allclose(c.x_bar, model.A @ xbar_before + model.B[:, 0] * c.ubar_nom_prev)


def test_non_convergence_holds_previous_control(model, ctrl, table, monkeypatch):
    c = controller("tube-CILQR-ua", model, ctrl, table)
    c.reset(np.zeros(4))
    u1, _ = c.control_step([0.4, 0.0, 0.0, 0.0], 0.0)
    real = cilqr.solve

    def stalled(*a, **k):
        sol = real(*a, **k)
        sol.converged = False
        return sol

    monkeypatch.setattr(cilqr, "solve", stalled)
    u2, diag = c.control_step([0.8, 0.0, 0.0, 0.0], 0.0)
    assert diag["failed"] and u2 == u1


def test_error_dynamics_contract(model, ctrl, table):
    """Without a disturbance the tube error obeys e+ = (A + B K) e for the un law."""
    c = controller("tube-CILQR-un", model, ctrl, table)
    c.reset(np.zeros(4))
    x = np.array([0.3, -0.2, 0.01, 0.05])
    Acl = model.A + model.B @ c.K[None, :]
    P = c.weights.P
    for _ in range(20):
        e = x - c.x_bar
        u, diag = c.control_step(x, 0.0)
        assert abs(diag["u_raw"]) < ctrl.constraints.steer_max
        x = model.A @ x + model.B[:, 0] * u
        e_next = x - c.x_bar
        np.testing.assert_allclose(e_next, Acl @ e, atol=1e-12)
        # the Riccati cost-to-go is a Lyapunov function of the error
        assert e_next @ P @ e_next < e @ P @ e


def test_bounds_by_policy(model, ctrl, table):
    kd = 0.06
    nom = controller("nominal-CILQR", model, ctrl, table).bounds_for(kd)
    assert nom == tuple(ctrl.constraints.rate_bounds)
    p2 = controller("tube-CILQR-up", model, ctrl, table).bounds_for(kd)
    assert p2 == table.lookup(kd).as_tuple()
    br = controller("itube-MPC", model, ctrl, table).bounds_for(kd)
    assert isinstance(br, InterpolationBracket)
    np.testing.assert_allclose(br.detected, p2)
    # detected curvature beyond the table range is clamped
    c = controller("tube-CILQR-up", model, ctrl, table)
    c.reset(np.zeros(4))
    _, diag = c.control_step(np.zeros(4), 0.5)
    np.testing.assert_allclose(diag["bounds"], table.lookup(ctrl.constraints.kappa_max).as_tuple())


def test_itube_reports_lambda(model, ctrl, table):
    c = controller("itube-CILQR", model, ctrl, table)
    c.reset(np.zeros(4))
    _, diag = c.control_step(np.array([0.0, 2.5, 0.0, 1.2]), 0.08)
    lam = diag["lam"]
    assert lam.sum() == pytest.approx(1.0)
    assert lam[1] == ctrl.lambda_d
    assert lam[2] > lam[0]


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(0.0, 1.0), st.floats(-1, 1))
def test_readout_projection(a, d, b):
    out = readout_lambda([a, d, b])
    assert out[1] == d
    assert out[0] >= 0 and out[2] >= 0
    assert out[0] + out[2] == pytest.approx(1.0 - d)
    if a + b == pytest.approx(1.0 - d) and a >= 0 and b >= 0:
        np.testing.assert_allclose(out, [a, d, b], atol=1e-12)
