import csv

import numpy as np
import pytest

from itube import schemes, simulator
from itube.simulator import (
    CSV_COLUMNS,
    CurvatureProfile,
    RunResult,
    ScenarioConfig,
    compare,
    format_report,
    run_closed_loop,
    run_many,
    summarize,
    write_csv,
)


def short(scheme="itube-CILQR", T=60, **kw):
    return ScenarioConfig(scheme=scheme, profile=kw.pop("profile", CurvatureProfile(((20, 40, 0.05),), T)), **kw)


def test_default_profile():
    p = CurvatureProfile()
    k = p.array()
    assert k.shape == (1400,)
    assert k[449] == 0.0 and k[450] == 0.08 and k[700] == 0.08 and k[701] == 0.0
    assert k[950] == -0.05 and k[1200] == -0.05 and k[1201] == 0.0
    assert CurvatureProfile.constant(0.0, 10).array().tolist() == [0.0] * 10
    assert np.all(CurvatureProfile.constant(0.03, 5).array() == 0.03)


@pytest.mark.parametrize(
    "segments", [((10, 5, 0.01),), ((0, 10, 0.01), (10, 20, 0.02)), ((0, 10, 0.2),)]
)
def test_bad_profiles(segments):
    with pytest.raises(ValueError):
        CurvatureProfile(segments, 100)


def test_bad_configs():
    with pytest.raises(ValueError):
        ScenarioConfig(scheme="tube-CILQR")
    with pytest.raises(ValueError):
        ScenarioConfig(x0=(0.0, np.nan, 0.0, 0.0))
    with pytest.raises(ValueError):
        ScenarioConfig(noise_std=-1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(comfort_clip="sometimes")


@pytest.mark.parametrize("scheme", ["itube-CILQR", "tube-MPC-up", "nominal-CILQR"])
def test_straight_road_from_centre_stays_put(scheme):
    cfg = ScenarioConfig(scheme=scheme, x0=(0.0, 0.0, 0.0, 0.0), profile=CurvatureProfile.constant(0.0, 50))
    res = run_closed_loop(cfg)
    assert res.ok and len(res) == 50
    for c in ("x0", "x1", "x2", "x3", "u"):
        np.testing.assert_allclose(res.column(c), 0.0, atol=1e-9)


def test_records_and_determinism():
    a = run_closed_loop(short())
    b = run_closed_loop(short())
    assert set(a.records) == set(CSV_COLUMNS)
    assert len(a) == 60 and a.ok
    np.testing.assert_array_equal(a.column("t"), np.arange(60))
    for c in CSV_COLUMNS:
        if c != "solve_time":
            np.testing.assert_array_equal(a.column(c), b.column(c))
    np.testing.assert_allclose(a.column("delta_lambda"), a.column("lambda_b") - a.column("lambda_s"))
    np.testing.assert_array_equal(a.column("kappa_true"), a.profile.array())
    assert np.all(a.column("solve_time") > 0)
    assert np.all(np.abs(a.column("u")) <= np.pi / 6 + 1e-15)


def test_state_follows_model(model):
    res = run_closed_loop(short("tube-CILQR-up"))
    X = np.column_stack([res.column(f"x{i}") for i in range(4)])
    for t in range(len(res) - 1):
        nxt = model.A @ X[t] + model.B[:, 0] * res.column("u")[t] + model.c * res.column("kappa_true")[t]
        np.testing.assert_allclose(X[t + 1], nxt, atol=1e-12)


def test_noise_is_seeded():
    a = run_closed_loop(short(noise_std=0.01, seed=3))
    b = run_closed_loop(short(noise_std=0.01, seed=3))
    c = run_closed_loop(short(noise_std=0.01, seed=4))
    np.testing.assert_array_equal(a.column("kappa_det"), b.column("kappa_det"))
    assert not np.array_equal(a.column("kappa_det"), c.column("kappa_det"))
    assert np.abs(a.column("kappa_det")).max() <= 0.1
    assert not np.array_equal(a.column("kappa_det"), a.column("kappa_true"))


def test_comfort_clip_modes():
    off = run_closed_loop(short("nominal-CILQR", T=40))
    logged = run_closed_loop(short("nominal-CILQR", T=40, comfort_clip="log"))
    clipped = run_closed_loop(short("nominal-CILQR", T=40, comfort_clip="state"))
    assert np.abs(off.column("x1")).max() > 1.0
    np.testing.assert_array_equal(logged.column("x1"), np.clip(off.column("x1"), -1, 1))
    np.testing.assert_array_equal(logged.column("x0"), off.column("x0"))
    assert np.abs(clipped.column("x1")).max() <= 1.0
    assert not np.array_equal(clipped.column("x0"), off.column("x0"))


def test_divergence_is_reported(monkeypatch):
    real = schemes.ControllerState.control_step

    def wild(self, x, kd):
        u, diag = real(self, x, kd)
        return 1e6, diag

    monkeypatch.setattr(schemes.ControllerState, "control_step", wild)
    res = run_closed_loop(short("nominal-CILQR"))
    assert res.status == "diverged" and not res.ok
    assert 0 < len(res) < 60
    assert all(len(v) == len(res) for v in res.records.values())


def test_summary_keys_and_values():
    res = run_closed_loop(short(T=120))
    s = summarize(res)
    d = res.column("x0")
    assert s["turn1_max_abs_delta"] == pytest.approx(np.abs(d[20:41]).max())
    assert s["turn1_end_delta"] == d[40]
    assert s["solve_time_mean"] == pytest.approx(res.column("solve_time").mean())
    assert s["steps"] == 120 and s["status"] == "ok" and s["failures"] == 0
    assert "delta_t600" not in s


def test_compare_and_report():
    results = [run_closed_loop(short(name)) for name in ("itube-CILQR", "tube-CILQR-up")]
    rows = compare(results)
    assert rows[0]["latency_ratio"] == pytest.approx(1.0)
    assert rows[1]["latency_ratio"] == pytest.approx(rows[1]["solve_time_mean"] / rows[0]["solve_time_mean"])
    text = format_report(rows)
    lines = text.strip().splitlines()
    assert lines[0].split()[0] == "scheme" and len(lines) == 3
    assert np.isnan(compare(results, reference="nominal-MPC")[0]["latency_ratio"])


def test_write_csv_roundtrip(tmp_path):
    res = run_closed_loop(short(T=30))
    path = tmp_path / "sub" / "run.csv"
    write_csv(res, path)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 31
    back = np.array([[float(v) for v in r] for r in rows[1:]])
    for j, c in enumerate(CSV_COLUMNS):
        np.testing.assert_array_equal(back[:, j], res.column(c).astype(float))


def test_run_many_collects_errors(monkeypatch):
    real = simulator.run_closed_loop

    def flaky(cfg, table=None):
        if cfg.scheme == "tube-CILQR-un":
            raise RuntimeError("solver blew up")
        return real(cfg, table)

    monkeypatch.setattr(simulator, "run_closed_loop", flaky)
    cfgs = [short("itube-CILQR", T=20), short("tube-CILQR-un", T=20), short("tube-CILQR-ua", T=20)]
    for workers in (1, 3):
        out = run_many(cfgs, workers=workers)
        assert isinstance(out[0], RunResult) and isinstance(out[2], RunResult)
        assert isinstance(out[1], RuntimeError)
        rows = compare(out)
        assert rows[1]["scheme"] == "tube-CILQR-un" and rows[1]["status"].startswith("error")
