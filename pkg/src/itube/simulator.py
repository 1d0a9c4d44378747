"""Closed-loop receding-horizon simulation, run summaries and CSV logs."""

from __future__ import annotations

import csv
import functools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import Constraints, ControlParams
from .polytope import Box2, Interval, KappaTable, build_kappa_table
from .schemes import SchemeId, make_controller
from .vehicle import VehicleParams, build_model, step_actual

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e3
CLIP_MODES = ("off", "log", "state")
CSV_COLUMNS = (
    "t",
    "x0",
    "x1",
    "x2",
    "x3",
    "u",
    "kappa_true",
    "kappa_det",
    "lambda_s",
    "lambda_b",
    "delta_lambda",
    "solve_time",
    "iterations",
    "failed",
)


@dataclass(frozen=True)
class CurvatureProfile:
    """Piecewise-constant curvature: ``segments`` of ``(start, end, kappa)`` with inclusive step ranges."""

    segments: tuple = ((450, 700, 0.08), (950, 1200, -0.05))
    T: int = 1400

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("profile length must be positive")
        prev_end = -1
        for start, end, kappa in sorted(self.segments):
            if start > end or start <= prev_end:
                raise ValueError(f"curvature segments overlap or are reversed: {self.segments}")
            if abs(kappa) > 0.1:
                raise ValueError(f"|kappa| must be <= 0.1, got {kappa}")
            prev_end = end

    @classmethod
    def constant(cls, kappa: float, T: int) -> "CurvatureProfile":
        return cls(((0, T - 1, kappa),) if kappa != 0.0 else (), T)

    def kappa(self, t: int) -> float:
        for start, end, k in self.segments:
            if start <= t <= end:
                return float(k)
        return 0.0

    def array(self) -> np.ndarray:
        return np.array([self.kappa(t) for t in range(self.T)])


@dataclass(frozen=True)
class ScenarioConfig:
    scheme: str = "itube-CILQR"
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    x0: tuple = (2.0, 0.0, 0.0, 0.0)
    ctrl: ControlParams = field(default_factory=ControlParams)
    profile: CurvatureProfile = field(default_factory=CurvatureProfile)
    noise_std: float = 0.0
    seed: int = 0
    comfort_clip: str = "off"
    cap: str = "asymmetric"
    alpha_max: float = 0.1
    backend: str | None = None

    def __post_init__(self):
        SchemeId.parse(self.scheme)
        if not np.all(np.isfinite(self.x0)) or len(self.x0) != 4:
            raise ValueError("initial state must be 4 finite numbers")
        if self.noise_std < 0.0:
            raise ValueError("noise std must be non-negative")
        if self.comfort_clip not in CLIP_MODES:
            raise ValueError(f"comfort_clip must be one of {CLIP_MODES}")

    @property
    def constraints(self) -> Constraints:
        return self.ctrl.constraints


@functools.lru_cache(maxsize=32)
def _cached_table(vehicle: VehicleParams, box: tuple, alpha_max: float) -> KappaTable:
    x1, x3, u = box
    return build_kappa_table(vehicle, X=Box2.symmetric(x1, x3), U=Interval.symmetric(u), alpha_max=alpha_max)


def scenario_table(cfg: ScenarioConfig) -> KappaTable:
    return _cached_table(cfg.vehicle, cfg.constraints.rate_bounds, cfg.alpha_max)


@dataclass(eq=False)
class RunResult:
    scheme: str
    records: dict  # column name -> array of length n_steps
    status: str  # "ok" | "diverged"
    profile: CurvatureProfile
    wall_time: float
    n_failures: int = 0

    def __len__(self):
        return len(self.records["t"])

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def column(self, name: str) -> np.ndarray:
        return self.records[name]


def run_closed_loop(cfg: ScenarioConfig, table: KappaTable | None = None) -> RunResult:
    """Simulate ``cfg.profile.T`` steps; timing covers the controller call only."""
    scheme = SchemeId.parse(cfg.scheme)
    model = build_model(cfg.vehicle)
    if table is None and scheme.policy != "nominal":
        table = scenario_table(cfg)
    ctl = make_controller(scheme, model, cfg.ctrl, table, cap=cfg.cap, backend=cfg.backend)
    x = np.array(cfg.x0, dtype=float)
    ctl.reset(x)
    rng = np.random.default_rng(cfg.seed)
    kmax = cfg.constraints.kappa_max
    T = cfg.profile.T
    rec = {name: np.full(T, np.nan) for name in CSV_COLUMNS}
    status = "ok"
    failures = 0
    n = 0
    t_start = time.perf_counter()
    for t in range(T):
        k_true = cfg.profile.kappa(t)
        k_det = k_true + (rng.normal(0.0, cfg.noise_std) if cfg.noise_std > 0.0 else 0.0)
        k_det = min(max(k_det, -kmax), kmax)
        t0 = time.perf_counter()
        u, diag = ctl.control_step(x, k_det)
        elapsed = time.perf_counter() - t0
        lam = diag["lam"]
        row = (t, *x, u, k_true, k_det, lam[0], lam[2], lam[2] - lam[0], elapsed, sum(diag["iterations"]), diag["failed"])
        for name, v in zip(CSV_COLUMNS, row):
            rec[name][t] = v
        failures += int(diag["failed"])
        n = t + 1
        x = step_actual(model, x, u, k_true)
        if cfg.comfort_clip == "state":
            x[1] = min(max(x[1], -1.0), 1.0)
            x[3] = min(max(x[3], -1.0), 1.0)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_NORM:
            status = "diverged"
            log.error("%s diverged at step %d (|x| = %g)", scheme, t, np.abs(x).max())
            break
    rec = {k: v[:n] for k, v in rec.items()}
    if cfg.comfort_clip == "log":
        rec["x1"] = np.clip(rec["x1"], -1.0, 1.0)
        rec["x3"] = np.clip(rec["x3"], -1.0, 1.0)
    return RunResult(scheme.name, rec, status, cfg.profile, time.perf_counter() - t_start, failures)


def _turn_windows(profile: CurvatureProfile) -> list:
    return [(s, e) for s, e, k in profile.segments if k != 0.0]


def summarize(result: RunResult) -> dict:
    """Per-turn peak lateral error, plateau values, conservatism gap and latency statistics."""
    r = result.records
    n = len(result)
    delta, dl, st = r["x0"], r["delta_lambda"], r["solve_time"]
    out = {
        "scheme": result.scheme,
        "status": result.status,
        "steps": n,
        "failures": result.n_failures,
        "solve_time_mean": float(np.mean(st)) if n else np.nan,
        "solve_time_std": float(np.std(st)) if n else np.nan,
        "delta_lambda_mean": float(np.mean(dl)) if n else np.nan,
        "delta_lambda_min": float(np.min(dl)) if n else np.nan,
    }
    for j, (s, e) in enumerate(_turn_windows(result.profile), start=1):
        seg = delta[s : min(e + 1, n)]
        out[f"turn{j}_max_abs_delta"] = float(np.abs(seg).max()) if seg.size else np.nan
        out[f"turn{j}_end_delta"] = float(delta[e]) if e < n else np.nan
        out[f"turn{j}_plateau_std"] = float(np.std(seg[-100:])) if seg.size else np.nan
        mid = (s + e) // 2
        out[f"turn{j}_delta_lambda_mid"] = float(dl[mid]) if mid < n else np.nan
        out[f"turn{j}_delta_lambda_mean"] = float(np.mean(dl[s : min(e + 1, n)])) if s < n else np.nan
    for t in (600, 700, 1100):
        if t < n:
            out[f"delta_t{t}"] = float(delta[t])
            out[f"delta_lambda_t{t}"] = float(dl[t])
    return out


def run_many(configs, workers: int = 1) -> list:
    """Run scenarios, fanning out over threads when ``workers > 1``; failures are returned, not raised."""

    def one(cfg):
        try:
            return run_closed_loop(cfg)
        except Exception as exc:  # noqa: BLE001 - a failed run marks its row only
            log.error("run %s failed: %s", cfg.scheme, exc)
            exc.scheme = cfg.scheme
            return exc

    if workers <= 1:
        return [one(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, configs))


def compare(results, reference: str = "itube-CILQR") -> list:
    """Summary rows plus latency ratios relative to ``reference``."""
    rows = []
    for res in results:
        if isinstance(res, RunResult):
            rows.append(summarize(res))
        else:
            rows.append({"scheme": getattr(res, "scheme", "?"), "status": f"error: {res}"})
    ref = next((r for r in rows if r.get("scheme") == reference and "solve_time_mean" in r), None)
    for r in rows:
        if ref is not None and "solve_time_mean" in r:
            r["latency_ratio"] = r["solve_time_mean"] / ref["solve_time_mean"]
        else:
            r["latency_ratio"] = np.nan
    return rows


def write_csv(result: RunResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        cols = [result.records[c] for c in CSV_COLUMNS]
        for i in range(len(result)):
            row = []
            for name, col in zip(CSV_COLUMNS, cols):
                v = col[i]
                row.append(int(v) if name in ("t", "iterations", "failed") else repr(float(v)))
            w.writerow(row)


def format_report(rows, keys=None) -> str:
    """Plain-text table of summary rows."""
    keys = keys or [
        "scheme",
        "status",
        "failures",
        "turn1_max_abs_delta",
        "turn2_max_abs_delta",
        "delta_t700",
        "delta_lambda_t600",
        "delta_lambda_t1100",
        "delta_lambda_min",
        "solve_time_mean",
        "latency_ratio",
    ]
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    table = [keys] + [[fmt(r.get(k, "")) for k in keys] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(keys))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table) + "\n"
