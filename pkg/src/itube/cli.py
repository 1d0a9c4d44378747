"""Command-line entry point: ``itube {table-gen,run,compare,bench,rpi}``.

Settings come from an INI file (sections below) and are overridden by flags.
The effective configuration is written next to every output.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 divergence.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import cilqr
from .interp import CAP_MODES
from .params import BarrierParams, Constraints, ControlParams
from .polytope import (
    Box2,
    EmptySetError,
    Interval,
    build_kappa_table,
    rpi_outer,
    subsystem_gain,
    pontryagin_diff_box,
)
from .schemes import ALL_SCHEMES, SchemeId
from .simulator import (
    CLIP_MODES,
    CurvatureProfile,
    RunResult,
    ScenarioConfig,
    compare,
    format_report,
    run_many,
    summarize,
    write_csv,
)
from .vehicle import VehicleParams, build_subsystem

log = logging.getLogger("itube")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DIVERGED = 4

DEFAULT_CONSTRAINTS = Constraints()

SECTIONS = {
    "scenario": {"scheme", "x0", "noise_std", "seed", "comfort_clip", "cap", "alpha_max", "backend"},
    "vehicle": {f.name for f in dataclasses.fields(VehicleParams)},
    "constraints": {f.name for f in dataclasses.fields(Constraints)},
    "controller": {"N", "Q", "R", "S", "delta_frac", "lambda_d"} | {f.name for f in dataclasses.fields(BarrierParams)},
    "profile": {"segments", "T"},
    "compare": {"schemes", "workers", "repeats"},
}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _parse_segments(text: str) -> tuple:
    segs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        start, end, kappa = part.split(":")
        segs.append((int(start), int(end), float(kappa)))
    return tuple(segs)


def _format_segments(segs) -> str:
    return ", ".join(f"{s}:{e}:{k!r}" for s, e, k in segs)


def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cp.optionxform = str
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(cp[section]) - SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cp


def _apply_overrides(cp: configparser.ConfigParser, args) -> None:
    flag_map = {
        "scheme": ("scenario", "scheme"),
        "v_x": ("vehicle", "v_x"),
        "x1_max": ("constraints", "ddelta_max"),
        "x3_max": ("constraints", "dtheta_max"),
        "noise_std": ("scenario", "noise_std"),
        "seed": ("scenario", "seed"),
        "backend": ("scenario", "backend"),
        "cap": ("scenario", "cap"),
        "comfort_clip": ("scenario", "comfort_clip"),
        "steps": ("profile", "T"),
        "alpha_max": ("scenario", "alpha_max"),
    }
    for attr, (section, key) in flag_map.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = str(value)


def scenario_from_config(cp: configparser.ConfigParser) -> ScenarioConfig:
    """Build and validate a scenario; raises :class:`ConfigError` on bad values."""
    try:
        sc = cp["scenario"] if cp.has_section("scenario") else {}
        vh = {k: float(v) for k, v in (cp["vehicle"].items() if cp.has_section("vehicle") else [])}
        vehicle = VehicleParams(**vh)
        cons = {k: float(v) for k, v in (cp["constraints"].items() if cp.has_section("constraints") else [])}
        constraints = Constraints(**cons)
        for name in ("delta_max", "ddelta_max", "theta_max", "dtheta_max", "steer_max", "kappa_max"):
            if getattr(constraints, name) > getattr(DEFAULT_CONSTRAINTS, name) + 1e-12:
                raise ConfigError(
                    f"constraint {name} = {getattr(constraints, name)} exceeds the supported range "
                    f"(<= {getattr(DEFAULT_CONSTRAINTS, name):.6g})"
                )
        ctl_kw: dict = {"constraints": constraints}
        barrier_kw = {}
        if cp.has_section("controller"):
            for k, v in cp["controller"].items():
                if k == "N":
                    ctl_kw["N"] = int(v)
                elif k in ("Q", "S"):
                    ctl_kw[k] = _floats(v)
                elif k in ("R", "delta_frac", "lambda_d"):
                    ctl_kw[k] = float(v)
                else:
                    barrier_kw[k] = float(v)
        ctl_kw["barrier"] = BarrierParams(**barrier_kw)
        ctrl = ControlParams(**ctl_kw)
        if len(ctrl.Q) != 4 or len(ctrl.S) != 3:
            raise ConfigError("Q needs 4 diagonal entries and S needs 3")
        prof = cp["profile"] if cp.has_section("profile") else {}
        T = int(prof.get("T", 1400))
        segs = _parse_segments(prof["segments"]) if "segments" in prof else CurvatureProfile().segments
        profile = CurvatureProfile(tuple(s for s in segs if s[0] < T), T)
        backend = sc.get("backend", None)
        if backend in ("", "auto", "None"):
            backend = None
        if backend is not None and backend not in cilqr.BACKENDS:
            raise ConfigError(f"backend {backend!r} unavailable; choose from {cilqr.BACKENDS}")
        cap = sc.get("cap", "asymmetric")
        if cap not in CAP_MODES:
            raise ConfigError(f"cap must be one of {CAP_MODES}")
        clip = sc.get("comfort_clip", "off")
        if clip not in CLIP_MODES:
            raise ConfigError(f"comfort_clip must be one of {CLIP_MODES}")
        alpha_max = float(sc.get("alpha_max", 0.1))
        if not 0.0 < alpha_max < 1.0:
            raise ConfigError("alpha_max must lie in (0, 1)")
        return ScenarioConfig(
            scheme=sc.get("scheme", "itube-CILQR"),
            vehicle=vehicle,
            x0=_floats(sc.get("x0", "2 0 0 0")),
            ctrl=ctrl,
            profile=profile,
            noise_std=float(sc.get("noise_std", 0.0)),
            seed=int(sc.get("seed", 0)),
            comfort_clip=clip,
            cap=cap,
            alpha_max=alpha_max,
            backend=backend,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def config_of(cfg: ScenarioConfig, extra: dict | None = None) -> configparser.ConfigParser:
    """The INI equivalent of a scenario (written alongside outputs)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["scenario"] = {
        "scheme": cfg.scheme,
        "x0": " ".join(repr(float(v)) for v in cfg.x0),
        "noise_std": repr(cfg.noise_std),
        "seed": str(cfg.seed),
        "comfort_clip": cfg.comfort_clip,
        "cap": cfg.cap,
        "alpha_max": repr(cfg.alpha_max),
        "backend": cfg.backend or "auto",
    }
    cp["vehicle"] = {k: repr(v) for k, v in dataclasses.asdict(cfg.vehicle).items()}
    cp["constraints"] = {k: repr(v) for k, v in dataclasses.asdict(cfg.constraints).items()}
    c = cfg.ctrl
    ctl = {
        "N": str(c.N),
        "Q": " ".join(repr(v) for v in c.Q),
        "R": repr(c.R),
        "S": " ".join(repr(v) for v in c.S),
        "delta_frac": repr(c.delta_frac),
        "lambda_d": repr(c.lambda_d),
    }
    ctl.update({k: repr(v) for k, v in dataclasses.asdict(c.barrier).items()})
    cp["controller"] = ctl
    cp["profile"] = {"segments": _format_segments(cfg.profile.segments), "T": str(cfg.profile.T)}
    for section, values in (extra or {}).items():
        cp[section] = values
    return cp


def _write_config(cp, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "config.ini").open("w") as fh:
        cp.write(fh)


def _schemes(cp, args) -> list:
    text = getattr(args, "schemes", None)
    if text is None and cp.has_section("compare"):
        text = cp["compare"].get("schemes")
    if not text:
        return [s.name for s in ALL_SCHEMES]
    try:
        return [SchemeId.parse(t).name for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _int_opt(cp, args, name, default):
    v = getattr(args, name, None)
    if v is None and cp.has_section("compare"):
        v = cp["compare"].get(name)
    return int(v) if v is not None else default


# commands ---------------------------------------------------------------------------------


def cmd_table_gen(args, cp) -> int:
    cfg = scenario_from_config(cp)
    c = cfg.constraints
    table = build_kappa_table(
        cfg.vehicle,
        X=Box2.symmetric(c.ddelta_max, c.dtheta_max),
        U=Interval.symmetric(c.steer_max),
        kappa_max=c.kappa_max,
        alpha_max=cfg.alpha_max,
    )
    out = Path(args.out)
    path = Path(args.table) if args.table else out / f"kappa_table_v{cfg.vehicle.v_x:g}.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    table.save(path)
    _write_config(config_of(cfg), out)
    print(f"wrote {len(table)} rows to {path}")
    return EXIT_OK


def _result_code(results) -> int:
    code = EXIT_OK
    for r in results:
        if not isinstance(r, RunResult):
            code = max(code, EXIT_SOLVER)
        elif r.status == "diverged":
            code = max(code, EXIT_DIVERGED)
        elif r.n_failures:
            code = max(code, EXIT_SOLVER)
    return code


def cmd_run(args, cp) -> int:
    cfg = scenario_from_config(cp)
    out = Path(args.out)
    _write_config(config_of(cfg), out)
    [res] = run_many([cfg])
    if not isinstance(res, RunResult):
        print(f"run failed: {res}", file=sys.stderr)
        return EXIT_SOLVER
    csv_path = Path(args.csv) if args.csv else out / f"{res.scheme}.csv"
    write_csv(res, csv_path)
    summary = summarize(res)
    text = "".join(f"{k}: {v}\n" for k, v in summary.items())
    (out / f"{res.scheme}_summary.txt").write_text(text)
    print(text, end="")
    if res.status == "diverged":
        print(f"{res.scheme}: state diverged after {len(res)} steps", file=sys.stderr)
    elif res.n_failures:
        print(f"{res.scheme}: {res.n_failures} solver failures (previous control held)", file=sys.stderr)
    return _result_code([res])


def _scenario_set(cp, args):
    base = scenario_from_config(cp)
    return base, [dataclasses.replace(base, scheme=s) for s in _schemes(cp, args)]


def cmd_compare(args, cp) -> int:
    base, cfgs = _scenario_set(cp, args)
    workers = _int_opt(cp, args, "workers", 1)
    out = Path(args.out)
    _write_config(config_of(base, {"compare": {"schemes": " ".join(c.scheme for c in cfgs), "workers": str(workers)}}), out)
    results = run_many(cfgs, workers=workers)
    for res in results:
        if isinstance(res, RunResult):
            write_csv(res, out / f"{res.scheme}.csv")
    rows = compare(results)
    report = format_report(rows)
    (out / "compare.txt").write_text(report)
    print(report, end="")
    return _result_code(results)


def cmd_bench(args, cp) -> int:
    base, cfgs = _scenario_set(cp, args)
    repeats = _int_opt(cp, args, "repeats", 1)
    workers = _int_opt(cp, args, "workers", 1)
    out = Path(args.out)
    _write_config(
        config_of(base, {"compare": {"schemes": " ".join(c.scheme for c in cfgs), "workers": str(workers), "repeats": str(repeats)}}),
        out,
    )
    samples: dict = {c.scheme: [] for c in cfgs}
    results = []
    for _ in range(repeats):
        batch = run_many(cfgs, workers=workers)
        results.extend(batch)
        for cfg, res in zip(cfgs, batch):
            if isinstance(res, RunResult):
                samples[cfg.scheme].append(res.column("solve_time"))
    ref = samples.get("itube-CILQR")
    ref_mean = float(np.mean(np.concatenate(ref))) if ref else math.nan
    lines = [f"# backend: {base.backend or cilqr.DEFAULT_BACKEND}; steps: {base.profile.T}; repeats: {repeats}; workers: {workers}"]
    lines.append(f"{'scheme':16s} {'mean_ms':>10s} {'std_ms':>10s} {'ratio':>8s}")
    for name, s in samples.items():
        if not s:
            lines.append(f"{name:16s} {'failed':>10s}")
            continue
        t = np.concatenate(s)
        lines.append(f"{name:16s} {1e3 * t.mean():10.4f} {1e3 * t.std():10.4f} {t.mean() / ref_mean:8.3f}")
    report = "\n".join(lines) + "\n"
    (out / "bench.txt").write_text(report)
    print(report, end="")
    return _result_code(results)


RPI_CASES = ((20.0, 0.05), (20.0, 0.1), (22.2, 0.05), (22.2, 0.1))


def cmd_rpi(args, cp) -> int:
    cfg = scenario_from_config(cp)
    c = cfg.constraints
    X = Box2.symmetric(c.ddelta_max, c.dtheta_max)
    out = Path(args.out)
    _write_config(config_of(cfg), out)
    rows = ["case,v_x,kappa,set,vertex,x1,x3"]
    summary = ["case,v_x,kappa,rpi_area,x1_max,x3_max"]
    for j, (v, kappa) in enumerate(RPI_CASES, start=1):
        params = cfg.vehicle.with_speed(v)
        sub = build_subsystem(params)
        K = subsystem_gain(params)
        S = rpi_outer(sub, K, kappa, cfg.alpha_max)
        sets = {"X": X.to_polygon().vertices}
        sets["S_RPI"] = S.vertices
        try:
            Xt = pontryagin_diff_box(X, S)
            sets["X_bar"] = Xt.to_polygon().vertices
            tight = (Xt.hi[0], Xt.hi[1])
        except EmptySetError:
            tight = (math.nan, math.nan)
        for name, verts in sets.items():
            for i, (a, b) in enumerate(np.atleast_2d(verts)):
                rows.append(f"{j},{v!r},{kappa!r},{name},{i},{a!r},{b!r}")
        summary.append(f"{j},{v!r},{kappa!r},{S.area():.9g},{tight[0]:.9g},{tight[1]:.9g}")
    path = Path(args.csv) if args.csv else out / "rpi_sets.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(rows) + "\n")
    (out / "rpi_summary.csv").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="itube", description="Tube-based lane-keeping controllers and experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("-c", "--config", help="INI configuration file")
        p.add_argument("-o", "--out", default="out", help="output directory")
        p.add_argument("--v-x", dest="v_x", type=float)
        p.add_argument("--x1-max", type=float, help="bound on the lateral rate")
        p.add_argument("--x3-max", type=float, help="bound on the yaw rate")
        p.add_argument("--alpha-max", type=float)
        if scenario:
            p.add_argument("--noise-std", type=float)
            p.add_argument("--seed", type=int)
            p.add_argument("--backend", choices=("compiled", "python"))
            p.add_argument("--cap", choices=CAP_MODES)
            p.add_argument("--comfort-clip", choices=CLIP_MODES)
            p.add_argument("--steps", type=int, help="simulation length T")

    p = sub.add_parser("table-gen", help="write the curvature lookup table")
    common(p, scenario=False)
    p.add_argument("--table", help="table path (default OUT/kappa_table_v<v_x>.txt)")
    p.set_defaults(func=cmd_table_gen)

    p = sub.add_parser("run", help="simulate one scheme")
    common(p)
    p.add_argument("--scheme")
    p.add_argument("--csv", help="CSV log path (default OUT/<scheme>.csv)")
    p.set_defaults(func=cmd_run)

    for name, func, text in (("compare", cmd_compare, "run several schemes and rank them"), ("bench", cmd_bench, "latency table over schemes")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--schemes", help="space or comma separated scheme names (default: all ten)")
        p.add_argument("--workers", type=int)
        if name == "bench":
            p.add_argument("--repeats", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("rpi", help="export set vertices for the four speed/curvature cases")
    common(p, scenario=False)
    p.add_argument("--csv", help="vertex CSV path (default OUT/rpi_sets.csv)")
    p.set_defaults(func=cmd_rpi)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cp = load_config(args.config)
        _apply_overrides(cp, args)
        code = args.func(args, cp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptySetError as exc:
        print(f"config error: tightened constraints are empty: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    log.info("finished in %.2f s", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
