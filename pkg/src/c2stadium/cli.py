"""Command-line front end.

Every command reads a JSON config (``--config``) and writes CSV or JSON rows to
``--out`` (stdout by default).  Exit codes: 0 ok, 2 config error, 3
mathematical or precondition failure; diagnostics go to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import largesep as ls
from . import smallsep as ss
from .expansions import AssumptionError
from .geometry import ShapeError, build_boundary, build_table, make_shape

EXIT_OK, EXIT_CONFIG, EXIT_MATH = 0, 2, 3
CLOSURE_TOL = 1e-8


class ConfigError(ValueError):
    pass


def _diag(level: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"level": level, "message": message, **extra}) + "\n")


# config -------------------------------------------------------------------------------------


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def shape_from_config(cfg: dict):
    spec = cfg.get("shape")
    if isinstance(spec, str):
        p = Path(spec)
        if not p.is_absolute():
            p = Path(cfg.get("_base", ".")) / p
        try:
            spec = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"shape file not found: {spec}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"shape file is not valid JSON: {exc}")
    if spec is None:
        raise ConfigError("config needs a 'shape' entry")
    try:
        return make_shape(spec)
    except (ShapeError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid shape: {exc}")


def _num(cfg: dict, key: str, default=None, lo=None, hi=None, integer=False):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(f"missing parameter '{key}'")
    try:
        v = int(v) if integer else float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"parameter '{key}' must be numeric")
    if lo is not None and not v > lo:
        raise ConfigError(f"parameter '{key}'={v} must exceed {lo}")
    if hi is not None and not v < hi:
        raise ConfigError(f"parameter '{key}'={v} must be below {hi}")
    return v


def _int_list(cfg: dict, key: str, default):
    v = cfg.get(key, default)
    if isinstance(v, dict):
        v = list(range(int(v.get("start", 0)), int(v["stop"]), int(v.get("step", 1))))
    try:
        return [int(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"parameter '{key}' must be a list of integers")


def _float_list(cfg: dict, key: str, default):
    v = cfg.get(key, default)
    if isinstance(v, (int, float)):
        v = [v]
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"parameter '{key}' must be a list of numbers")


def _geometry(cfg: dict):
    h = shape_from_config(cfg)
    alpha = _num(cfg, "alpha", lo=0.0, hi=np.pi / 2)
    rho = _num(cfg, "rho", 1.0, lo=0.0)
    return h, alpha, rho


# output -------------------------------------------------------------------------------------


def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def render(rows, fmt: str, columns=None) -> str:
    rows = [_clean(r) for r in rows]
    if fmt == "json":
        return json.dumps(rows, indent=1) + "\n"
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _map(fn, items, jobs: int):
    # results come back in input order whatever the completion order
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# commands -----------------------------------------------------------------------------------


def cmd_table(cfg: dict, args) -> list[dict]:
    h, alpha, rho = _geometry(cfg)
    L = _num(cfg, "L", 0.0)
    if L < 0:
        raise ConfigError("L must be non-negative")
    gamma = build_boundary(h, alpha, rho)
    table = build_table(gamma, L)
    npts = _num(cfg, "samples", 400, lo=1, integer=True)
    s = np.linspace(0.0, table.perimeter, npts, endpoint=False)
    pts = table.point(s)
    rows = [{"s": float(a), "x": float(p[0]), "y": float(p[1]), "theta": float(table.theta(a)),
             "curvature": float(table.curvature(a))} for a, p in zip(s, pts)]
    _diag("info", "table", W=table.W, s_alpha=gamma.s_alpha, c_alpha=gamma.c_alpha,
          total_len=gamma.total_len, perimeter=table.perimeter)
    return rows


def _scan_point(task):
    spec, alpha, rho, n = task
    h = make_shape(spec)
    row = {"n": n, "alpha": alpha}
    try:
        z, hz = ss.solve_zeta_star(h, n)
    except ss.NoInteriorSolution:
        return {**row, "verdict": "no-solution"}
    row.update(zeta_star=z, h_at_zeta=hz, trace_limit=ss.trace_limit(n, hz))
    try:
        orb = ss.solve_orbit(h, alpha, rho, n)
    except ss.OrbitError as exc:
        return {**row, "verdict": ss.verdict_from_h(n, hz), "orbit": "failed", "error": str(exc)}
    row.update(zeta=orb.zeta, phi_np1=orb.phi_np1, trace=orb.trace, closure=orb.closure,
               verdict=orb.verdict, orbit="ok" if orb.closure < CLOSURE_TOL else "failed")
    return row


SCAN_COLUMNS = ["n", "alpha", "zeta_star", "h_at_zeta", "trace_limit", "zeta", "phi_np1", "trace",
                "closure", "verdict", "orbit"]


def cmd_smallsep_scan(cfg: dict, args) -> list[dict]:
    h, _, rho = _geometry({**cfg, "alpha": cfg.get("alpha", cfg.get("alphas", [0.05])[0])})
    ns = _int_list(cfg, "n", [0])
    alphas = _float_list(cfg, "alphas", cfg.get("alpha", 0.05))
    for a in alphas:
        if not 0 < a < np.pi / 2:
            raise ConfigError(f"alpha={a} outside (0, pi/2)")
    tasks = [(h.source, a, rho, n) for a in alphas for n in ns]
    return _map(_scan_point, tasks, args.jobs)


def cmd_smallsep_orbit(cfg: dict, args) -> list[dict]:
    h, alpha, rho = _geometry(cfg)
    n = _num(cfg, "n", 0, integer=True)
    orb = ss.solve_orbit(h, alpha, rho, n)
    if orb.closure >= CLOSURE_TOL:
        raise ArithmeticError(f"orbit does not close: residual {orb.closure:.3g}")
    row = {k: getattr(orb, k) for k in ("n", "alpha", "rho", "zeta", "phi_np1", "phi_n", "phi_np2", "psi_n",
                                          "psi_np2", "tau_n_np1", "tau_np1_np2", "h_zeta", "trace",
                                          "sim_trace", "closure", "verdict")}
    rows = [row]
    Ls = cfg.get("L_values")
    if Ls:
        gamma = build_boundary(h, alpha, rho)
        rows += [{"continuation": True, **r} for r in ss.continue_in_L(gamma, orb, _float_list(cfg, "L_values", []))]
    return rows


def _pass_from_config(cfg: dict):
    h, alpha, rho = _geometry(cfg)
    gamma = build_boundary(h, alpha, rho)
    geom = ls.find_three_pass(gamma)
    ok, reasons = ls.verify_pass_admissibility(gamma, geom)
    if not ok and not cfg.get("allow_inadmissible", False):
        raise AssumptionError("inadmissible pass: " + "; ".join(reasons))
    P = ls.build_pass(build_table(gamma, 0.0), geom)
    return gamma, geom, P


def cmd_largesep_pass(cfg: dict, args) -> list[dict]:
    gamma, geom, P = _pass_from_config(cfg)
    c = ls.three_orbit_constants(geom)
    F = P.expansion
    return [{"s0": geom.s0, "s1": geom.s1, "phi0": geom.phi0, "phi1": geom.phi1, "tau01": geom.tau01,
             "R0": geom.R0, "R1": geom.R1, "omega_hat_0": P.omega_hat_0, "omega_hat_1": P.omega_hat_1,
             "W": P.table.W, "a01": F.A(0, 1), "a20": F.A(2, 0), "b30": F.B(3, 0), "kappa": c["kappa"],
             "a01_closed": c["a01"], "a20_closed": c["a20"], "b30_closed": c["b30"],
             "L0": ls.L_n_of(P, 0.0, 0, 0.0), "spacing": P.table.W / np.tan(P.omega_hat_1)}]


def cmd_largesep_intervals(cfg: dict, args) -> list[dict]:
    eps = _num(cfg, "epsilon", 0.1, lo=0.0, hi=0.5)
    ns = _int_list(cfg, "n", [16, 32])
    _, _, P = _pass_from_config(cfg)
    iv = ls.stable_intervals(P, eps, ns)
    if cfg.get("verify", False):
        iv = ls.verify_intervals(P, iv)
        bad = [r for r in iv if not (r["elliptic"] and r["closure"] < CLOSURE_TOL)]
        if bad:
            raise ArithmeticError(f"{len(bad)} interval midpoints failed verification")
    return iv


def cmd_largesep_birkhoff(cfg: dict, args) -> list[dict]:
    ns = _int_list(cfg, "n", [32, 64, 128])
    thetas = _float_list(cfg, "theta_tr", [1.0])
    _, _, P = _pass_from_config(cfg)
    rows = []
    for th in thetas:
        if not -2 < th < 2:
            raise ConfigError(f"theta_tr={th} outside (-2, 2)")
        for n in ns:
            T, info = ls.build_return_coeffs(P, th, n)
            A = ls.birkhoff_A(T)
            rows.append({"theta_tr": th, "n": n, "ybar0": info["ybar0"], "A": A, "A_over_n2": A / n**2,
                         "limit": ls.birkhoff_limit(P, th)})
    return rows


def cmd_largesep_allsep(cfg: dict, args) -> list[dict]:
    ns = _int_list(cfg, "n", [1, 2, 4, 8])
    ratios = _float_list(cfg, "rho_ratio", [0.45])
    tau = _num(cfg, "tau", 1.0, lo=0.0)
    ls_ = _float_list(cfg, "l", [0.0, 1.0])
    rows = []
    for n in ns:
        if n < 1:
            raise ConfigError("n must be >= 1")
        for r in ratios:
            if not 0 < r < 1:
                raise ConfigError("rho_ratio must lie in (0, 1)")
            lmax = ls.all_sep_lmax(n, r, tau)
            for l in ls_:
                ht = ls.all_sep_trace(n, r, l, tau)
                rows.append({"n": n, "rho_ratio": r, "l": l, "tau": tau, "half_trace": ht,
                             "elliptic": bool(abs(ht) < 1), "l_max": lmax})
    return rows


def _portrait_orbit(cfg: dict):
    kind = cfg.get("orbit", "smallsep")
    if kind == "smallsep":
        h, alpha, rho = _geometry(cfg)
        n = _num(cfg, "n", 0, integer=True)
        orb = ss.solve_orbit(h, alpha, rho, n)
        table = build_table(build_boundary(h, alpha, rho), 0.0)
        start = dyn.PhaseState.from_phi(table, table.right_s(0.0), orb.phi_n)
        return table, start, 4 * (n + 1)
    if kind == "largesep":
        _, _, P = _pass_from_config(cfg)
        n = _num(cfg, "n", 16, integer=True)
        t = _num(cfg, "t", 1.0)
        y = ls.solve_upsilon(P, n, t)
        orb = ls.simulate_orbit(P, n, y)
        table = build_table(P.gamma, orb.L)
        return table, orb.states[0], 2 * n + 6
    raise ConfigError(f"unknown orbit kind {kind!r}")


def cmd_portrait(cfg: dict, args) -> list[dict]:
    table, ref, period = _portrait_orbit(cfg)
    count = _num(cfg, "initial_conditions", 8, lo=0, integer=True)
    iters = _num(cfg, "iterates", 200, lo=0, integer=True)
    radius = _num(cfg, "radius", 1e-3, lo=0.0)
    rng = np.random.default_rng(args.seed)
    rows = []
    for ic in range(count):
        x0, y0 = rng.uniform(-radius, radius, 2)
        try:
            st = dyn.from_jacobi(table, ref, float(x0), float(y0))
        except dyn.ChartError:
            continue
        for k in range(iters + 1):
            j = dyn.to_jacobi(table, ref, st.s, st.omega)
            rows.append({"ic": ic, "k": k, "x": j.x, "y": j.y})
            if k == iters:
                break
            try:
                for _ in range(period):
                    st, _ = dyn.step(table, st)
            except (dyn.TangencyError, dyn.IntersectionError):
                break
    return rows


COMMANDS = {
    ("table", None): cmd_table,
    ("smallsep", "scan"): cmd_smallsep_scan,
    ("smallsep", "orbit"): cmd_smallsep_orbit,
    ("largesep", "pass"): cmd_largesep_pass,
    ("largesep", "intervals"): cmd_largesep_intervals,
    ("largesep", "birkhoff"): cmd_largesep_birkhoff,
    ("largesep", "allsep"): cmd_largesep_allsep,
    ("portrait", None): cmd_portrait,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)

    p = argparse.ArgumentParser(prog="c2stadium", description="Periodic orbits of C2-smoothed stadium billiards.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("table", parents=[common], help="boundary samples of a table")
    sp = sub.add_parser("smallsep", help="small-separation orbits")
    spa = sp.add_subparsers(dest="action", required=True)
    for a in ("scan", "orbit"):
        spa.add_parser(a, parents=[common])
    lp = sub.add_parser("largesep", help="large-separation orbits")
    lpa = lp.add_subparsers(dest="action", required=True)
    for a in ("pass", "intervals", "birkhoff", "allsep"):
        lpa.add_parser(a, parents=[common])
    sub.add_parser("portrait", parents=[common], help="phase-portrait samples near an orbit")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    fn = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        cfg = load_config(args.config)
        rows = fn(cfg, args)
    except (ConfigError, ShapeError) as exc:
        _diag("error", str(exc), kind="config")
        return EXIT_CONFIG
    except (ArithmeticError, AssumptionError, ss.NoInteriorSolution, RuntimeError) as exc:
        _diag("error", str(exc), kind=type(exc).__name__)
        return EXIT_MATH
    cols = SCAN_COLUMNS if fn is cmd_smallsep_scan else None
    text = render(rows, args.format, cols) if rows else ("[]\n" if args.format == "json" else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
