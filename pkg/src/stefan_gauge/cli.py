"""Command-line entry points: simulate, eig, pucci-eig, verify, fit."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("stefan_gauge")

# dotted config key -> SimConfig field
CONFIG_KEYS = {
    "grid.n_r": "n_r",
    "grid.n_theta": "n_theta",
    "time.dt": "dt",
    "time.t_end": "t_end",
    "initial.a": "a",
    "initial.delta": "delta",
    "initial.k": "k",
    "params.eta_fraction": "eta_fraction",
    "params.c_bar": "c_bar",
    "params.c_star": "c_star",
    "domain.radius": "radius",
    "domain.rho": "rho",
    "domain.sigma": "sigma",
    "solver.tol": "tol",
    "filter.enabled": "filter_h",
    "output.snapshot_stride": "snapshot_stride",
}


class ConfigError(ValueError):
    pass


def _convert(key, raw, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>"):
    """Parse ``key = value`` lines (``#`` comments) into a validated ``SimConfig``."""
    from .sim import SimConfig

    types = {f.name: f.type for f in dataclasses.fields(SimConfig)}
    py_types = {"int": int, "float": float, "bool": bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        raw = raw.strip("\"'")
        if key == "initial.b":
            raise ConfigError("initial.b is derived from initial.a and cannot be set")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        name = CONFIG_KEYS[key]
        values[name] = _convert(key, raw, py_types[types[name]])
    try:
        return SimConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    # 17 significant digits round-trip every double; independent of locale
    return f"{x:.16e}"


def write_csv(rows, path):
    from .diagnostics import CSV_COLUMNS

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r.as_tuple()])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {k: np.array(v, dtype=float) for k, v in
                zip(reader.fieldnames, zip(*[[row[k] for k in reader.fieldnames]
                                              for row in reader]))}


def write_snapshot(state, grid, path):
    with open(path, "w") as fh:
        fh.write(f"{grid.n_r} {grid.n_theta} {_fmt(state.t)}\n")
        for name, field in (("q", state.q), ("h", state.h), ("J", state.gauge.J)):
            fh.write(f"{name}\n")
            for row in np.atleast_2d(field):
                fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_snapshot(path):
    lines = Path(path).read_text().splitlines()
    n_r, n_theta, t = lines[0].split()
    n_r, n_theta = int(n_r), int(n_theta)
    out = {"n_r": n_r, "n_theta": n_theta, "t": float(t)}
    i = 1
    for name, rows in (("q", n_r), ("h", 1), ("J", n_r)):
        assert lines[i] == name, f"expected block {name!r}"
        block = np.array([[float(v) for v in lines[i + 1 + j].split()] for j in range(rows)])
        out[name] = block if rows > 1 else block[0]
        i += rows + 1
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def summarize(result, cfg) -> dict:
    """Run summary; every audit carries its numeric margin."""
    from .acceptance import CoupledRun, class_for_run
    from .diagnostics import decay_fit, k_ratio, rayleigh_taylor_check, t_k
    from .eigen import c1, dirichlet_eigenpair
    from .field_core import integrate_boundary, l2_norm
    from .pucci import chi_bound_audit, half_eigenpair
    from .sim import make_initial_data

    grid = result.grid
    pair = dirichlet_eigenpair(grid)
    q0, h0 = make_initial_data(cfg, grid)
    K = k_ratio(q0, grid)
    TK = t_k(K, cfg.c_bar)
    c1v = c1(q0, pair.phi, grid)
    eta = cfg.eta_fraction * pair.lam
    init = result.initial_row
    rows = result.rows
    t = np.array([init.t] + [r.t for r in rows])
    chis = np.array([init.chi] + [r.chi for r in rows])
    final_t = result.snapshots[-1].t

    def fit(y):
        win = (0.5 * final_t, final_t)
        try:
            return decay_fit(t, y, win)
        except ValueError:
            return None

    snap_t = [s.t for s in result.snapshots]
    snap_l2 = [l2_norm(s.q, grid) for s in result.snapshots]
    try:
        q_rate = decay_fit(snap_t, snap_l2, (0.5 * final_t, final_t))
    except ValueError:
        q_rate = None
    drift = max((abs(r.conserved - init.conserved) for r in rows), default=0.0) / init.conserved
    h_dev = max(math.sqrt(integrate_boundary((s.h - h0) ** 2, grid)) for s in result.snapshots)

    rt_ok, rt_margin = rayleigh_taylor_check(q0, pair.phi, cfg.c_star, grid)
    audits = {
        "rayleigh_taylor": {"pass": bool(rt_ok), "margin": rt_margin},
        "conservation": {"pass": drift < 1e-3, "margin": 1e-3 - drift},
        "chi_positive": {"pass": bool(np.all(chis[1:] > 0)),
                         "margin": float(np.min(chis[1:])) if rows else 0.0},
    }
    late = [r.qt_sign for r in rows if r.t >= TK]
    audits["qt_sign_after_TK"] = {"pass": bool(late) and min(late) > 0,
                                  "margin": min(late) if late else None,
                                  "rows": len(late)}
    if rows and result.termination == "t_end_reached":
        cr = CoupledRun(cfg, result, final_t, pair.lam, pair.phi, q0, 0.0)
        params, cls = class_for_run(cr, final_t)
        lam1 = half_eigenpair(params, grid).lam
        audit = chi_bound_audit(t, chis, lam1, c1v, eta)
        audits["chi_bound"] = {"pass": audit.passed, "margin": audit.margin, "c": audit.c,
                               "lambda1": lam1, **cls}

    return {
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "derived": {"b": cfg.b, "eta": eta, "beta": 2 * pair.lam - eta},
        "termination": result.termination,
        "failed_stage": result.failed_stage,
        "failure_time": result.failure_time,
        "final_t": final_t,
        "lambda": pair.lam,
        "K": K,
        "T_K": TK,
        "c1": c1v,
        "initial": dataclasses.asdict(init),
        "decay_rates": {"chi": fit(chis), "q_l2": q_rate},
        "conservation_drift": drift,
        "max_h_deviation": h_dev,
        "filter_removed_max": result.filter_removed,
        "audits": audits,
    }


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def simulate(cfg, out) -> dict:
    from .sim import run

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    written = []

    def on_step(state):
        if state.step % cfg.snapshot_stride == 0:
            write_snapshot(state, grid, out / f"snap_{state.step:06d}.dat")
            written.append(state.step)

    result = run(cfg, grid, on_step=on_step)
    if not result.snapshots:
        summary = {"version": __version__, "config": dataclasses.asdict(cfg),
                   "termination": result.termination, "failed_stage": result.failed_stage,
                   "failure_time": result.failure_time, "final_t": 0.0}
        write_csv([], out / "diagnostics.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return summary
    write_snapshot(result.snapshots[0], grid, out / f"snap_{0:06d}.dat")
    last = result.snapshots[-1]
    if last.step not in written:
        write_snapshot(last, grid, out / f"snap_{last.step:06d}.dat")
    write_csv(result.rows, out / "diagnostics.csv")
    summary = summarize(result, cfg)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    return summary


def eig_report(n_r, n_theta, radius=1.0) -> dict:
    from .eigen import dirichlet_eigenpair, hopf_margins
    from .field_core import ReferenceDomain, build_grid

    grid = build_grid(ReferenceDomain(radius), n_r, n_theta)
    pair = dirichlet_eigenpair(grid)
    return {"lambda": pair.lam, "residual": pair.residual, "iterations": pair.iterations,
            "hopf_margins": hopf_margins(grid, pair), "grid": [n_r, n_theta]}


def pucci_report(mu1, mu2, gamma, n_r, n_theta) -> dict:
    from .field_core import build_grid, unit_disk
    from .pucci import PucciParams, half_eigenpair, negative_half_eigenpair

    grid = build_grid(unit_disk(), n_r, n_theta)
    p = PucciParams(mu1, mu2, gamma)
    pos = half_eigenpair(p, grid)
    neg = negative_half_eigenpair(p, grid)
    return {"params": dataclasses.asdict(p), "grid": [n_r, n_theta],
            "lambda1": pos.lam, "residual1": pos.residual, "iterations1": pos.iterations,
            "policy_iterations1": pos.policy_iterations,
            "lambda2": neg.lam, "residual2": neg.residual, "iterations2": neg.iterations,
            "policy_iterations2": neg.policy_iterations}


def _build_parser():
    ap = argparse.ArgumentParser(prog="stefan-gauge", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the coupled simulation and write outputs")
    s.add_argument("--config")
    s.add_argument("--out", default="out")
    s.add_argument("--snapshot-stride", type=int)

    e = sub.add_parser("eig", help="first Dirichlet eigenpair as JSON")
    e.add_argument("--config")
    e.add_argument("--n-r", type=int)
    e.add_argument("--n-theta", type=int)

    p = sub.add_parser("pucci-eig", help="Pucci half-eigenvalues as JSON")
    p.add_argument("--mu1", type=float, default=1.0)
    p.add_argument("--mu2", type=float, default=1.2)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--n-r", type=int, default=64)
    p.add_argument("--n-theta", type=int, default=64)

    v = sub.add_parser("verify", help="run the acceptance criteria")
    v.add_argument("--config")
    v.add_argument("--out")
    v.add_argument("--grid", type=int, help="override both grid sizes")

    f = sub.add_parser("fit", help="decay rate of a diagnostics.csv column")
    f.add_argument("csv")
    f.add_argument("--column", default="chi")
    f.add_argument("--window", type=float, nargs=2, metavar=("T0", "T1"))
    return ap


def _load(args):
    from .sim import SimConfig

    cfg = parse_config(args.config) if getattr(args, "config", None) else SimConfig()
    if getattr(args, "snapshot_stride", None):
        cfg = dataclasses.replace(cfg, snapshot_stride=args.snapshot_stride)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args) if args.command in ("simulate", "eig", "verify") else None
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "simulate":
        summary = simulate(cfg, args.out)
        print(json.dumps({"termination": summary["termination"], "final_t": summary["final_t"],
                          "out": str(args.out)}))
        return 0
    if args.command == "eig":
        rep = eig_report(args.n_r or cfg.n_r, args.n_theta or cfg.n_theta, cfg.radius)
        print(json.dumps(rep, indent=2, default=_json_default))
        return 0
    if args.command == "pucci-eig":
        try:
            rep = pucci_report(args.mu1, args.mu2, args.gamma, args.n_r, args.n_theta)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(json.dumps(rep, indent=2, default=_json_default))
        return 0
    if args.command == "verify":
        from .acceptance import run_all

        if args.grid:
            cfg = dataclasses.replace(cfg, n_r=args.grid, n_theta=args.grid)
        verdicts = run_all(cfg.n_r, cfg)
        print(f"{'criterion':<28} {'status':<6} {'margin':>12} {'seconds':>8}")
        for v in verdicts:
            print(f"{v.name:<28} {'PASS' if v.passed else 'FAIL':<6} {v.margin:>12.3e} "
                  f"{v.seconds:>8.1f}")
        if args.out:
            Path(args.out).write_text(json.dumps(
                [dataclasses.asdict(v) for v in verdicts], indent=2, default=_json_default))
        return 0 if all(v.passed for v in verdicts) else 1
    if args.command == "fit":
        from .diagnostics import decay_fit

        data = read_csv(args.csv)
        if args.column not in data:
            print(f"error: no column {args.column!r}", file=sys.stderr)
            return 2
        slope = decay_fit(data["t"], data[args.column], args.window)
        print(json.dumps({"column": args.column, "window": args.window, "slope": slope}))
        return 0
    return 2  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
