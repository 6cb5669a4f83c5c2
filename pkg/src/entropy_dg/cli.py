"""Experiment CLI: config ingestion, preset batches, artifact persistence.

Commands:
    entropy-dg run --config FILE
    entropy-dg preset NAME --out DIR
    entropy-dg certify [--config FILE] [--out DIR]
    entropy-dg list-presets

Exit codes: 0 success, 2 config error, 3 solver nonconvergence,
4 certificate failure.  ENTROPY_DG_THREADS caps preset batch workers.
Run directories contain `series.csv` (per-step diagnostics),
`solution_k*.csv` (sampled density snapshots, two rows per interior face so
jumps stay visible) and `summary.json`.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, presets
from .dgspace import gauss_legendre_rule
from .errors import NewtonDivergenceError
from .forms import NewtonControls, SchemeParams, assemble_B
from .mesh import build_uniform_mesh
from .reference import (FemBlowupError, fem_p1_lambda, fem_p1_u,
                        traveling_wave_reference)
from .solver import run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CERT = 4

SERIES_COLUMNS = ("k", "t", "S", "mass", "l1_dist", "dg_half_norm", "B_value",
                  "entropy_step_slack", "mass_bounds_ok", "dgnorm_bound_ok")


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


# ---------------------------------------------------------------- config

def parse_config_text(text: str) -> dict:
    """Parse a flat key = value config (TOML-style scalars and arrays)."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not value.startswith(("'", '"')) and "#" in value:
            value = value.partition("#")[0].strip()
        out[key] = _parse_value(value, ln)
    return out


def _parse_value(value: str, ln: int):
    if value.startswith("[") and value.endswith("]"):
        inner = value[1:-1].strip()
        return tuple(_parse_value(v.strip(), ln) for v in inner.split(",")) \
            if inner else ()
    if value in ("true", "false"):
        return value == "true"
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        return value[1:-1]
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"line {ln}: cannot parse value {value!r}") from exc


def load_config(path) -> dict:
    cfg = dict(presets.DEFAULTS)
    cfg.update(parse_config_text(Path(path).read_text()))
    return cfg


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def build_u0(cfg):
    """Initial-datum callable from its spec string; metadata as second value."""
    spec = cfg["u0"]
    a, b = float(cfg["a"]), float(cfg["b"])
    floor = float(cfg["floor"])
    meta = {"u0": spec}
    kind, _, arg = spec.partition(":")
    if kind == "one-group":
        height = float(arg or 0.8)
        mid = 0.5 * (a + b)
        return (lambda x: np.where(x < mid, height, floor)), meta
    if kind == "spike":
        n = float(arg)
        cut = a + (b - a) / n
        return (lambda x: np.where(x < cut, n, floor)), meta
    if kind == "constant":
        c = float(arg)
        return (lambda x: np.full_like(np.asarray(x, dtype=float), c)), meta
    if kind == "cosine":
        return (lambda x: 1.0 + 0.5 * np.cos(np.pi * x)), meta
    if kind == "wave":
        c = float(arg or 2.0)
        profile = traveling_wave_reference(c=c, s_end=b - a, tol=1e-10,
                                           n_samples=4001)
        meta["wave_speed"] = c
        meta["profile_component"] = profile.profile_component
        meta["note"] = ("second ODE component used as the wave profile; "
                        "first component is its derivative")
        s, psi = profile.s, profile.psi

        def u0(x):
            shifted = np.asarray(x, dtype=float) - a
            return np.maximum(np.interp(shifted, s, psi), floor)

        return u0, meta
    if kind == "segments":
        segs = []
        for part in arg.split(";"):
            x0, x1, v = (float(t) for t in part.split(","))
            segs.append((x0, x1, v))

        def u0(x):
            x = np.asarray(x, dtype=float)
            out = np.full_like(x, floor)
            for x0, x1, v in segs:
                out = np.where((x >= x0) & (x < x1), v, out)
            return out

        return u0, meta
    raise ConfigError(f"unknown initial datum spec {spec!r}")


def build_params(cfg) -> SchemeParams:
    try:
        p = int(cfg["p"])
        c_inv = float(cfg["c_inv"]) or diagnostics.compute_c_inv(p)
        newton = NewtonControls(
            tol=float(cfg["newton_tol"]),
            stall_tol=float(cfg["newton_stall_tol"]),
            max_iter=int(cfg["newton_max_iter"]),
            max_halvings=int(cfg["newton_max_halvings"]),
        )
        return SchemeParams(
            d=float(cfg["d"]), dt=float(cfg["dt"]), p=p, c_inv=c_inv,
            quad=gauss_legendre_rule(int(cfg["quad_points"])),
            eps=float(cfg["eps"]), newton=newton,
            reaction=bool(cfg["reaction"]),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- output

def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_solution(path: Path, x, u):
    _write_csv(path, ("x", "u"), zip(x, u))


def _decay_slopes(times, entropies, cfg):
    n = len(entropies)
    slopes = {}
    for name, frac_key, sl in (
            ("early", "early_window", slice(0, max(3, int(n * float(cfg["early_window"]))))),
            ("late", "late_window", slice(n - max(3, int(n * float(cfg["late_window"]))), n))):
        try:
            slopes[name] = diagnostics.fit_decay_rate(times[sl], entropies[sl])
        except ValueError:
            slopes[name] = None
    return slopes


def _dg_series_rows(series):
    rows = []
    for e in series.entries:
        r = e.report
        rows.append((e.k, e.t, r.S, r.mass, r.l1_dist, r.dg_half_norm,
                     r.B_value, r.entropy_step_slack,
                     r.mass_lower_ok and r.mass_upper_ok, r.dgnorm_bound_ok))
    return rows


def _certificates(series):
    S = series.entropies
    reports = series.reports
    return {
        "entropy_monotone": bool(np.all(np.diff(S) <= 1e-9)),
        "entropy_step_min_slack": float(min(
            (r.entropy_step_slack for r in reports[1:]), default=0.0)),
        "entropy_step_ok_count": int(sum(
            r.entropy_step_slack >= -1e-9 for r in reports[1:])),
        "mass_bounds_ok_count": int(sum(
            r.mass_lower_ok and r.mass_upper_ok for r in reports)),
        "dgnorm_ok_count": int(sum(r.dgnorm_bound_ok for r in reports)),
        "steps": len(reports) - 1,
    }


def run_experiment(cfg, out_dir=None) -> dict:
    """Run one configured experiment; writes artifacts, returns the summary.

    Solver nonconvergence still writes the partial series and the summary
    (with `failing_step`) before the error is re-raised.
    """
    cfg = dict(cfg)
    out = Path(out_dir or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    scheme = cfg.get("scheme", "dg")
    t0 = time.perf_counter()
    summary = {"config": {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in sorted(cfg.items())},
               "status": "completed"}
    try:
        if scheme == "dg":
            _run_dg(cfg, out, summary)
        elif scheme == "fem-lambda":
            _run_fem_lambda(cfg, out, summary)
        elif scheme == "fem-u":
            _run_fem_u(cfg, out, summary)
        elif scheme == "ode":
            _run_ode(cfg, out, summary)
        else:
            raise ConfigError(f"unknown scheme {scheme!r}")
    finally:
        summary["wall_time"] = time.perf_counter() - t0
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return summary


def _snapshot_steps(cfg):
    return tuple(int(k) for k in cfg.get("snapshots", ()))


def _run_dg(cfg, out: Path, summary: dict):
    params = build_params(cfg)
    mesh = build_uniform_mesh(int(cfg["n_el"]), float(cfg["a"]), float(cfg["b"]))
    u0, meta = build_u0(cfg)
    summary.update(meta)
    snaps = _snapshot_steps(cfg)
    try:
        series = run_simulation(u0, mesh, params, int(cfg["n_steps"]),
                                floor=float(cfg["floor"]))
    except NewtonDivergenceError as exc:
        series = exc.partial
        summary["status"] = "nonconverged"
        summary["failing_step"] = exc.step
        raise
    finally:
        if "series" in locals() and series is not None:
            _write_csv(out / "series.csv", SERIES_COLUMNS, _dg_series_rows(series))
            for e in series.entries:
                if e.k in snaps:
                    x, lam = e.lam.sample(10)
                    _write_solution(out / f"solution_k{e.k}.csv", x, np.exp(lam))
            dens_ok = all(
                np.all(np.isfinite(np.exp(e.lam.sample(10)[1])))
                and np.all(np.exp(e.lam.sample(10)[1]) > 0.0)
                for e in series.entries)
            summary["certificates"] = _certificates(series)
            summary["certificates"]["positive_densities"] = bool(dens_ok)
            summary["S0"] = float(series.initial_entropy)
            summary["entropy_slopes"] = _decay_slopes(
                series.times, series.entropies, cfg)
            summary["newton"] = {
                "max_iterations": int(max(series.metadata["newton_iterations"],
                                          default=0)),
                "continuation_steps": series.metadata.get("continuation_steps", 0),
            }


def _fem_lambda_report(values_seq, mesh, params, cfg):
    """series.csv rows for the continuous P1 scheme in the log density.

    Jumps vanish, so the diffusion form is the plain weighted H1 form and the
    entropy-step identity holds with B = int e^l |l'|^2.
    """
    quad = params.quad
    xi = quad.nodes
    shp = np.vstack([1.0 - xi, xi])
    conn = np.stack([np.arange(mesh.n_elements),
                     np.arange(1, mesh.n_elements + 1)], axis=1)
    omega = mesh.domain_measure
    rows = []
    prev = None
    S_prev = None
    S0 = None
    for k, lam in enumerate(values_seq):
        lq = lam[conn] @ shp
        E = np.exp(lq)
        grad = (lam[conn] @ np.array([-1.0, 1.0])) / mesh.h
        w_h = mesh.h[:, None] * quad.weights
        S = float(np.sum(w_h * (E * (lq - 1.0) + 1.0)))
        mass = float(np.sum(w_h * E))
        l1 = float(np.sum(w_h * np.abs(E - 1.0)))
        b_val = float(np.sum(w_h * E * grad[:, None] ** 2))
        half_sq = mass + float(np.sum(w_h * (0.5 * np.exp(0.5 * lq)
                                             * grad[:, None]) ** 2))
        if S0 is None:
            S0 = S
        if prev is None:
            slack = 0.0
            dg_ok = True
        else:
            react = float(np.sum(w_h * E * (E - 1.0) * lq)) \
                if params.reaction else 0.0
            slack = S_prev - S - params.dt * params.d * b_val \
                - params.dt * react
            rhs = diagnostics.dgnorm_bound_rhs(S0, params, omega)
            dg_ok = bool(params.dt * half_sq <= rhs + 1e-9)
        lo = diagnostics.sigma_minus(S0 / omega)
        hi = diagnostics.sigma_plus(S0 / omega)
        mean = mass / omega
        rows.append((k, k * params.dt, S, mass, l1, np.sqrt(half_sq), b_val,
                     slack, lo - 1e-10 <= mean <= hi + 1e-10, dg_ok))
        prev = lam
        S_prev = S
    return rows


def _run_fem_lambda(cfg, out: Path, summary: dict):
    params = build_params(cfg)
    mesh = build_uniform_mesh(int(cfg["n_el"]), float(cfg["a"]), float(cfg["b"]))
    u0, meta = build_u0(cfg)
    summary.update(meta)
    try:
        states = fem_p1_lambda(u0, mesh, params.d, params.dt,
                               int(cfg["n_steps"]), floor=float(cfg["floor"]),
                               quad=params.quad, newton=params.newton)
    except FemBlowupError as exc:
        summary["status"] = "nonconverged"
        summary["failing_step"] = exc.step
        raise
    rows = _fem_lambda_report([s.values for s in states], mesh, params, cfg)
    _write_csv(out / "series.csv", SERIES_COLUMNS, rows)
    snaps = _snapshot_steps(cfg)
    for k in snaps:
        if k < len(states):
            _write_solution(out / f"solution_k{k}.csv",
                            mesh.nodes, states[k].density())
    summary["S0"] = rows[0][2]
    summary["entropy_slopes"] = _decay_slopes(
        np.array([r[1] for r in rows]), np.array([r[2] for r in rows]), cfg)
    summary["min_density"] = float(min(s.density().min() for s in states))


def _run_fem_u(cfg, out: Path, summary: dict):
    params = build_params(cfg)
    mesh = build_uniform_mesh(int(cfg["n_el"]), float(cfg["a"]), float(cfg["b"]))
    cfg_nofloor = dict(cfg)
    cfg_nofloor["floor"] = 0.0
    u0, meta = build_u0(cfg_nofloor)
    summary.update(meta)
    blowup = None
    try:
        states = fem_p1_u(u0, mesh, params.d, params.dt, int(cfg["n_steps"]),
                          quad=params.quad, newton=params.newton)
    except FemBlowupError as exc:
        from .reference import FemFunction
        states = [FemFunction(mesh, v, "u") for v in exc.states]
        blowup = exc.step
    snaps = _snapshot_steps(cfg)
    for k in snaps:
        if k < len(states):
            _write_solution(out / f"solution_k{k}.csv",
                            mesh.nodes, states[k].values)
    mins = [float(s.values.min()) for s in states]
    summary["min_nodal_value"] = min(mins)
    summary["first_negative_step"] = next(
        (k for k, v in enumerate(mins) if v < 0.0), None)
    summary["blowup_step"] = blowup
    if blowup is not None:
        summary["status"] = "newton blow-up (expected for this scheme)"


def _run_ode(cfg, out: Path, summary: dict):
    _, meta = build_u0(cfg)  # validates the spec
    spec = cfg["u0"]
    c = float(spec.partition(":")[2] or 2.0)
    a, b = float(cfg["a"]), float(cfg["b"])
    profile = traveling_wave_reference(c=c, s_end=b - a, tol=1e-10,
                                       n_samples=4001)
    summary.update(meta)
    _write_csv(out / "profile.csv", ("s", "phi", "psi"),
               zip(profile.s, profile.phi, profile.psi))
    dt = float(cfg["dt"])
    x = np.linspace(a, b, 801)
    for k in _snapshot_steps(cfg):
        t = k * dt
        s = np.clip(x - a - c * t, 0.0, None)  # constant extension behind
        _write_solution(out / f"solution_k{k}.csv",
                        x, np.interp(s, profile.s, profile.psi))


# ---------------------------------------------------------------- certify

def _coercivity_battery(rng, c_inv_override=None):
    worst = np.inf
    q8 = gauss_legendre_rule(8)
    for p in (1, 2, 3):
        c_inv = c_inv_override or diagnostics.compute_c_inv(p)
        for n_el in (4, 16):
            mesh = build_uniform_mesh(n_el, 0.0, 1.0)
            params = SchemeParams(d=1.0, dt=0.5, p=p, c_inv=c_inv, quad=q8)
            for _ in range(200 // 6 + 1):
                from .dgspace import DgFunction, all_face_traces
                v = DgFunction(mesh, p, rng.uniform(-2.0, 2.0, (n_el, p + 1)))
                lhs = assemble_B(v, v, v, mesh, params)
                vals = v.eval_elements(q8.nodes)
                ders = v.deriv_elements(q8.nodes)
                rhs = 2.0 * np.sum(mesh.h[:, None] * q8.weights
                                   * (0.5 * np.exp(0.5 * vals) * ders) ** 2)
                vm, vp = all_face_traces(v)
                rhs += 2.0 * c_inv**2 * np.sum(
                    p**2 / mesh.face_h
                    * (np.exp(0.5 * vm) - np.exp(0.5 * vp)) ** 2)
                worst = min(worst, lhs - rhs)
    return worst


def certify(cfg=None, out_dir=None) -> tuple[list, bool]:
    """Run the inequality battery; returns (report, all_pass)."""
    cfg = dict(presets.DEFAULTS, **(cfg or {}))
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    report = []

    def record(name, worst, ok):
        report.append({"name": name, "worst_slack": float(worst),
                       "pass": bool(ok)})

    # inverse-trace oracle
    c1 = diagnostics.compute_c_inv(1)
    record("c_inv degree 1 equals sqrt(6)", c1**2 - 6.0,
           abs(c1**2 - 6.0) < 1e-10)
    record("c_inv scaling invariance",
           abs(diagnostics.compute_c_inv(1, 0.37) - c1),
           abs(diagnostics.compute_c_inv(1, 0.37) - c1) < 1e-12)
    mono = all(diagnostics.compute_c_inv(p + 1) ** 2 * (p + 1) ** 2
               >= diagnostics.compute_c_inv(p) ** 2 * p**2
               for p in range(1, 7))
    record("c_inv trace ratio grows with degree", 0.0, mono)

    # sigma round trips
    xs = np.linspace(0.0, 1.0, 101)
    err_m = max(abs(diagnostics.sigma_minus(diagnostics.entropy_density(x)) - x)
                for x in xs)
    xs = np.linspace(1.0, 10.0, 101)
    err_p = max(abs(diagnostics.sigma_plus(diagnostics.entropy_density(x)) - x)
                for x in xs)
    record("sigma_minus round trip", 1e-10 - err_m, err_m < 1e-10)
    record("sigma_plus round trip", 1e-10 - err_p, err_p < 1e-10)

    # coercivity of B over random broken polynomials
    c_override = float(cfg["c_inv"]) or None
    worst = _coercivity_battery(rng, c_override)
    record("coercivity of B", worst, worst >= -1e-10)

    # over-entropy family: per-step certificates, entropy to |Omega|
    dt = 0.5
    mesh = build_uniform_mesh(4, 0.0, 1.0)
    params = SchemeParams(d=1.0, dt=dt, p=1,
                          c_inv=diagnostics.compute_c_inv(1),
                          quad=gauss_legendre_rule(8))
    worst = np.inf
    S_last = -np.inf
    mono_ok = True
    for k in range(200):
        lam_k, S_k = diagnostics.remark_counterexample(k, dt, mesh)
        lam_next, _ = diagnostics.remark_counterexample(k + 1, dt, mesh)
        worst = min(worst, diagnostics.check_entropy_step(lam_k, lam_next, params))
        if S_k < S_last:
            mono_ok = False
        S_last = S_k
    _, S200 = diagnostics.remark_counterexample(200, dt, mesh)
    record("over-entropy family step certificates", worst, worst >= -1e-9)
    record("over-entropy family monotone to |O|",
           1e-6 - abs(S200 - mesh.domain_measure),
           mono_ok and abs(S200 - mesh.domain_measure) < 1e-6)

    # short production run: every per-step certificate
    run_cfg = dict(cfg, n_el=20, dt=1.0 / 6.0, p=1, n_steps=20,
                   u0="one-group:0.8", d=1e-4, scheme="dg", reaction=True)
    params = build_params(run_cfg)
    mesh = build_uniform_mesh(20, 0.0, 1.0)
    u0, _ = build_u0(run_cfg)
    series = run_simulation(u0, mesh, params, 20)
    S = series.entropies
    slacks = [r.entropy_step_slack for r in series.reports[1:]]
    record("run entropy monotonicity", float(-np.max(np.diff(S))),
           bool(np.all(np.diff(S) <= 1e-9)))
    record("run entropy step slack", min(slacks), min(slacks) >= -1e-9)
    record("run mass bounds", 0.0,
           all(r.mass_lower_ok and r.mass_upper_ok for r in series.reports))
    record("run DG-norm bound", 0.0,
           all(r.dgnorm_bound_ok for r in series.reports))

    all_pass = all(r["pass"] for r in report)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certify.json").write_text(
            json.dumps(report, indent=2) + "\n")
    return report, all_pass


# ---------------------------------------------------------------- main

def _run_preset(name: str, out_root: Path) -> int:
    runs = presets.expand_preset(name)
    workers = int(os.environ.get("ENTROPY_DG_THREADS", "0")) \
        or min(len(runs), os.cpu_count() or 1)
    status = EXIT_OK
    results = {}

    def one(cfg):
        return run_experiment(cfg, out_root / name / cfg["name"])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(one, cfg): cfg["name"] for cfg in runs}
        for fut, run_name in futures.items():
            try:
                results[run_name] = fut.result()
            except (NewtonDivergenceError, FemBlowupError) as exc:
                if presets.PRESETS[name][0]["kind"] == "fem-negativity":
                    results[run_name] = {"status": "blow-up (expected)"}
                else:
                    results[run_name] = {"status": f"nonconverged: {exc}"}
                    status = EXIT_SOLVER
    (out_root / name / "summary.json").write_text(json.dumps(
        {run_name: res.get("status", "completed")
         for run_name, res in sorted(results.items())},
        indent=2, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="entropy-dg",
        description="Positivity-preserving DG solver for the Fisher-KPP "
                    "equation in log density, with structure certificates.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_pre = sub.add_parser("preset", help="run a named preset batch")
    p_pre.add_argument("name")
    p_pre.add_argument("--out", required=True)
    p_cert = sub.add_parser("certify", help="run the inequality battery")
    p_cert.add_argument("--config", default=None)
    p_cert.add_argument("--out", default=".")
    sub.add_parser("list-presets", help="list preset names")
    args = parser.parse_args(argv)

    try:
        if args.command == "list-presets":
            for name in presets.preset_names():
                print(name)
            return EXIT_OK
        if args.command == "run":
            cfg = load_config(args.config)
            build_params(cfg)  # validate before any work
            run_experiment(cfg, args.out or cfg.get("out"))
            return EXIT_OK
        if args.command == "preset":
            return _run_preset(args.name, Path(args.out))
        if args.command == "certify":
            cfg = load_config(args.config) if args.config else None
            report, ok = certify(cfg, args.out)
            for item in report:
                print(f"[{'PASS' if item['pass'] else 'FAIL'}] "
                      f"{item['name']} (worst slack {item['worst_slack']:.3e})")
            return EXIT_OK if ok else EXIT_CERT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonDivergenceError, FemBlowupError) as exc:
        print(f"solver nonconvergence: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
