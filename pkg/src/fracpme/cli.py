"""Command-line front end: ``fracpme {solve,verify,elliptic,green,sweep,report}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, bundled_configs
from .elliptic import (EllipticConfig, elliptic_sandwich, fit_h_constants,
                       pointwise_identity_error, solve_elliptic)
from .errors import FracPMEError, InapplicableCheckError
from .green import (GreenEvaluator, bootstrap_upper, envelope_Bq, fit_envelopes,
                    green_eval, green_mass, green_q_integral, grid_pairs,
                    laplacian_green_1d, q_upper_limit)
from .runner import (Run, dumps, environment, report_ok, run_cell, run_id, sanitize,
                     sweep_cells, verify_report)
from .spectral import Field
from .verify import CheckReport, _Acc, merge_reports

log = logging.getLogger("fracpme")

WORKERS_ENV = "FRACPME_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise FracPMEError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


# -- output helpers ------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_json(path: Path, report):
    path.write_text(dumps(report))


def write_check_csv(path: Path, rows, dim: int):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "t", *[f"x{i}" for i in range(dim)], "lhs", "rhs", "margin"])
        for name, t, *rest in rows:
            xs, (lhs, rhs, margin) = list(rest[:-3]), rest[-3:]
            xs = (xs + [float("nan")] * dim)[:dim]
            w.writerow([name, _fmt(t), *map(_fmt, xs), _fmt(lhs), _fmt(rhs), _fmt(margin)])


def write_trajectory_csv(path: Path, traj):
    shape = traj.basis.domain.shape
    idx = np.indices(shape).reshape(len(shape), -1).T + 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *[f"x_index{i}" for i in range(len(shape))], "u"])
        for t, u in zip(traj.times, traj.snapshots):
            for ij, val in zip(idx, u.values):
                w.writerow([_fmt(t), *map(int, ij), _fmt(val)])


def _outdir(args, cfg):
    out = Path(args.out or cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _formats(cfg):
    return set(cfg["output"]["formats"])


def _print_checks(report, stream=None):
    stream = stream or sys.stdout
    for c in report["checks"]:
        flag = "PASS" if c["passed"] else ("XFAIL" if c.get("expected_fail") else "FAIL")
        print(f"{flag:5s} {c['name']:22s} margin={c['worst_margin']} [{c['constants']}]",
              file=stream)


# -- subcommands ----------------------------------------------------------------

def cmd_solve(cfg: RunConfig, args):
    run = Run(cfg, args.seed, args.tolerance_scale)
    traj = run.main
    out = _outdir(args, cfg)
    if "csv" in _formats(cfg):
        write_trajectory_csv(out / "trajectory.csv", traj)
    summary = {"run_id": run_id(cfg, run.seed), "params": run.params(),
               "diagnostics": {k: v.tolist() for k, v in traj.as_arrays().items()},
               "steps": traj.steps, "rejections": traj.rejections,
               "peak_clipped_mass": traj.peak_clipped_mass, "environment": environment()}
    write_json(out / "trajectory.json", summary)
    print(f"solved {traj.label}: {len(traj)} snapshots, {traj.steps} steps, "
          f"{traj.rejections} rejections -> {out}")
    return 0


def cmd_verify(cfg: RunConfig, args):
    report, rows, run = verify_report(cfg, args.seed, args.tolerance_scale)
    out = _outdir(args, cfg)
    write_json(out / "report.json", report)
    if "csv" in _formats(cfg):
        write_check_csv(out / "checks.csv", rows, run.domain.dimension)
    _print_checks(report)
    return 0 if report_ok(report) else 1


def cmd_elliptic(cfg: RunConfig, args):
    run = Run(cfg, args.seed, args.tolerance_scale)
    if run.m <= 1:
        raise FracPMEError("the elliptic problem needs physics.m > 1")
    e = cfg["elliptic"]
    lam = e["lam"] or 1.0 / (run.m - 1)
    res = run.elliptic(lam)
    Vf = res.V
    c0 = run.kernel_inputs["c0"]
    _, h1 = fit_h_constants(Vf, lam, run.m)
    reports = [elliptic_sandwich(Vf, lam, run.m, c0, h1, run.tol("elliptic_sandwich"))]
    # the pointwise identity V^m = lam int V G
    ident = pointwise_identity_error(Vf, lam, run.m, run.op)
    acc = _Acc()
    acc.add(ident, 0.0, scale=1.0)
    r = acc.report("elliptic_identity", "V^m = lam int V G pointwise", reports[0].params,
                   run.tol("elliptic_sandwich", 1e-6))
    reports.append(r)
    # two seeds converge to the same profile
    x = run.domain.nodes()
    bump = np.exp(-np.sum((x - 0.5) ** 2, axis=1) / 0.02) + 1e-3
    other = solve_elliptic(EllipticConfig(lam=lam, m=run.m, max_iterations=e["max_iterations"],
                                          tolerance=e["tolerance"]),
                           run.basis, run.op, seed=Field(run.basis, values=3.0 * bump))
    gap = float(np.max(np.abs(other.V.values - Vf.values)) / np.max(Vf.values))
    acc = _Acc()
    acc.add(gap, 0.0, scale=1.0)
    reports.append(acc.report("elliptic_two_seed", "same profile from two seeds",
                              reports[0].params, 1e-6))
    bs = bootstrap_upper(run.green, Vf, lam, run.m)
    acc = _Acc()
    acc.add(0.0, bs.hypothesis_margin, scale=1.0)
    rb = acc.report("bootstrap_upper", "u^m <= k0 int u G implies int u G <= c5^m k0^(1/(m-1)) Phi_1",
                    reports[0].params, 1e-6)
    rb.extra = {"c5": bs.c5, "conclusion_margin": bs.conclusion_margin,
                "nu_trace": bs.nu_trace[:20]}
    rb.passed = rb.passed and bs.conclusion_margin >= 0
    reports.append(rb)
    reports = merge_reports(reports)
    report = {"run_id": run_id(cfg, run.seed), "params": {**run.params(), "lam": lam},
              "checks": [r.to_json() for r in reports],
              "constants": {"inputs": {"c0": c0}, "values": {
                  "h0": {"value": c0 * lam, "tag": "formula", "inputs": {"c0": c0, "lam": lam}},
                  "h1": {"value": h1, "tag": "fitted", "inputs": {}},
                  "c5": {"value": bs.c5, "tag": "fitted", "inputs": {}}}},
              "environment": environment()}
    report["params"]["residual"] = res.residual
    report["params"]["iterations"] = res.iterations
    out = _outdir(args, cfg)
    write_json(out / "elliptic.json", report)
    if "csv" in _formats(cfg):
        with (out / "profile.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*[f"x{i}" for i in range(x.shape[1])], "V"])
            for p, v in zip(x, Vf.values):
                w.writerow([*map(_fmt, p), _fmt(v)])
    _print_checks(report)
    return 0 if report_ok(report) else 1


def cmd_green(cfg: RunConfig, args):
    run = Run(cfg, args.seed, args.tolerance_scale)
    g = GreenEvaluator(run.op)
    dom = run.domain
    N = dom.dimension
    rng = np.random.default_rng(run.seed)
    n_pairs = cfg["green"]["pairs"]
    lo = np.array([0.0] * N)
    hi = np.asarray(dom.side_lengths)
    h = min(dom.spacing)
    xs, ys = [], []
    while len(xs) < n_pairs:
        x = lo + rng.random(N) * hi
        y = lo + rng.random(N) * hi
        if np.linalg.norm(x - y) >= 2 * h:
            xs.append(x)
            ys.append(y)
    xs, ys = np.array(xs), np.array(ys)
    G = g.pairs(xs, ys)
    Gt = g.pairs(ys, xs)
    reports = []
    params = {"N": N, "s": run.s, "modes": run.basis.M, "seed": run.seed}
    acc = _Acc()
    acc.add(np.abs(G - Gt), 0.0, scale=np.maximum(np.abs(G), 1e-300))
    reports.append(acc.report("green_symmetry", "G(x, y) = G(y, x)", params, 1e-12))
    exact = None
    if N == 1 and run.s == 1.0:
        exact = laplacian_green_1d(xs[:, 0], ys[:, 0], dom.side_lengths[0])
        acc = _Acc()
        acc.add(np.abs(G - exact), run.tol("green_oracle", 1e-3), 0.0, xs, scale=1.0)
        r = acc.report("green_oracle", "truncated sum vs min(x,y)(L-max(x,y))/L", params, 0.0)
        r.extra = {"max_error": float(np.max(np.abs(G - exact)))}
        reports.append(r)
    env = fit_envelopes(g, grid_pairs(dom, cfg["green"]["stride"], True))
    acc = _Acc()
    acc.add(0.0, env.c0, scale=1.0)
    acc.add(0.0, env.c1, scale=1.0)
    r = acc.report("green_envelopes", "c0 Phi_1 Phi_1 <= G <= c1 Type I/II envelope", params, 0.0)
    r.extra = {"c0": env.c0, "c1": env.c1, "fitted_on": env.fitted_on}
    reports.append(r)
    # lower pairing bound c0 Phi_1(x0) |f|_{L1,Phi1} <= int f G(., x0)
    x = dom.nodes()
    f = Field(run.basis, values=np.exp(-np.sum((x - 0.3) ** 2, axis=1) / 0.01))
    pair = g.apply(f)
    phi = run.basis.phi1_grid
    wm = run.basis.integrate(f.values * phi)
    acc = _Acc()
    layer = dom.boundary_layer_mask(2)
    acc.add(-pair, -env.c0 * phi * wm, 0.0, x, layer, scale=env.c0 * phi * wm)
    reports.append(acc.report("green_lower_pairing", "c0 Phi_1 |f|_{L1,Phi1} <= int f G",
                              params, run.tol("green_lower_pairing", 1e-3)))
    # q-integrals and the B_q envelope
    acc = _Acc()
    stride = max(1, x.shape[0] // 8)
    rows = []
    for q in cfg["green"]["q"]:
        if q >= q_upper_limit(run.s, N):
            continue
        for p in x[::stride]:
            val = green_q_integral(g, p, q)
            ph = float(run.basis.eval_mode(0, p[None, :])[0])
            rows.append({"q": q, "x0": p.tolist(), "integral": val,
                         "Bq": envelope_Bq(ph, q, run.s, N)})
            acc.add(0.0 if np.isfinite(val) else np.inf, 1.0, scale=1.0)
    r = acc.report("green_q_integral", "int G(., x0)^q finite", params, 0.0)
    r.extra = {"samples": rows, "mass_sup": float(np.max(green_mass(g, x[::stride])))}
    reports.append(r)
    if run.m > 1:
        lam = 1.0 / (run.m - 1)
        bs = bootstrap_upper(g, run.giant_profile, lam, run.m)
        acc = _Acc()
        acc.add(0.0, bs.hypothesis_margin, scale=1.0)
        rb = acc.report("bootstrap_upper", "integral Green estimate from the pointwise hypothesis",
                        {**params, "m": run.m}, 1e-6)
        rb.extra = {"c5": bs.c5, "conclusion_margin": bs.conclusion_margin,
                    "nu_trace": bs.nu_trace[:20]}
        reports.append(rb)
    reports = merge_reports(reports)
    report = {"run_id": run_id(cfg, run.seed), "params": params,
              "checks": [r.to_json() for r in reports],
              "constants": {"inputs": {}, "values": {
                  "c0": {"value": env.c0, "tag": "fitted", "inputs": {}},
                  "c1": {"value": env.c1, "tag": "fitted", "inputs": {}}}},
              "environment": environment()}
    out = _outdir(args, cfg)
    write_json(out / "green.json", report)
    if "csv" in _formats(cfg):
        with (out / "green_samples.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*[f"x{i}" for i in range(N)], *[f"y{i}" for i in range(N)], "G",
                        *(["exact"] if exact is not None else [])])
            for i in range(n_pairs):
                extra = [_fmt(exact[i])] if exact is not None else []
                w.writerow([*map(_fmt, xs[i]), *map(_fmt, ys[i]), _fmt(G[i]), *extra])
    _print_checks(report)
    return 0 if report_ok(report) else 1


def cmd_sweep(cfg: RunConfig, args):
    cells = sweep_cells(cfg)
    seed = cfg["seed"] if args.seed is None else args.seed
    jobs = [(cfg.tree, m, s, d, seed, args.tolerance_scale) for m, s, d in cells]
    workers = args.workers or default_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(run_cell, jobs))
    else:
        results = [run_cell(j) for j in jobs]
    checks, constants, rows = [], {}, []
    for res in results:
        key = f"m={res['params']['m']},s={res['params']['s']},datum={res['params']['datum']}"
        if res["error"] is not None:
            checks.append(CheckReport(
                name="cell_failure", anchor="solver or setup failure", params=res["params"],
                samples=0, worst_margin=-1.0, passed=False, tolerance=0.0,
                notes=[res["error"]]).to_json())
            continue
        checks += res["report"]["checks"]
        constants[key] = res["report"]["constants"]
        rows += res["rows"]
    checks.sort(key=lambda c: (c["name"], json.dumps(sanitize(c["params"]), sort_keys=True),
                               c["constants"]))
    report = {"run_id": run_id(cfg, seed), "params": {"sweep": cfg.tree["sweep"],
                                                      "cells": len(cells)},
              "checks": checks, "constants": constants, "environment": environment()}
    out = _outdir(args, cfg)
    write_json(out / "sweep.json", report)
    if "csv" in _formats(cfg):
        write_check_csv(out / "checks.csv", rows, cfg["domain"]["dimension"])
    failed = [r for r in results if r["error"]]
    for r in failed:
        print(f"cell {r['params']} failed: {r['error']}", file=sys.stderr)
    print(f"{len(cells)} cells, {len(failed)} failed, {len(checks)} check reports -> {out}")
    return 0 if report_ok(report) else 1


def cmd_report(args):
    """Summarize every JSON report in ``--out`` (or the given paths)."""
    paths = [Path(p) for p in args.paths]
    if not paths:
        root = Path(args.out or ".")
        paths = sorted(p for p in root.glob("*.json") if p.name != "summary.json")
    if not paths:
        raise FracPMEError("no reports found")
    summary = {"reports": [], "passed": True}
    for p in paths:
        rep = json.loads(p.read_text())
        if not isinstance(rep, dict) or not isinstance(rep.get("checks"), list):
            continue
        ok = report_ok(rep)
        summary["passed"] = summary["passed"] and ok
        summary["reports"].append({
            "file": p.name, "run_id": rep.get("run_id"), "passed": ok,
            "failed": sorted({c["name"] for c in rep["checks"]
                              if not c["passed"] and not c.get("expected_fail")})})
        print(f"{'PASS' if ok else 'FAIL'} {p.name} ({len(rep['checks'])} checks)")
        if not ok:
            _print_checks(rep)
    if not summary["reports"]:
        raise FracPMEError("no reports found")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "summary.json", summary)
    return 0 if summary["passed"] else 1


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "elliptic": cmd_elliptic,
            "green": cmd_green, "sweep": cmd_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="fracpme", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="config file or bundled config name "
                        f"({', '.join(bundled_configs())})")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, default=None,
                        help=f"sweep worker processes (default ${WORKERS_ENV} or 1)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--tolerance-scale", type=float, default=1.0)
        if name == "report":
            sp.add_argument("paths", nargs="*")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.tolerance_scale <= 0:
            raise FracPMEError("--tolerance-scale must be positive")
        if args.workers is not None and args.workers < 1:
            raise FracPMEError("--workers must be >= 1")
        if args.command == "report":
            return cmd_report(args)
        if not args.config:
            raise FracPMEError("--config is required")
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except (FracPMEError, InapplicableCheckError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
