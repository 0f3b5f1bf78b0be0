"""Run orchestration shared by the command-line front end: building runs from a
:class:`RunConfig`, fitting constants, running checks, assembling reports."""
from __future__ import annotations

import hashlib
import json
import math
import platform
from functools import cached_property

import numpy as np
import scipy

from . import __version__
from .config import DATA, RunConfig, datum_label
from .constants import (ConstantSet, evaluate_formulas, fit_empirical, fit_k7, fitted_set)
from .elliptic import (EllipticConfig, elliptic_sandwich, fit_h_constants,
                       pointwise_identity_error, solve_elliptic)
from .errors import (ConfigError, FracPMEError, InapplicableCheckError)
from .green import (GreenEvaluator, bootstrap_upper, fit_envelopes, grid_pairs, measure_c2)
from .solver import SolverConfig, Trajectory, exact_linear, solve
from .spectral import DomainSpec, EigenBasis, Field, FractionalOperator
from . import verify as V

NEEDS_FORMULA = {"absolute_bound"}
NONLINEAR = {"absolute_bound", "boundary_upper", "smoothing_weighted", "smoothing_l1",
             "backward_smoothing", "weighted_l1", "lower_bound", "harnack",
             "ordered_contraction", "green_pairing", "benilan_crandall", "elliptic_sandwich"}
DEFAULT_TOL = {"benilan_crandall": 1e-6, "balance_law": 1e-4, "linear_limit": 1e-3}


def run_id(cfg: RunConfig, seed: int) -> str:
    h = hashlib.sha256(f"{cfg.canonical()}|{seed}".encode()).hexdigest()
    return h[:16]


def environment():
    return {"fracpme": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def sanitize(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(report) -> str:
    return json.dumps(sanitize(report), sort_keys=True, indent=1, allow_nan=False) + "\n"


class Run:
    """Lazily built pieces of one ``(m, s)`` cell of a configuration."""

    def __init__(self, cfg: RunConfig, seed: int | None = None, tolerance_scale: float = 1.0):
        self.cfg = cfg
        self.seed = cfg["seed"] if seed is None else seed
        self.tolerance_scale = tolerance_scale
        phys = cfg["physics"]
        self.m, self.s = phys["m"], phys["s"]
        self._runs = {}

    # -- geometry -----------------------------------------------------------
    @cached_property
    def domain(self):
        d = self.cfg["domain"]
        try:
            return DomainSpec(d["dimension"], tuple(d["sides"]), d["grid"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"domain: {exc}") from None

    @cached_property
    def basis(self):
        M = self.cfg["physics"]["modes"]
        if M is None:
            M = int(np.prod(self.domain.shape))
        try:
            return EigenBasis(self.domain, M)
        except ValueError as exc:
            raise ConfigError(f"physics.modes: {exc}") from None

    @cached_property
    def op(self):
        return FractionalOperator(self.s, self.basis)

    def tol(self, name, default=V.POINTWISE_TOL):
        base = self.cfg["checks"]["tolerances"].get(name, DEFAULT_TOL.get(name, default))
        return float(base) * self.tolerance_scale

    # -- elliptic / giant ----------------------------------------------------
    def elliptic(self, lam=None):
        if self.m <= 1:
            raise InapplicableCheckError("the elliptic problem needs m > 1")
        e = self.cfg["elliptic"]
        lam = (e["lam"] if lam is None else lam) or 1.0 / (self.m - 1)
        key = ("elliptic", lam)
        if key not in self._runs:
            ec = EllipticConfig(lam=lam, m=self.m, max_iterations=e["max_iterations"],
                                tolerance=e["tolerance"])
            self._runs[key] = solve_elliptic(ec, self.basis, self.op)
        return self._runs[key]

    @cached_property
    def giant_profile(self):
        return self.elliptic(1.0 / (self.m - 1)).V

    # -- data and trajectories -------------------------------------------------
    def datum(self, d) -> Field:
        name, params = d["name"], d.get("params", {})
        scale = float(d.get("scale", 1.0))
        if name == "giant":
            t0 = float(params.get("t0", 1.0))
            return self.giant_profile * (scale * t0 ** (-1.0 / (self.m - 1)))
        if name == "modes":
            c = np.zeros(self.basis.M)
            for k, v in params.get("coeffs", {"1": 1.0}).items():
                k = int(k)
                if not 1 <= k <= self.basis.M:
                    raise ConfigError(f"datum.params.coeffs: mode {k} out of range")
                c[k - 1] = float(v)
            return Field(self.basis, coeffs=scale * c)
        vals = DATA[name](self.domain.nodes(), self.domain.side_lengths, self.m, **params)
        return Field(self.basis, values=scale * vals)

    def solver_config(self):
        t = self.cfg["time"]
        if t["method"] == "exact":
            raise ConfigError("time.method: 'exact' has no stepping configuration")
        return SolverConfig(m=self.m, s=self.s, dt0=t["dt0"], max_dt=t["max_dt"],
                            growth=t["growth"], min_dt=t["min_dt"], method=t["method"])

    def trajectory(self, d) -> Trajectory:
        label = datum_label(d)
        if label not in self._runs:
            t0 = self.cfg["time"]["t0"]
            if self.cfg["time"]["method"] == "exact":
                if self.m != 1:
                    raise ConfigError("time.method: 'exact' needs physics.m = 1")
                u0 = self.datum(d)
                tr = exact_linear(u0, self.s, [t0, *self.cfg.output_times()])
                tr.label = label
                self._runs[label] = tr
                return tr
            self._runs[label] = solve(self.datum(d), self.cfg.output_times(),
                                      self.solver_config(), t0=t0, label=label)
        return self._runs[label]

    @property
    def main(self) -> Trajectory:
        return self.trajectory(self.cfg["datum"])

    @cached_property
    def training(self):
        return [self.trajectory(d) for d in self.cfg["checks"]["training"]]

    @property
    def fit_ensemble(self):
        return self.training or [self.main]

    # -- constants ---------------------------------------------------------------
    @cached_property
    def green(self):
        return GreenEvaluator(self.op)

    @cached_property
    def kernel_inputs(self):
        g = self.green
        env = fit_envelopes(g, grid_pairs(self.domain, self.cfg["green"]["stride"], True))
        out = {"N": self.domain.dimension, "m": self.m, "s": self.s,
               "mu1": float(self.op.mu[0]), "phi1_sup": float(self.basis.phi1_grid.max()),
               "diam": self.domain.diameter, "c0": env.c0, "c1": env.c1,
               "c2": measure_c2(g, 1.0, self.cfg["green"]["stride"])}
        if self.m > 1:
            lam = 1.0 / (self.m - 1)
            out["c5"] = bootstrap_upper(g, self.giant_profile, lam, self.m).c5
        return out

    @cached_property
    def formula(self) -> ConstantSet:
        return evaluate_formulas(self.kernel_inputs)

    @cached_property
    def fitted(self) -> ConstantSet:
        ens = self.fit_ensemble
        fits = {k: fit_empirical(ens, k) for k in ("K1", "K2", "K2bar", "K3", "K4", "K5")}
        times = self.cfg.output_times()
        t_late = times[len(times) // 2] if times else 0.0
        L1 = fit_empirical(ens, "L1", t_min=t_late, interior_cells=V.BOUNDARY_CELLS)
        fits.update(L1=L1, H0=L1, H1=fits["K2"])
        prov = ",".join(t.label for t in ens)
        return fitted_set(self._fit_inputs(), fits, prov)

    def _fit_inputs(self):
        return {"N": self.domain.dimension, "m": self.m, "s": self.s,
                "mu1": float(self.op.mu[0])}

    def constants_json(self):
        out = {"inputs": {}, "values": {}}
        if self.m > 1 and self._uses_constants:
            f = self.formula.to_json()
            out["inputs"] = f["inputs"]
            out["values"].update({f"{k}": v for k, v in f["values"].items()})
            for k, v in self.fitted.to_json()["values"].items():
                out["values"][f"{k}_fitted"] = v
        return out

    _uses_constants = False

    # -- checks ------------------------------------------------------------------
    def check_names(self):
        names = list(self.cfg["checks"]["names"])
        if not names:
            names = ["balance_law"]
            if self.m > 1:
                names += ["absolute_bound", "boundary_upper", "smoothing_weighted",
                          "smoothing_l1", "backward_smoothing", "weighted_l1", "lower_bound",
                          "harnack", "ordered_contraction", "green_pairing",
                          "benilan_crandall", "elliptic_sandwich"]
            else:
                names += ["linear_limit"]
        return names

    def run_check(self, name):
        if self.m <= 1 and name in NONLINEAR:
            raise InapplicableCheckError(f"{name} needs m > 1")
        tr = self.main
        tol = self.tol(name)
        ck = self.cfg["checks"]
        if name in ("balance_law", "benilan_crandall", "green_pairing", "linear_limit"):
            if name == "balance_law":
                return [V.check_balance_law(tr, tol)]
            if name == "benilan_crandall":
                return [V.check_benilan_crandall(tr, tol)]
            if name == "green_pairing":
                return [V.check_green_pairing(tr, ck["samples"], self.seed, tol)]
            return [V.check_linear_limit(tr, tol=tol)]
        self._uses_constants = True
        fs, form = self.fitted, self.formula
        if name == "absolute_bound":
            return [V.check_absolute_bound(tr, form, tol)]
        if name == "boundary_upper":
            return [V.check_boundary_upper(tr, fs, tol)]
        if name in ("smoothing_weighted", "smoothing_l1"):
            w = name == "smoothing_weighted"
            win = tuple(ck["slope_window"])
            return [V.check_smoothing(tr, form, w, tol, win), V.check_smoothing(tr, fs, w, tol)]
        if name == "backward_smoothing":
            return [V.check_backward_smoothing(tr, fs, tol)]
        if name == "weighted_l1":
            return [V.check_weighted_l1(tr, fs, tol, self.tol("balance_law"))]
        if name == "lower_bound":
            return [V.check_lower_bound(tr, fs, tr.weighted_mass[0], fs["L1"], tol, form)]
        if name == "harnack":
            t_emp = V.empirical_waiting_time(tr, fs["L1"])
            if t_emp is None:
                rep = V.check_lower_bound(tr, fs, tr.weighted_mass[0], fs["L1"], tol)
                rep.name = "harnack"
                rep.notes.append("no waiting time found; the global bound never holds")
                return [rep]
            return [V.check_harnack(tr, fs, tuple(ck["radii"]), t_emp, tol)]
        if name == "ordered_contraction":
            half = dict(self.cfg["datum"])
            half["scale"] = 0.5 * float(half.get("scale", 1.0))
            tv = self.trajectory(half)
            times = tr.times
            n_fit = max(2, int(len(times) * (1 - ck["holdout_fraction"])))
            split = times[min(n_fit, len(times) - 1)]
            # K4 from the training times of both runs, K7 through its factory
            k4 = fit_empirical([tr, tv], "K4", t_max=times[n_fit - 1])
            fs7 = fitted_set(self._fit_inputs(), {"K4": k4}, f"{tr.label},{tv.label}")
            r_fit = V.check_ordered_contraction(tr, tv, fs7, split=split, tol=tol)
            k7 = fit_k7(tr, tv, range(n_fit))
            direct = V.check_ordered_contraction(tr, tv, fs, k7_fitted=k7, split=split, tol=tol)
            r_fit.extra.update(K4_training=k4, split=split, direct_k7=k7,
                               direct_k7_margin=direct.extra["modulus_margin"])
            r_form = V.check_ordered_contraction(tr, tv, form, tol=tol)
            return [r_fit, r_form]
        if name == "elliptic_sandwich":
            res = self.elliptic()
            lam = res_lam = (self.cfg["elliptic"]["lam"] or 1.0 / (self.m - 1))
            _, h1 = fit_h_constants(res.V, res_lam, self.m)
            rep = elliptic_sandwich(res.V, lam, self.m, self.kernel_inputs["c0"], h1, tol)
            rep.extra["residual"] = res.residual
            rep.extra["identity_error"] = pointwise_identity_error(res.V, lam, self.m, self.op)
            return [rep]
        raise ConfigError(f"unknown check {name!r}")

    def verify(self):
        reports = []
        for name in self.check_names():
            try:
                reports += self.run_check(name)
            except InapplicableCheckError as exc:
                reports.append(inapplicable(name, str(exc), self.params()))
        return V.merge_reports(reports)

    def params(self):
        return {"N": self.domain.dimension, "m": self.m, "s": self.s,
                "datum": datum_label(self.cfg["datum"]), "grid": self.cfg["domain"]["grid"],
                "modes": self.basis.M, "seed": self.seed,
                "tolerance_scale": self.tolerance_scale}


def inapplicable(name, reason, params):
    return V.CheckReport(name=name, anchor="inapplicable", params=params, samples=0,
                         worst_margin=0.0, passed=True, tolerance=0.0,
                         notes=[f"inapplicable: {reason}"], extra={"inapplicable": True})


def verify_report(cfg: RunConfig, seed=None, tolerance_scale=1.0):
    """Full verify report as a dict plus the per-check CSV rows."""
    run = Run(cfg, seed, tolerance_scale)
    reports = run.verify()
    report = {
        "run_id": run_id(cfg, run.seed),
        "params": run.params(),
        "checks": [r.to_json() for r in reports],
        "constants": run.constants_json(),
        "environment": environment(),
    }
    rows = [(r.name, *row) for r in reports for row in r.rows]
    return report, rows, run


def report_ok(report) -> bool:
    return all(c["passed"] or c.get("expected_fail") for c in report["checks"])


def sweep_cells(cfg: RunConfig):
    sw = cfg.tree.get("sweep")
    if not sw:
        raise ConfigError("sweep: the configuration has no parameter grid")
    ms = sw.get("m", [cfg["physics"]["m"]])
    ss = sw.get("s", [cfg["physics"]["s"]])
    ds = sw.get("datum", [cfg["datum"]])
    cells = [(float(m), float(s), d) for m in ms for s in ss for d in ds]
    if not cells:
        raise ConfigError("sweep: empty parameter grid")
    return cells


def run_cell(args):
    tree, m, s, d, seed, tol_scale = args
    cfg = RunConfig(tree).with_overrides(m=m, s=s, datum=d)
    params = {"m": m, "s": s, "datum": datum_label(d)}
    try:
        report, rows, run = verify_report(cfg, seed, tol_scale)
        return {"params": params, "report": report, "rows": rows, "error": None,
                "trajectory": run.main.as_arrays()}
    except FracPMEError as exc:
        return {"params": params, "report": None, "rows": [], "error": f"{type(exc).__name__}: {exc}",
                "trajectory": None}
