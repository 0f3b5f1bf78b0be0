"""Sampled numerical checks of the a priori estimates.

Every check returns a :class:`CheckReport`.  Margins are ``(rhs - lhs)``
normalized by ``|rhs|``; a check passes when its worst margin is at least
``-tolerance``.  Nodes within two grid spacings of the boundary are scored
separately (``boundary_margin``) and do not decide the verdict.  A report
uses either formula constants or fitted constants, never both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .constants import ConstantSet, theta
from .errors import InapplicableCheckError
from .solver import Trajectory
from .spectral import FractionalOperator

POINTWISE_TOL = 1e-3
SPECTRAL_TOL = 1e-6
BOUNDARY_CELLS = 2


@dataclass
class CheckReport:
    name: str
    anchor: str
    params: dict
    samples: int
    worst_margin: float
    passed: bool
    tolerance: float
    constants: str = "none"
    boundary_margin: float | None = None
    expected_fail: bool = False
    notes: list = dc_field(default_factory=list)
    extra: dict = dc_field(default_factory=dict)
    rows: list = dc_field(default_factory=list, repr=False)

    def to_json(self):
        return {
            "name": self.name, "anchor": self.anchor, "params": self.params,
            "samples": self.samples, "worst_margin": self.worst_margin,
            "passed": self.passed, "tolerance": self.tolerance,
            "constants": self.constants, "boundary_margin": self.boundary_margin,
            "expected_fail": self.expected_fail, "notes": list(self.notes),
            "extra": self.extra,
        }


class _Acc:
    """Accumulates normalized margins and CSV rows for one check."""

    def __init__(self):
        self.worst = math.inf
        self.worst_bd = math.inf
        self.n = 0
        self.rows = []

    def add(self, lhs, rhs, t=math.nan, x=None, boundary=None, scale=None):
        lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        lhs, rhs = np.broadcast_arrays(lhs, rhs)
        if scale is None:
            scale = np.abs(rhs)
        scale = np.broadcast_to(np.asarray(scale, dtype=float), rhs.shape)
        scale = np.where(scale > 0, scale, 1.0)
        marg = (rhs - lhs) / scale
        bd = np.zeros(marg.shape, dtype=bool) if boundary is None else np.broadcast_to(boundary, marg.shape)
        if np.any(~bd):
            self.worst = min(self.worst, float(np.min(marg[~bd])))
        if np.any(bd):
            self.worst_bd = min(self.worst_bd, float(np.min(marg[bd])))
        self.n += int(marg.size)
        xs = np.full((marg.size, 1), math.nan) if x is None else \
            np.asarray(x, dtype=float).reshape(marg.size, -1)
        ts = np.broadcast_to(np.asarray(t, dtype=float), marg.shape).ravel()
        for i in range(marg.size):
            self.rows.append((float(ts[i]), *map(float, xs[i]), float(lhs.flat[i]),
                              float(rhs.flat[i]), float(marg.flat[i])))

    def report(self, name, anchor, params, tol, constants="none", notes=(), extra=None,
               expected_fail=False):
        worst = self.worst if self.n else 0.0
        if worst == math.inf:
            worst = 0.0
        bd = None if self.worst_bd == math.inf else self.worst_bd
        return CheckReport(name=name, anchor=anchor, params=params, samples=self.n,
                           worst_margin=float(worst), passed=bool(worst >= -tol),
                           tolerance=tol, constants=constants, boundary_margin=bd,
                           expected_fail=expected_fail, notes=list(notes),
                           extra=extra or {}, rows=self.rows)


def _params(traj: Trajectory, datum=None):
    N = traj.basis.domain.dimension
    return {"N": N, "m": traj.m, "s": traj.s, "datum": datum or traj.label}


def _need_nonlinear(traj):
    if traj.m <= 1:
        raise InapplicableCheckError("this estimate needs m > 1")


def _positive_times(traj):
    return [(i, t) for i, t in enumerate(traj.times) if t > 0]


def _layer(traj):
    return traj.basis.domain.boundary_layer_mask(BOUNDARY_CELLS)


def _nodes(traj):
    return traj.basis.domain.nodes()


def _const_tag(constants: ConstantSet, names):
    tags = {constants.tag(n) for n in names}
    if len(tags) != 1:
        raise ValueError(f"constants {names} mix formula and fitted values")
    return tags.pop()


# -- individual checks ---------------------------------------------------------

def check_absolute_bound(traj: Trajectory, constants: ConstantSet, tol=POINTWISE_TOL):
    _need_nonlinear(traj)
    a = 1 / (traj.m - 1)
    K1 = constants["K1"]
    acc = _Acc()
    ratio = 0.0
    for i, t in _positive_times(traj):
        acc.add(traj.sup[i], K1 * t ** -a, t)
        ratio = max(ratio, t ** a * traj.sup[i])
    return acc.report("absolute_bound", "sup norm <= K1 t^(-1/(m-1))", _params(traj), tol,
                      _const_tag(constants, ["K1"]), extra={"fitted_ratio": ratio})


def check_boundary_upper(traj: Trajectory, constants: ConstantSet, tol=POINTWISE_TOL):
    _need_nonlinear(traj)
    m, a = traj.m, 1 / (traj.m - 1)
    b = traj.basis
    phi = b.phi1_grid
    op = FractionalOperator(traj.s, b)
    layer = _layer(traj)
    X = _nodes(traj)
    K2, K2bar = constants["K2"], constants["K2bar"]
    acc = _Acc()
    acc_pair = _Acc()
    for i, t in _positive_times(traj):
        u = traj.snapshots[i]
        acc.add(u.values, K2 * phi ** (1 / m) * t ** -a, t, X, layer)
        pair = b.inverse(u.coeffs / op.mu)
        acc_pair.add(pair, K2bar * phi * t ** -a, t, X, layer)
    rep = acc.report("boundary_upper", "u <= K2 Phi_1^(1/m) t^(-1/(m-1))", _params(traj),
                     tol, _const_tag(constants, ["K2", "K2bar"]))
    rep.extra["pairing_worst_margin"] = acc_pair.worst if acc_pair.n else 0.0
    rep.extra["pairing_boundary_margin"] = None if acc_pair.worst_bd == math.inf \
        else acc_pair.worst_bd
    rep.passed = rep.passed and rep.extra["pairing_worst_margin"] >= -tol
    rep.worst_margin = min(rep.worst_margin, rep.extra["pairing_worst_margin"])
    return rep


def smoothing_slope(traj: Trajectory, t_lo: float, t_hi: float) -> float:
    """Least-squares slope of ``log sup u`` against ``log t`` on ``[t_lo, t_hi]``."""
    pts = [(math.log(t), math.log(traj.sup[i])) for i, t in _positive_times(traj)
           if t_lo <= t <= t_hi and traj.sup[i] > 0]
    if len(pts) < 2:
        raise InapplicableCheckError("need two positive samples in the slope window")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def check_smoothing(traj: Trajectory, constants: ConstantSet, weighted: bool = True,
                    tol=POINTWISE_TOL, slope_window=None):
    _need_nonlinear(traj)
    m, s = traj.m, traj.s
    N = traj.basis.domain.dimension
    if weighted:
        th = theta(s, m, N, 1.0)
        expo, K, norms, key = (N + 1) * th, constants["K4"], traj.weighted_mass, "K4"
    else:
        th = theta(s, m, N, 0.0)
        expo, K, norms, key = N * th, constants["K3"], traj.l1, "K3"
    acc = _Acc()
    acc_datum = _Acc()
    n0 = norms[0]
    for i, t in _positive_times(traj):
        acc.add(traj.sup[i], K * t ** -expo * max(norms[i], 0.0) ** (2 * s * th), t)
        acc_datum.add(traj.sup[i], K * t ** -expo * max(n0, 0.0) ** (2 * s * th), t)
    name = "smoothing_weighted" if weighted else "smoothing_l1"
    rep = acc.report(name, f"sup norm <= {key} t^-a |u(t)|^(2s theta)", _params(traj), tol,
                     _const_tag(constants, [key]))
    rep.extra["datum_variant_margin"] = acc_datum.worst if acc_datum.n else 0.0
    rep.extra["exponent"] = -expo
    if slope_window is not None:
        try:
            rep.extra["slope"] = smoothing_slope(traj, *slope_window)
        except InapplicableCheckError as exc:
            rep.notes.append(str(exc))
    rep.passed = rep.passed and rep.extra["datum_variant_margin"] >= -tol
    return rep


def check_backward_smoothing(traj: Trajectory, constants: ConstantSet, tol=POINTWISE_TOL,
                             max_pairs: int | None = None):
    _need_nonlinear(traj)
    m, s = traj.m, traj.s
    N = traj.basis.domain.dimension
    th = theta(s, m, N, 1.0)
    K4 = constants["K4"]
    b = 2 * s * th / (m - 1)
    acc, printed = _Acc(), _Acc()
    pos = _positive_times(traj)
    count = 0
    for j, (i, t) in enumerate(pos):
        for k, th_ in pos[j:]:
            h = th_ - t
            base = K4 * t ** (-(N + 1) * th) * max(traj.weighted_mass[k], 0.0) ** (2 * s * th)
            # (1 + h/t) is what monotonicity of t^(1/(m-1)) u yields; (1 v h/t) can be
            # smaller by up to 2^b
            acc.add(traj.sup[i], base * (1.0 + h / t) ** b, t, [h])
            printed.add(traj.sup[i], base * max(1.0, h / t) ** b, t, [h])
            count += 1
            if max_pairs and count >= max_pairs:
                break
    rep = acc.report("backward_smoothing",
                     "sup u(t) <= K4 t^-a (1 + h/t)^b |u(t+h)|_weighted^c", _params(traj),
                     tol, _const_tag(constants, ["K4"]))
    rep.extra["max_factor_margin"] = printed.worst if printed.n else 0.0
    return rep


def check_balance_law(traj: Trajectory, rel_tol=1e-4):
    """``|M(t) - M(t0) + mu_1 int int u^m Phi_1| <= rel_tol * M(t0) * (t - t0)``."""
    M = np.asarray(traj.weighted_mass)
    D = np.asarray(traj.dissipation)
    t = np.asarray(traj.times)
    acc = _Acc()
    M0 = abs(M[0]) if M[0] != 0 else 1.0
    worst = 0.0
    for i in range(1, len(t)):
        res = abs(M[i] - M[0] + D[i])
        allowed = rel_tol * M0 * (t[i] - t[0])
        worst = max(worst, res / (M0 * (t[i] - t[0])))
        acc.add(res, allowed, t[i], scale=M0 * (t[i] - t[0]) * rel_tol)
    rep = acc.report("balance_law", "weighted mass change + mu_1 time integral of int u^m Phi_1 = 0",
                     _params(traj), 0.0)
    rep.extra["max_residual_per_unit_time"] = worst
    rep.passed = worst <= rel_tol
    return rep


def check_weighted_l1(traj: Trajectory, constants: ConstantSet, tol=POINTWISE_TOL,
                      balance_tol=1e-4):
    _need_nonlinear(traj)
    m, s = traj.m, traj.s
    N = traj.basis.domain.dimension
    th = theta(s, m, N, 1.0)
    K5 = constants["K5"]
    M = np.asarray(traj.weighted_mass)
    t = np.asarray(traj.times)
    M0 = abs(M[0]) if M[0] else 1.0
    mono = _Acc()
    for i in range(1, len(t)):
        mono.add(M[i], M[i - 1], t[i], scale=M0)
    modulus = _Acc()
    half = _Acc()
    p = 2 * s * (m - 1) * th + 1
    for j in range(len(t)):
        for k in range(j + 1, len(t)):
            rhs = M[k] + K5 * (t[k] - t[j]) ** (2 * s * th) * max(M[j], 0.0) ** p
            modulus.add(M[j], rhs, t[k], [t[j]])
        if M[j] > 0:
            window = t[j] + 1.0 / ((2 * K5) ** (1 / (2 * s * th)) * M[j] ** (m - 1))
            for k in range(j, len(t)):
                if t[k] <= window:
                    half.add(M[j] / 2, M[k], t[k], [t[j]])
    bal = check_balance_law(traj, balance_tol)
    reps = {"monotone": mono, "modulus": modulus, "half_mass": half}
    worst = min((a.worst for a in reps.values() if a.n), default=0.0)
    acc = _Acc()
    for a in reps.values():
        acc.rows += a.rows
        acc.n += a.n
    acc.worst = worst
    rep = acc.report("weighted_l1", "weighted mass monotone, balance law, modulus, half-mass window",
                     _params(traj), tol, _const_tag(constants, ["K5"]))
    rep.extra = {k: (a.worst if a.n else 0.0) for k, a in reps.items()}
    rep.extra["balance_residual_per_unit_time"] = bal.extra["max_residual_per_unit_time"]
    rep.passed = rep.passed and bal.passed
    return rep


def empirical_waiting_time(traj: Trajectory, L1: float, cells: int = BOUNDARY_CELLS):
    """Smallest output time after which ``u >= L1 Phi_1^(1/m) t^(-1/(m-1))`` holds
    at every later output time on nodes away from the boundary layer."""
    m, a = traj.m, 1 / (traj.m - 1)
    phi = traj.basis.phi1_grid
    mask = ~traj.basis.domain.boundary_layer_mask(cells)
    ok = []
    for i, t in enumerate(traj.times):
        if t <= 0:
            ok.append(False)
            continue
        u = traj.snapshots[i].values[mask]
        ok.append(bool(np.all(u >= L1 * phi[mask] ** (1 / m) * t ** -a)))
    t_star = None
    for i in range(len(ok) - 1, -1, -1):
        if not ok[i]:
            break
        t_star = traj.times[i]
    return t_star


def check_lower_bound(traj: Trajectory, constants: ConstantSet, u0_mass: float,
                      L1: float, tol=POINTWISE_TOL, formula: ConstantSet | None = None):
    """Lower profile bound after the empirical waiting time.

    ``L1`` is a fitted constant; ``formula`` (optional) supplies ``L0`` for the
    ratio to the formula waiting time.
    """
    _need_nonlinear(traj)
    m, a = traj.m, 1 / (traj.m - 1)
    phi = traj.basis.phi1_grid
    layer = _layer(traj)
    X = _nodes(traj)
    t_emp = empirical_waiting_time(traj, L1)
    notes = []
    expected_fail = u0_mass <= 0
    acc = _Acc()
    if t_emp is None:
        notes.append("no output time after which the lower bound holds")
        acc.add(0.0, 1.0)
        acc.worst = -math.inf
    for i, t in enumerate(traj.times):
        if t_emp is None or t < t_emp:
            continue
        rhs = L1 * phi ** (1 / m) * t ** -a
        acc.add(-traj.snapshots[i].values, -rhs, t, X, layer, scale=rhs)
    rep = acc.report("lower_bound", "u >= L1 Phi_1^(1/m) t^(-1/(m-1)) for t >= t*",
                     _params(traj), tol, "fitted", notes, expected_fail=expected_fail)
    if rep.worst_margin == -math.inf:
        rep.worst_margin = -1.0
        rep.passed = False
    rep.extra["t_star_empirical"] = t_emp
    if formula is not None and u0_mass > 0:
        ts = formula.t_star(u0_mass)
        rep.extra["t_star_formula"] = ts
        rep.extra["t_star_ratio"] = None if t_emp is None else t_emp / ts
    # alternative form: u >= L1 Phi^(1/m) t^-a (1 - (t*/t)^a)
    if t_emp is not None:
        alt = math.inf
        for i, t in _positive_times(traj):
            rhs = L1 * phi ** (1 / m) * t ** -a * (1 - (t_emp / t) ** a)
            alt = min(alt, float(np.min(traj.snapshots[i].values[~layer] - rhs[~layer])))
        rep.extra["alternative_form_min_gap"] = alt
    return rep


def harnack_ratio(traj: Trajectory, t_from: float, cells: int = BOUNDARY_CELLS):
    """Fitted ``(H0, H1)``: extremes of ``t^(1/(m-1)) u / Phi_1^(1/m)`` for
    ``t >= t_from`` on nodes away from the boundary layer."""
    m, a = traj.m, 1 / (traj.m - 1)
    phi = traj.basis.phi1_grid
    mask = ~traj.basis.domain.boundary_layer_mask(cells)
    lo, hi = math.inf, 0.0
    for i, t in _positive_times(traj):
        if t < t_from:
            continue
        r = t ** a * traj.snapshots[i].values[mask] / phi[mask] ** (1 / m)
        lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
    return lo, hi


def _balls(domain, radii, max_centers=64):
    X = domain.nodes()
    d = domain.distance_to_boundary()
    stride = max(1, X.shape[0] // max_centers)
    out = []
    excluded = 0
    for R in radii:
        for c in range(0, X.shape[0], stride):
            if d[c] - R <= R:
                excluded += 1
                continue
            inside = np.linalg.norm(X - X[c], axis=1) <= R
            if np.count_nonzero(inside) >= 2:
                out.append((c, R, inside))
    return out, excluded


def check_harnack(traj: Trajectory, constants: ConstantSet, radii=(0.05, 0.1),
                  t_star: float = 0.0, tol=POINTWISE_TOL):
    _need_nonlinear(traj)
    m, a = traj.m, 1 / (traj.m - 1)
    H0, H1 = constants["H0"], constants["H1"]
    tag = _const_tag(constants, ["H0", "H1"])
    phi = traj.basis.phi1_grid
    layer = _layer(traj)
    X = _nodes(traj)
    glob = _Acc()
    local = _Acc()
    balls, excluded = _balls(traj.basis.domain, radii)
    for i, t in _positive_times(traj):
        if t < t_star:
            continue
        u = traj.snapshots[i].values
        prof = phi ** (1 / m) * t ** -a
        glob.add(u, H1 * prof, t, X, layer)
        glob.add(-u, -H0 * prof, t, X, layer, scale=H0 * prof)
        for c, R, inside in balls:
            hp = phi[inside].max() / phi[inside].min()
            lhs = u[inside].max()
            rhs = (H1 / H0) * hp ** (1 / m) * u[inside].min()
            local.add(lhs, rhs, t, X[c])
    acc = _Acc()
    acc.rows = glob.rows + local.rows
    acc.n = glob.n + local.n
    acc.worst = min(glob.worst, local.worst)
    acc.worst_bd = glob.worst_bd
    notes = [f"{excluded} balls excluded for touching the boundary"] if excluded else []
    rep = acc.report("harnack", "H0 Phi_1^(1/m) t^-a <= u <= H1 Phi_1^(1/m) t^-a; local sup/inf",
                     _params(traj), tol, tag, notes)
    rep.extra = {"global_margin": glob.worst if glob.n else 0.0,
                 "local_margin": local.worst if local.n else 0.0,
                 "balls": len(balls), "t_star": t_star}
    return rep


def check_green_pairing(traj: Trajectory, n_samples: int = 50, seed: int = 0,
                        tol=POINTWISE_TOL):
    """Two-sided bound on the decrease of ``int u G(., x0)`` between two times,
    plus its monotonicity, at randomly sampled ``(t0, t1, t, x0)``."""
    _need_nonlinear(traj)
    m = traj.m
    b = traj.basis
    op = FractionalOperator(traj.s, b)
    pos = [i for i, t in _positive_times(traj)]
    if len(pos) < 2:
        raise InapplicableCheckError("need at least two positive output times")
    pairing = [b.inverse(traj.snapshots[i].coeffs / op.mu) for i in range(len(traj))]
    rng = np.random.default_rng(seed)
    layer = _layer(traj)
    interior = np.flatnonzero(~layer)
    X = _nodes(traj)
    low, up, mono = _Acc(), _Acc(), _Acc()
    for _ in range(n_samples):
        i0, i1, i2 = sorted(rng.choice(pos, size=3, replace=True))
        if i1 == i0 and len(pos) > 1:
            i1 = pos[min(pos.index(i0) + 1, len(pos) - 1)]
            i2 = max(i2, i1)
        j = int(rng.choice(interior))
        t0, t1, t = traj.times[i0], traj.times[i1], traj.times[i2]
        u0j = max(traj.snapshots[i0].values[j], 0.0)
        utj = max(traj.snapshots[i2].values[j], 0.0)
        drop = pairing[i0][j] - pairing[i1][j]
        lhs = (t0 / t1) ** (m / (m - 1)) * (t1 - t0) * u0j ** m
        rhs = (m - 1) * t ** (m / (m - 1)) * t0 ** (-1 / (m - 1)) * utj ** m
        sc = max(abs(drop), abs(lhs), abs(rhs), np.finfo(float).tiny)
        low.add(lhs, drop, t1, X[j], scale=sc)
        up.add(drop, rhs, t, X[j], scale=sc)
    for i in range(1, len(traj)):
        sc = np.maximum(np.abs(pairing[0]), np.finfo(float).tiny)
        mono.add(pairing[i], pairing[i - 1], traj.times[i], X, layer, scale=sc.max())
    acc = _Acc()
    acc.rows = low.rows + up.rows
    acc.n = low.n + up.n
    acc.worst = min(low.worst, up.worst)
    rep = acc.report("green_pairing", "two-sided bound on the decrease of int u G(., x0)",
                     _params(traj), tol)
    rep.extra = {"lower_margin": low.worst, "upper_margin": up.worst,
                 "monotone_margin": mono.worst}
    return rep


def check_benilan_crandall(traj: Trajectory, rel_tol=1e-6):
    """``u(t, x) t^(1/(m-1))`` nondecreasing; margin relative to ``max sup u``."""
    _need_nonlinear(traj)
    a = 1 / (traj.m - 1)
    layer = _layer(traj)
    X = _nodes(traj)
    scale = max(max(traj.sup), np.finfo(float).tiny)
    acc = _Acc()
    prev = traj.snapshots[0].values * traj.times[0] ** a
    for t, u in zip(traj.times[1:], traj.snapshots[1:]):
        cur = u.values * t ** a
        acc.add(prev, cur, t, X, layer, scale=scale * max(t ** a, 1e-300))
        prev = cur
    rep = acc.report("benilan_crandall", "u t^(1/(m-1)) nondecreasing in t", _params(traj),
                     rel_tol)
    full = min(rep.worst_margin, rep.boundary_margin if rep.boundary_margin is not None
               else math.inf)
    rep.extra["all_nodes_margin"] = full
    return rep


def check_ordered_contraction(traj_u: Trajectory, traj_v: Trajectory,
                              constants: ConstantSet, k7_fitted: float | None = None,
                              split: float | None = None, rel_tol=1e-6, tol=POINTWISE_TOL):
    """Monotone weighted distance of ordered solutions and its modulus bound.

    With ``k7_fitted`` the modulus uses ``k7_fitted * max(M_u, M_v)^(2s th (m-1))``;
    otherwise the formula factory ``constants.K7``.  ``split`` restricts the
    modulus samples to ``tau >= split`` (held-out times).
    """
    _need_nonlinear(traj_u)
    if np.any(traj_u.snapshots[0].values < traj_v.snapshots[0].values - 1e-14):
        raise InapplicableCheckError("initial data are not ordered")
    m, s = traj_u.m, traj_u.s
    N = traj_u.basis.domain.dimension
    th = theta(s, m, N, 1.0)
    Mu, Mv = np.asarray(traj_u.weighted_mass), np.asarray(traj_v.weighted_mass)
    D = Mu - Mv
    t = np.asarray(traj_u.times)
    D0 = abs(D[0]) if D[0] else 1.0
    mono = _Acc()
    for i in range(1, len(t)):
        mono.add(D[i], D[i - 1], t[i], scale=D0)
    mod = _Acc()
    for j in range(len(t)):
        if split is not None and t[j] < split:
            continue
        if k7_fitted is not None:
            K7 = k7_fitted * max(Mu[j], Mv[j]) ** (2 * s * th * (m - 1))
        else:
            K7 = constants.K7(Mu[j], Mv[j])
        for k in range(j + 1, len(t)):
            rhs = D[k] + K7 * (t[k] - t[j]) ** (2 * s * th) * D[j]
            mod.add(D[j], rhs, t[k], [t[j]])
    acc = _Acc()
    acc.rows = mono.rows + mod.rows
    acc.n = mono.n + mod.n
    acc.worst = mod.worst
    tag = "fitted" if k7_fitted is not None else _const_tag(constants, ["K4"])
    rep = acc.report("ordered_contraction", "weighted distance of ordered solutions",
                     _params(traj_u), tol, tag)
    mono_m = mono.worst if mono.n else 0.0
    rep.extra = {"monotone_margin": mono_m, "modulus_margin": mod.worst if mod.n else 0.0}
    rep.passed = rep.passed and mono_m >= -rel_tol
    return rep


def check_linear_limit(traj: Trajectory, n_gap: float = 3.0, tol=POINTWISE_TOL):
    """Large-time profile of the linear flow: ``u e^{mu_1 (t - t0)} / c_1(t0) -> Phi_1``
    with ``t0`` the first recorded time."""
    if traj.m != 1:
        raise InapplicableCheckError("the linear-limit check needs an m = 1 run")
    b = traj.basis
    op = FractionalOperator(traj.s, b)
    c10 = traj.snapshots[0].coeffs[0]
    if abs(c10) < 1e-14 * max(1.0, float(np.max(np.abs(traj.snapshots[0].coeffs)))):
        raise InapplicableCheckError("degenerate normalization: first coefficient vanishes")
    mu1, mu2 = op.mu[0], op.mu[1]
    t0 = traj.times[0]
    t_from = traj.times[0] + n_gap / (mu2 - mu1)
    phi = b.phi1_grid
    acc = _Acc()
    resid = []
    for i, t in enumerate(traj.times):
        scaled = traj.snapshots[i].values * math.exp(mu1 * (t - t0)) / c10
        dev = float(np.max(np.abs(scaled - phi)))
        resid.append((t, dev))
        if t >= t_from:
            acc.add(dev, tol, t, scale=1.0)
    rep = acc.report("linear_limit", "u(t) e^(mu_1 t) / c_1(0) -> Phi_1", _params(traj), 0.0)
    rep.extra = {"t_from": t_from, "decay_rate": residual_decay_rate(resid),
                 "gap": float(mu2 - mu1)}
    if acc.n == 0:
        rep.notes.append("no output time beyond the spectral-gap window")
        rep.passed = False
    return rep


def residual_decay_rate(resid):
    """Slope of ``-log(residual)`` against ``t`` over nonzero residuals."""
    pts = [(t, math.log(r)) for t, r in resid if r > 1e-13]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(-np.polyfit(x, y, 1)[0])


def merge_reports(reports):
    """Deterministic ordering by name, then parameters."""
    return sorted(reports, key=lambda r: (r.name, repr(sorted(r.params.items())), r.constants))
