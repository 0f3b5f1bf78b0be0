"""Explicit constants of the a priori estimates, and their empirical
counterparts fitted from simulations.

Formula values are evaluated from measured kernel constants (``c0``, ``c1``,
``c2``, ``c5``) and never mixed with fitted values: every entry of a
:class:`ConstantSet` carries a ``tag`` of either ``"formula"`` or ``"fitted"``.

Wherever the operator's first eigenvalue enters a constant, ``mu_1 =
lambda_1 ** s`` is used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import EmptySampleError, MissingInputError

FORMULA = "formula"
FITTED = "fitted"

REQUIRED_INPUTS = ("N", "m", "s", "mu1", "phi1_sup", "diam", "c0", "c1", "c2", "c5")


def theta(s: float, m: float, N: int, gamma: float = 0.0) -> float:
    """``1 / (2s + (N + gamma)(m - 1))``."""
    if m <= 1:
        raise ValueError("theta needs m > 1")
    if not 0 < s <= 1 or N < 1 or gamma < 0:
        raise ValueError("need 0 < s <= 1, N >= 1, gamma >= 0")
    return 1.0 / (2 * s + (N + gamma) * (m - 1))


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N (2 for N = 1)."""
    return 2 * math.pi ** (N / 2) / math.gamma(N / 2)


def k1_chain(s, m, N, c1, diam, phi1_sup, cN=1.0, q=1.0):
    """``K1`` through the chained bound on ``sup int G`` in terms of ``c1``.

    ``cN`` is a dimensional constant that the chain leaves unspecified.
    """
    k = 2 ** (m / (m - 1)) * c1 * cN * (diam + 1 / s) ** N * phi1_sup ** (2 * q)
    return k ** (1 / (m - 1))


@dataclass
class ConstantValue:
    value: float
    tag: str
    inputs: dict = dc_field(default_factory=dict)
    note: str = ""

    def to_json(self):
        out = {"value": self.value, "tag": self.tag, "inputs": self.inputs}
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class ConstantSet:
    inputs: dict
    values: dict = dc_field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name].value

    def __contains__(self, name):
        return name in self.values

    def tag(self, name):
        return self.values[name].tag

    @property
    def m(self):
        return self.inputs["m"]

    def theta11(self):
        return theta(self.inputs["s"], self.inputs["m"], self.inputs["N"], 1.0)

    def t_star(self, weighted_mass: float) -> float:
        """Waiting time ``L0 / (int u0 Phi_1)^(m-1)``."""
        if weighted_mass <= 0:
            return math.inf
        return self["L0"] / weighted_mass ** (self.m - 1)

    def K7(self, mass_u: float, mass_v: float) -> float:
        """Ordered-contraction modulus for the weighted masses at ``tau_0``."""
        m, s = self.m, self.inputs["s"]
        th = self.theta11()
        base = m * self["K4"] ** (m - 1) * self.inputs["mu1"] / (2 * s * th)
        return base * max(mass_u, mass_v) ** (2 * s * th * (m - 1))

    def to_json(self):
        return {"inputs": dict(self.inputs),
                "values": {k: self.values[k].to_json() for k in sorted(self.values)}}


def evaluate_formulas(inputs: dict, gamma: float = 1.0, lam: float | None = None) -> ConstantSet:
    """Evaluate every explicit constant from geometric and kernel inputs.

    ``inputs`` must provide ``N, m, s, mu1, phi1_sup, diam, c0, c1, c2, c5``.
    ``lam`` is the elliptic eigenvalue used in ``h0, h1`` (default
    ``1/(m-1)``).
    """
    missing = [k for k in REQUIRED_INPUTS if inputs.get(k) is None]
    if missing:
        raise MissingInputError(f"missing constant inputs: {', '.join(missing)}")
    N, m, s = int(inputs["N"]), float(inputs["m"]), float(inputs["s"])
    mu1, c0, c1, c2, c5 = (float(inputs[k]) for k in ("mu1", "c0", "c1", "c2", "c5"))
    lam = 1.0 / (m - 1) if lam is None else float(lam)
    th1 = theta(s, m, N, 0.0)
    th11 = theta(s, m, N, 1.0)
    thg = theta(s, m, N, gamma)
    w = sphere_area(N)
    p = m / (m - 1)

    vals = {}

    def put(name, value, used, note=""):
        vals[name] = ConstantValue(float(value), FORMULA,
                                   {k: _num(v) for k, v in used.items()}, note)

    put("theta_1", th1, {"s": s, "m": m, "N": N})
    put("theta_11", th11, {"s": s, "m": m, "N": N})
    put("theta_1g", thg, {"s": s, "m": m, "N": N, "gamma": gamma})
    K1 = (2 ** p * c2) ** (1 / (m - 1))
    put("K1", K1, {"m": m, "c2": c2})
    K2 = c5 * 2 ** (m / (m - 1) ** 2)
    K2bar = c5 ** m * 2 ** (m / (m - 1) ** 2)
    put("K2", K2, {"m": m, "c5": c5})
    put("K2bar", K2bar, {"m": m, "c5": c5})
    K3m = 2 ** ((N - 2 * s) * th1 + 2) * (w / (2 * s)) ** (m * (N - 2 * s) * th1) \
        * (c1 * 2 ** p) ** (m * N * th1)
    put("K3", K3m ** (1 / m), {"m": m, "s": s, "N": N, "c1": c1},
        "the printed expression bounds the m-th power of the sup norm")
    K4m = 2 ** ((N - 2 * s + 1) * th11 + 2) * (w / (2 * s)) ** (m * (N - 2 * s + 1) * th11) \
        * (c1 * 2 ** p) ** (m * (N + 1) * th11)
    K4 = K4m ** (1 / m)
    put("K4", K4, {"m": m, "s": s, "N": N, "c1": c1})
    K5 = mu1 * K4 / (2 * s * th11)
    put("K5", K5, {"mu1": mu1, "K4": K4, "s": s},
        "mu_1 = lambda_1^s; the derivation yields K4^(m-1) in place of K4")
    L0 = (4 * K2bar / c0) ** (m - 1)
    put("L0", L0, {"K2bar": K2bar, "c0": c0, "m": m})
    L1m = c0 / (4 * (m - 1) * (2 * K5) ** (1 / (2 * s * thg * (m - 1))))
    put("L1", L1m ** (1 / m), {"c0": c0, "K5": K5, "m": m, "s": s, "gamma": gamma})
    put("H0", vals["L1"].value, {"L1": vals["L1"].value})
    put("H1", K2, {"K2": K2})
    put("h0", c0 * lam, {"c0": c0, "lam": lam})
    put("h1", c5 * lam ** (1 / (m - 1)), {"c5": c5, "lam": lam},
        "the derivation yields c5^m lam^(m/(m-1))")
    put("K1_chain", k1_chain(s, m, N, c1, float(inputs["diam"]), float(inputs["phi1_sup"])),
        {"c1": c1, "diam": inputs["diam"], "phi1_sup": inputs["phi1_sup"]}, "c_N = 1")
    return ConstantSet(inputs={k: _num(v) for k, v in inputs.items()}, values=vals)


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# -- empirical fits ----------------------------------------------------------

def _interior(traj, cells):
    b = traj.basis
    if cells <= 0:
        return np.ones(int(np.prod(b.domain.shape)), dtype=bool)
    return ~b.domain.boundary_layer_mask(cells)


def _runs(ensemble):
    runs = list(ensemble)
    if not runs:
        raise EmptySampleError("empty ensemble")
    return runs


def fit_empirical(ensemble, which: str, t_min: float = 0.0, interior_cells: int = 0,
                  N: int | None = None, t_max: float = math.inf) -> float:
    """Fit a sharp empirical constant over an ensemble of trajectories.

    Upper-type constants are maxima of the scaled quantity over runs, output
    times ``t_min <= t <= t_max`` (and ``t > 0``) and nodes; ``L1``/``H0`` are
    minima.
    """
    runs = _runs(ensemble)
    best = None
    upper = which not in ("L1", "H0")
    for tr in runs:
        val = _fit_one(tr, which, t_min, interior_cells, N, t_max)
        if val is None:
            continue
        best = val if best is None else (max(best, val) if upper else min(best, val))
    return 0.0 if best is None else float(best)


def _fit_one(tr, which, t_min, cells, N, t_max=math.inf):
    m, s = tr.m, tr.s
    b = tr.basis
    N = b.domain.dimension if N is None else N
    a = 1 / (m - 1) if m > 1 else None
    times = np.asarray(tr.times)
    sel = [i for i, t in enumerate(times) if t > 0 and t_min <= t <= t_max]
    if not sel:
        return None
    mask = _interior(tr, cells)
    phi = b.phi1_grid
    if which == "K1":
        return max(t ** a * tr.sup[i] for i, t in ((i, times[i]) for i in sel))
    if which in ("K2", "H1", "L1", "H0"):
        r = [times[i] ** a * np.maximum(tr.snapshots[i].values[mask], 0.0)
             / phi[mask] ** (1 / m) for i in sel]
        r = np.concatenate(r)
        return float(r.max()) if which in ("K2", "H1") else float(r.min())
    if which == "K2bar":
        from .spectral import FractionalOperator
        op = FractionalOperator(s, b)
        vals = []
        for i in sel:
            pair = b.inverse(tr.snapshots[i].coeffs / op.mu)[mask]
            vals.append(float(np.max(times[i] ** a * pair / phi[mask])))
        return max(vals)
    if which == "K3":
        th = theta(s, m, N, 0.0)
        return max(tr.sup[i] * times[i] ** (N * th) / tr.l1[i] ** (2 * s * th)
                   for i in sel if tr.l1[i] > 0) if any(tr.l1[i] > 0 for i in sel) else 0.0
    if which == "K4":
        th = theta(s, m, N, 1.0)
        vals = [tr.sup[i] * times[i] ** ((N + 1) * th) / tr.weighted_mass[i] ** (2 * s * th)
                for i in sel if tr.weighted_mass[i] > 0]
        return max(vals) if vals else 0.0
    if which == "K5":
        th = theta(s, m, N, 1.0)
        M = np.asarray(tr.weighted_mass)
        best = 0.0
        for j in range(len(times)):
            for k in range(j + 1, len(times)):
                if times[k] < t_min or times[k] > t_max or M[j] <= 0:
                    continue
                den = (times[k] - times[j]) ** (2 * s * th) * M[j] ** (2 * s * (m - 1) * th + 1)
                best = max(best, (M[j] - M[k]) / den)
        return best
    raise ValueError(f"unknown constant {which!r}")


def fit_k7(pair_u, pair_v, times_idx=None) -> float:
    """Normalized ordered-contraction coefficient.

    Returns the smallest ``k`` with ``D(tau) - D(t) <= k max(M_u, M_v)^{2s th (m-1)}
    |t - tau|^{2s th} D(tau)`` over the selected pairs ``tau < t``.
    """
    m, s = pair_u.m, pair_u.s
    N = pair_u.basis.domain.dimension
    th = theta(s, m, N, 1.0)
    Mu, Mv = np.asarray(pair_u.weighted_mass), np.asarray(pair_v.weighted_mass)
    D = Mu - Mv
    t = np.asarray(pair_u.times)
    idx = range(len(t)) if times_idx is None else times_idx
    best = 0.0
    for j in idx:
        for k in range(j + 1, len(t)):
            if D[j] <= 0:
                continue
            fac = max(Mu[j], Mv[j]) ** (2 * s * th * (m - 1))
            best = max(best, (D[j] - D[k]) / (fac * (t[k] - t[j]) ** (2 * s * th) * D[j]))
    return best


def fitted_set(inputs: dict, fitted: dict, provenance: str = "") -> ConstantSet:
    """Wrap fitted values in a :class:`ConstantSet` tagged ``fitted``."""
    vals = {k: ConstantValue(float(v), FITTED, {"fitted_on": provenance})
            for k, v in fitted.items()}
    return ConstantSet(inputs={k: _num(v) for k, v in inputs.items()}, values=vals)
