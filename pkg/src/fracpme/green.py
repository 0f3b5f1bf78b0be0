"""Green function of the spectral fractional Laplacian as a truncated eigen-sum,
its two-sided envelopes, and integral bounds built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import AdmissibilityError, EmptySampleError
from .spectral import EigenBasis, Field, FractionalOperator

_CHUNK = 2048


class GreenEvaluator:
    """``G(x, y) = sum_k w_k Phi_k(x) Phi_k(y)`` with ``w_k = mu_k^{-1} exp(-eps lambda_k)``.

    ``M`` may be smaller than the basis size to study truncation.
    """

    def __init__(self, op: FractionalOperator, M: int | None = None, eps: float = 0.0):
        if eps < 0:
            raise ValueError("eps must be >= 0")
        M = op.basis.M if M is None else int(M)
        if not 1 <= M <= op.basis.M:
            raise ValueError(f"M must lie in [1, {op.basis.M}]")
        self.op = op
        self.M = M
        self.eps = float(eps)
        lam = op.basis.eigenvalues[:M]
        self.weights = op.mu[:M] ** -1 * np.exp(-self.eps * lam)

    @property
    def basis(self) -> EigenBasis:
        return self.op.basis

    @property
    def s(self):
        return self.op.s

    @property
    def dim(self):
        return self.basis.domain.dimension

    def points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            return x.reshape(-1, 1)
        return np.atleast_2d(x).reshape(-1, 2)

    def modes(self, x):
        return self.basis.eval_modes(self.points(x), modes=slice(0, self.M))

    def pairs(self, x, y):
        """Values at the pairs ``(x[p], y[p])``; exactly symmetric in ``x, y``."""
        px, py = self.points(x), self.points(y)
        if px.shape != py.shape:
            raise ValueError("x and y must hold the same number of points")
        out = np.empty(px.shape[0])
        for a in range(0, px.shape[0], _CHUNK):
            b = a + _CHUNK
            out[a:b] = (self.modes(px[a:b]) * self.modes(py[a:b])) @ self.weights
        return out

    def matrix(self, x, y=None):
        """``G(x_i, y_j)`` for all combinations."""
        Px = self.modes(x)
        Py = Px if y is None else self.modes(y)
        return (Px * self.weights) @ Py.T

    def apply(self, f: Field, x0=None):
        """``int f G(., x0)``; at every interior node when ``x0`` is None."""
        c = f.coeffs[:self.M] * self.weights
        if x0 is None:
            full = np.zeros(self.basis.M)
            full[:self.M] = c
            return self.basis.inverse(full)
        return self.modes(x0) @ c


def green_eval(g: GreenEvaluator, x, y, with_meta: bool = False):
    """Evaluate ``G(x, y)`` for a single pair or for paired arrays of points."""
    vals = g.pairs(x, y)
    scalar = vals.size == 1
    value = float(vals[0]) if scalar else vals
    if not with_meta:
        return value
    diag = np.all(np.isclose(g.points(x), g.points(y), rtol=0, atol=1e-14), axis=1)
    return {"value": value, "truncation_sensitive": bool(diag[0]) if scalar else diag,
            "mollification": g.eps, "modes": g.M}


def laplacian_green_1d(x, y, L=1.0):
    """Closed-form Green function of ``-d^2/dx^2`` on ``(0, L)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return np.minimum(x, y) * (L - np.maximum(x, y)) / L


@dataclass
class EnvelopeConstants:
    c0: float
    c1: float
    fitted_on: dict = dc_field(default_factory=dict)


def _sample_arrays(g, samples):
    if isinstance(samples, tuple) and len(samples) == 2:
        x, y = samples
    else:
        arr = np.asarray(samples, dtype=float)
        if arr.size == 0:
            raise EmptySampleError("no sample pairs supplied")
        if g.dim == 1:
            arr = arr.reshape(-1, 2)
            x, y = arr[:, 0], arr[:, 1]
        else:
            arr = arr.reshape(-1, 2, 2)
            x, y = arr[:, 0], arr[:, 1]
    px, py = g.points(x), g.points(y)
    if px.shape[0] == 0:
        raise EmptySampleError("no sample pairs supplied")
    return px, py


def fit_envelopes(g: GreenEvaluator, samples, exclusion: float | None = None) -> EnvelopeConstants:
    """Smallest ``c1`` and largest ``c0`` consistent with the two-sided
    envelope at every retained sample pair.

    Pairs closer than ``exclusion`` (default two grid spacings) are dropped
    and counted.
    """
    px, py = _sample_arrays(g, samples)
    if exclusion is None:
        exclusion = 2 * max(g.basis.domain.spacing)
    r = np.linalg.norm(px - py, axis=1)
    keep = r >= exclusion
    n_excl = int(np.count_nonzero(~keep))
    if not np.any(keep):
        raise EmptySampleError(
            f"all {px.shape[0]} pairs lie within the exclusion radius {exclusion:g}")
    px, py, r = px[keep], py[keep], r[keep]
    G = g.pairs(px, py)
    N = g.dim
    phx = g.basis.eval_mode(0, px)
    phy = g.basis.eval_mode(0, py)
    env = np.minimum(phx / r, 1.0) * np.minimum(phy / r, 1.0)
    c1 = float(np.max(G * r ** (N - 2 * g.s) / env))
    c0 = float(np.min(G / (phx * phy)))
    return EnvelopeConstants(c0=c0, c1=c1, fitted_on={
        "pairs": int(px.shape[0]), "excluded": n_excl,
        "exclusion_radius": float(exclusion), "s": g.s, "N": N,
        "modes": g.M, "mollification": g.eps})


def grid_pairs(domain, stride=1, exclude_diagonal=True):
    """All ordered node pairs ``(x, y)`` with ``x < y`` (by flat index) on a
    subsampled grid."""
    pts = domain.nodes()
    if domain.dimension == 1:
        pts = pts[::stride]
    else:
        n = domain.grid_points_per_side
        idx = np.arange(n)[::stride]
        flat = (idx[:, None] * n + idx[None, :]).ravel()
        pts = pts[flat]
    i, j = np.triu_indices(pts.shape[0], k=1 if exclude_diagonal else 0)
    return pts[i], pts[j]


def q_upper_limit(s, N):
    return N / (N - 2 * s) if N > 2 * s else math.inf


def _check_q(q, s, N):
    qmax = q_upper_limit(s, N)
    if not 0 < q < qmax:
        raise AdmissibilityError(
            f"q={q} outside the admissible range 0 < q < N/(N-2s) = {qmax}")


def _gauss_cells_1d(L, x0, n_cells, levels, order):
    edges = np.linspace(0.0, L, n_cells + 1)
    edges = np.union1d(edges, [x0])
    h = L / n_cells
    extra = []
    for lev in range(1, levels + 1):
        d = h / 2 ** lev
        extra += [x0 - d, x0 + d]
    edges = np.union1d(edges, [e for e in extra if 0 < e < L])
    xg, wg = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    mid, half = (a + b) / 2, (b - a) / 2
    pts = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    wts = (half[:, None] * wg[None, :]).ravel()
    return pts, wts


def _refine_rect(rect, x0, levels):
    (ax, bx), (ay, by) = rect
    touches = ax <= x0[0] <= bx and ay <= x0[1] <= by
    if levels == 0 or not touches:
        return [rect]
    mx, my = (ax + bx) / 2, (ay + by) / 2
    out = []
    for sx in ((ax, mx), (mx, bx)):
        for sy in ((ay, my), (my, by)):
            out += _refine_rect((sx, sy), x0, levels - 1)
    return out


def _gauss_cells_2d(sides, x0, n_cells, levels, order):
    ex = np.linspace(0, sides[0], n_cells + 1)
    ey = np.linspace(0, sides[1], n_cells + 1)
    xg, wg = np.polynomial.legendre.leggauss(order)
    rects = []
    for i in range(n_cells):
        for j in range(n_cells):
            rects += _refine_rect(((ex[i], ex[i + 1]), (ey[j], ey[j + 1])), x0, levels)
    R = np.asarray(rects)  # (n, 2, 2)
    mid = R.mean(axis=2)
    half = (R[:, :, 1] - R[:, :, 0]) / 2
    px = mid[:, 0, None, None] + half[:, 0, None, None] * xg[None, :, None]
    py = mid[:, 1, None, None] + half[:, 1, None, None] * xg[None, None, :]
    px, py = np.broadcast_arrays(px, py)
    w = (half[:, 0] * half[:, 1])[:, None, None] * wg[None, :, None] * wg[None, None, :]
    return np.stack([px.ravel(), py.ravel()], axis=1), w.ravel()


def green_q_integral(g: GreenEvaluator, x0, q: float, n_cells: int | None = None,
                     levels: int = 4, order: int = 6) -> float:
    """``int G(x, x0)^q dx`` by Gauss-Legendre on a uniform cell partition,
    with the cells around ``x0`` refined ``levels`` dyadic times."""
    N = g.dim
    _check_q(q, g.s, N)
    dom = g.basis.domain
    x0 = np.asarray(x0, dtype=float).ravel()
    if N == 1:
        n_cells = n_cells or dom.grid_points_per_side + 1
        pts, wts = _gauss_cells_1d(dom.side_lengths[0], float(x0[0]), n_cells, levels, order)
    else:
        n_cells = n_cells or min(dom.grid_points_per_side + 1, 32)
        pts, wts = _gauss_cells_2d(dom.side_lengths, x0, n_cells, levels, min(order, 4))
    total = 0.0
    c0 = g.modes(x0)[0] * g.weights
    P = g.points(pts)
    for a in range(0, P.shape[0], _CHUNK):
        G = g.modes(P[a:a + _CHUNK]) @ c0
        total += float(np.dot(np.maximum(G, 0.0) ** q, wts[a:a + _CHUNK]))
    return total


def green_mass(g: GreenEvaluator, x0):
    """Exact ``int G(x, x0) dx`` of the truncated kernel via mode integrals."""
    ints = g.basis.mode_integrals[:g.M]
    return g.modes(x0) @ (g.weights * ints)


def envelope_Bq(phi1_value, q: float, s: float, N: int):
    """Boundary envelope of ``(int G(., x0)^q)^{1/q}`` in terms of ``Phi_1(x0)``.

    Three regimes split at ``q = N/(N-2s+1)``; the split point itself uses the
    logarithmic form.
    """
    _check_q(q, s, N)
    phi = np.asarray(phi1_value, dtype=float)
    if np.any(phi < 0):
        raise ValueError("phi1_value must be >= 0")
    q_crit = _q_crit(s, N)
    if math.isclose(q, q_crit, rel_tol=1e-12, abs_tol=0.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(phi > 0, phi * np.abs(np.log(np.where(phi > 0, phi, 1.0))) ** (1 / q), 0.0)
    elif q < q_crit:
        out = phi.copy()
    else:
        out = phi ** ((N - q * (N - 2 * s)) / q)
    return float(out) if out.ndim == 0 else out


def _q_crit(s, N):
    den = N - 2 * s + 1
    return N / den if den > 0 else math.inf


def bq_regime(q, s, N):
    q_crit = _q_crit(s, N)
    if math.isclose(q, q_crit, rel_tol=1e-12, abs_tol=0.0):
        return "log"
    return "linear" if q < q_crit else "power"


def nu_sequence(s: float, m: float, eps: float = 0.5, max_steps: int = 10_000):
    """Exponents ``nu_n`` of the boundary bootstrap, stopping once they reach 1."""
    if 2 * s > 1:
        return [1.0]
    nu = (1 - eps) / m if 2 * s == 1 else 2 * s / m
    seq = [nu]
    if 2 * s == 1:
        return seq
    factor = 1 + (1 - 2 * s) / m
    while seq[-1] < 1 and len(seq) < max_steps:
        seq.append(min(seq[-1] * factor, 1.0))
    return seq


@dataclass
class BootstrapResult:
    hypothesis_ok: bool
    hypothesis_margin: float
    c5: float
    ratio: np.ndarray
    conclusion_margin: float
    nu_trace: list
    samples: int


def bootstrap_upper(g: GreenEvaluator, u: Field, kappa0: float, m: float,
                    nodes=None, tol: float = 1e-6) -> BootstrapResult:
    """Check the hypothesis ``u^m <= kappa0 int u G`` at the sampled nodes and
    fit ``c5`` in ``int u G <= c5^m kappa0^{1/(m-1)} Phi_1``.

    ``nodes`` is an index array into the interior grid (default: all nodes).
    """
    pair = g.apply(u)
    v = np.maximum(u.values, 0.0)
    phi = g.basis.phi1_grid
    if nodes is not None:
        pair, v, phi = pair[nodes], v[nodes], phi[nodes]
    lhs = v ** m
    rhs = kappa0 * pair
    scale = max(float(np.max(np.abs(rhs))), float(np.max(lhs)), np.finfo(float).tiny)
    hyp_margin = float(np.min(rhs - lhs)) / scale
    ratio = pair / (kappa0 ** (1 / (m - 1)) * phi)
    c5m = max(float(np.max(ratio)), 0.0)
    c5 = c5m ** (1 / m)
    bound = c5m * kappa0 ** (1 / (m - 1)) * phi
    concl = float(np.min(bound - pair)) / max(float(np.max(bound)), np.finfo(float).tiny)
    return BootstrapResult(
        hypothesis_ok=hyp_margin >= -tol, hypothesis_margin=hyp_margin,
        c5=c5, ratio=ratio, conclusion_margin=concl,
        nu_trace=nu_sequence(g.s, m), samples=int(v.size))


def measure_c2(g: GreenEvaluator, q: float = 1.0, stride: int = 8):
    """Sampled ``sup_{x0} int G(., x0)^q`` over a subsampled node set."""
    pts = g.basis.domain.nodes()[::stride]
    if q == 1.0:
        return float(np.max(green_mass(g, pts)))
    return max(green_q_integral(g, p, q) for p in pts)
