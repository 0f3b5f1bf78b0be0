"""The sublinear elliptic problem ``A(V^m) = lam V`` and its separated
parabolic solutions ``V (t + h)^(-1/(m-1))``."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import DegenerateStartError, EllipticConvergenceError
from .spectral import EigenBasis, Field, FractionalOperator, phi1_profile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EllipticConfig:
    lam: float
    m: float
    max_iterations: int = 500
    tolerance: float = 1e-12
    relax: float = 1.0
    newton_polish: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.m > 1:
            raise ValueError("m must be > 1")
        if not 0 < self.relax <= 1:
            raise ValueError("relax must lie in (0, 1]")

    @classmethod
    def giant(cls, m, **kw):
        """Configuration whose solution generates the separated solution."""
        return cls(lam=1.0 / (m - 1), m=m, **kw)


@dataclass
class EllipticResult:
    V: Field
    iterations: int
    residual: float
    history: list = dc_field(default_factory=list)
    warnings: list = dc_field(default_factory=list)


def elliptic_residual(V: Field, lam: float, m: float, op: FractionalOperator) -> float:
    """``|| A(V^m) - lam V ||`` in the ``Phi_1``-weighted L1 norm."""
    b = V.basis
    v = np.maximum(V.values, 0.0)
    r = b.inverse(op.mu * b.forward(v ** m)) - lam * v
    return b.integrate(np.abs(r) * b.phi1_grid)


def solve_elliptic(cfg: EllipticConfig, basis: EigenBasis, op: FractionalOperator,
                   seed: Field | None = None) -> EllipticResult:
    """Fixed point ``V <- (lam A^{-1} V)_+^{1/m}`` followed by a Newton polish.

    The default seed is ``Phi_1^{1/m}``.  Convergence is measured by the sup
    norm of successive iterates relative to the sup of the iterate.
    """
    m, lam = cfg.m, cfg.lam
    if seed is None:
        v = np.maximum(phi1_profile(basis).values, 0.0) ** (1.0 / m)
    else:
        v = np.maximum(np.asarray(seed.values, dtype=float), 0.0)
    if not np.any(v > 0):
        raise DegenerateStartError("seed is identically zero")
    inv_mu = 1.0 / op.mu
    relax = cfg.relax
    history = []
    warnings = []
    it = 0
    diff = np.inf
    for it in range(1, cfg.max_iterations + 1):
        w = np.maximum(lam * basis.inverse(inv_mu * basis.forward(v)), 0.0) ** (1.0 / m)
        new = (1 - relax) * v + relax * w
        if not np.any(new > 0):
            raise DegenerateStartError("iterate collapsed to zero")
        diff = float(np.max(np.abs(new - v))) / float(np.max(new))
        if history and diff > history[-1] * 1.1 and relax > 1e-3:
            if it > 5:
                warnings.append(f"residual increased at iteration {it}")
            relax *= 0.5
        history.append(diff)
        v = new
        if diff <= cfg.tolerance:
            break
    if cfg.newton_polish:
        v = _polish(v, lam, m, basis, inv_mu)
    V = Field(basis, values=v, nonnegative=True).sync()
    res = elliptic_residual(V, lam, m, op)
    if diff > cfg.tolerance and not cfg.newton_polish:
        raise EllipticConvergenceError(
            f"no convergence after {cfg.max_iterations} iterations", history)
    if not np.isfinite(res):
        raise EllipticConvergenceError("non-finite residual", history)
    for w_ in warnings:
        log.warning(w_)
    return EllipticResult(V=V, iterations=it, residual=res, history=history,
                          warnings=warnings)


def _polish(v, lam, m, basis, inv_mu, max_iter=20):
    # Newton on V^m - lam A^{-1} V = 0 with GMRES inner solves
    n = v.size

    def Ainv(x):
        return basis.inverse(inv_mu * basis.forward(x))

    for _ in range(max_iter):
        vp = np.maximum(v, 0.0)
        F = vp ** m - lam * Ainv(vp)
        if float(np.max(np.abs(F))) <= 1e-15 * max(1.0, float(np.max(vp)) ** m):
            break
        d = m * vp ** (m - 1)
        J = LinearOperator((n, n), matvec=lambda x: d * x - lam * Ainv(x), dtype=float)
        dv, info = gmres(J, -F, rtol=1e-13, atol=0.0, restart=200, maxiter=20)
        if info != 0 or not np.all(np.isfinite(dv)):
            break
        v_new = np.maximum(v + dv, 0.0)
        F_new = v_new ** m - lam * Ainv(v_new)
        if np.max(np.abs(F_new)) >= np.max(np.abs(F)):
            break
        v = v_new
    return v


def giant_trajectory(V: Field, t, m: float, h: float = 0.0) -> Field:
    """``V (t + h)^(-1/(m-1))``; ``V`` should solve the problem with
    ``lam = 1/(m-1)``."""
    if t + h <= 0:
        raise ValueError("t + h must be positive")
    return V * (float(t + h) ** (-1.0 / (m - 1)))


def fit_h_constants(V: Field, lam: float, m: float, cells: int = 2):
    """Fitted ``(h0, h1)``: extremes of ``V^m / (|V|_{L1,Phi1} Phi_1)`` and
    ``V^m / Phi_1`` over nodes away from the boundary layer."""
    b = V.basis
    phi = b.phi1_grid
    mask = ~b.domain.boundary_layer_mask(cells)
    vm = np.maximum(V.values, 0.0) ** m
    wmass = b.integrate(np.maximum(V.values, 0.0) * phi)
    r = vm[mask] / phi[mask]
    return float(r.min() / wmass), float(r.max())


def elliptic_sandwich(V: Field, lam: float, m: float, c0: float, h1: float,
                      tol: float = 1e-3, cells: int = 2):
    """Check ``h0 |V|_{L1,Phi1} Phi_1 <= V^m <= h1 Phi_1`` with ``h0 = c0 lam``.

    ``h1`` is a fitted value.  Nodes within ``cells`` grid spacings of the
    boundary are scored separately.
    """
    from .verify import _Acc

    if not np.any(V.values > 0):
        raise DegenerateStartError("the sandwich is undefined for V = 0")
    b = V.basis
    phi = b.phi1_grid
    layer = b.domain.boundary_layer_mask(cells)
    X = b.domain.nodes()
    vm = np.maximum(V.values, 0.0) ** m
    wmass = b.integrate(np.maximum(V.values, 0.0) * phi)
    h0 = c0 * lam
    lo, up = _Acc(), _Acc()
    lo.add(-vm, -h0 * wmass * phi, 0.0, X, layer, scale=h0 * wmass * phi)
    up.add(vm, h1 * phi, 0.0, X, layer)
    acc = _Acc()
    acc.rows = lo.rows + up.rows
    acc.n = lo.n + up.n
    acc.worst = min(lo.worst, up.worst)
    acc.worst_bd = min(lo.worst_bd, up.worst_bd)
    N = b.domain.dimension
    rep = acc.report("elliptic_sandwich", "h0 |V| Phi_1 <= V^m <= h1 Phi_1",
                     {"N": N, "m": m, "lam": lam}, tol, "formula h0, fitted h1")
    ratio = vm[~layer] / phi[~layer]
    rep.extra = {"lower_margin": lo.worst, "upper_margin": up.worst, "h0": h0, "h1": h1,
                 "ratio_sup": float(ratio.max()), "ratio_inf": float(ratio.min())}
    return rep


def pointwise_identity_error(V: Field, lam: float, m: float, op: FractionalOperator,
                             points=None) -> float:
    """Max relative gap in ``V^m(x0) = lam int V G(., x0)`` at ``points``
    (default: all grid nodes)."""
    b = V.basis
    pair = lam * b.inverse(b.forward(V.values) / op.mu)
    vm = np.maximum(V.values, 0.0) ** m
    if points is not None:
        # both sides through their band-limited interpolants
        Phi = b.eval_modes(points)
        pair = lam * (Phi @ (b.forward(V.values) / op.mu))
        vm = Phi @ b.forward(vm)
    return float(np.max(np.abs(vm - pair)) / max(float(np.max(vm)), 1e-300))
