"""Time stepping for ``u_t + A(u^m) = 0`` with zero Dirichlet data.

The scheme is backward Euler in the operator,

    c' = c - dt * mu * P[phi(S c')],    phi(u) = max(u, 0) ** m,

where ``S`` maps coefficients to grid values and ``P`` is the quadrature
projection.  The implicit equation is the optimality condition of the
strictly convex functional

    E(c') = sum (c'_k - c_k)^2 / (2 dt mu_k) + int max(S c', 0)^(m+1) / (m+1),

so the default inner solver is a damped Newton method on ``E``.  Its linear
systems are factored densely for small bases and solved matrix-free by
preconditioned CG otherwise.  The plain fixed point
``w <- S(c - dt mu P[phi(w)])`` is available as ``method="picard"``; it is
only contractive when ``dt * mu_M * m * |u|^(m-1) < 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from .errors import (InapplicableCheckError, PositivityError, StepRejected,
                     TimeStepUnderflow)
from .spectral import EigenBasis, Field, FractionalOperator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    m: float
    s: float
    dt0: float = 1e-4
    safety: float = 1.0
    growth: float = 1.1
    max_dt: float = 1e-2
    min_dt: float = 1e-14
    inner_max_iter: int = 60
    inner_tol: float = 1e-11
    clip_tolerance: float = 1e-6
    max_clip_fraction: float = 1e-4
    method: str = "newton"
    dense_limit: int = 600

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 0 < self.s <= 1:
            raise ValueError("s must lie in (0, 1]")
        if self.dt0 <= 0 or self.max_dt <= 0 or self.min_dt <= 0:
            raise ValueError("time steps must be positive")
        if self.inner_tol <= 0 or self.inner_max_iter < 1:
            raise ValueError("inner tolerance and iteration cap must be positive")
        if self.clip_tolerance < 0:
            raise ValueError("clip_tolerance must be >= 0")
        if self.method not in ("newton", "picard"):
            raise ValueError(f"unknown inner method {self.method!r}")


@dataclass
class StepInfo:
    iterations: int = 0
    clipped_mass: float = 0.0
    dissipation: float = 0.0


@dataclass
class Trajectory:
    """Snapshots at the requested output times plus scalar diagnostics."""

    m: float
    s: float
    times: list = dc_field(default_factory=list)
    snapshots: list = dc_field(default_factory=list)
    sup: list = dc_field(default_factory=list)
    l1: list = dc_field(default_factory=list)
    weighted_mass: list = dc_field(default_factory=list)
    um_phi1: list = dc_field(default_factory=list)
    dissipation: list = dc_field(default_factory=list)
    clipped_mass: list = dc_field(default_factory=list)
    steps: int = 0
    rejections: int = 0
    peak_clipped_mass: float = 0.0
    label: str = ""

    @property
    def basis(self):
        return self.snapshots[0].basis

    def record(self, t, u: Field, dissipation, m):
        phi1 = u.basis.phi1_grid
        v = u.values
        self.times.append(float(t))
        self.snapshots.append(u)
        self.sup.append(float(np.max(v)) if v.size else 0.0)
        self.l1.append(u.basis.integrate(np.abs(v)))
        self.weighted_mass.append(float(u.coeffs[0]))
        self.um_phi1.append(u.basis.integrate(np.maximum(v, 0.0) ** m * phi1))
        self.dissipation.append(float(dissipation))
        self.clipped_mass.append(u.basis.integrate(np.maximum(-v, 0.0)))

    def as_arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in
                ("times", "sup", "l1", "weighted_mass", "um_phi1",
                 "dissipation", "clipped_mass")}

    def values(self):
        return np.stack([u.values for u in self.snapshots])

    def __len__(self):
        return len(self.times)


def _phi(u, m):
    return np.maximum(u, 0.0) ** m


def _operator(basis, s, cache={}):
    key = (id(basis), s)
    op = cache.get(key)
    if op is None or op.basis is not basis:
        op = FractionalOperator(s, basis)
        cache.clear()
        cache[key] = op
    return op


def step(u: Field, dt: float, cfg: SolverConfig, info: StepInfo | None = None) -> Field:
    """Advance one backward-Euler step of size ``dt``.

    Raises :class:`StepRejected` when the inner solve does not converge.
    """
    basis = u.basis
    op = _operator(basis, cfg.s)
    mu = op.mu
    c_old = u.coeffs
    info = StepInfo() if info is None else info
    if cfg.m == 1:
        c = c_old / (1.0 + dt * mu)
        info.dissipation = dt * mu[0] * c[0]
        return Field(basis, coeffs=c)
    if not np.any(c_old):
        return Field(basis, coeffs=np.zeros_like(c_old))
    if cfg.method == "picard":
        c = _picard(basis, mu, c_old, dt, cfg, info)
    else:
        c = _newton(basis, mu, c_old, dt, cfg, info)
    new = Field(basis, coeffs=c)
    v = new.values
    info.clipped_mass = basis.integrate(np.maximum(-v, 0.0))
    fq = basis.forward(_phi(v, cfg.m))
    info.dissipation = dt * mu[0] * fq[0]
    return new


def _picard(basis, mu, c_old, dt, cfg, info):
    w = basis.inverse(c_old)
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    for it in range(1, cfg.inner_max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            c = c_old - dt * mu * basis.forward(_phi(w, cfg.m))
        w_new = basis.inverse(c)
        diff = float(np.max(np.abs(w_new - w)))
        w = w_new
        if not np.isfinite(diff):
            break
        if diff <= cfg.inner_tol * scale:
            info.iterations = it
            return c
    raise StepRejected(f"fixed point did not converge at dt={dt:g}")


def _newton(basis, mu, c_old, dt, cfg, info):
    m = cfg.m
    vol = basis.domain.cell_volume
    inv_dtmu = 1.0 / (dt * mu)
    sq = np.sqrt(mu)

    def energy(c, v):
        return 0.5 * np.sum((c - c_old) ** 2 * inv_dtmu) + \
            vol * np.sum(np.maximum(v, 0.0) ** (m + 1)) / (m + 1)

    c = c_old.copy()
    v = basis.inverse(c)
    E = energy(c, v)
    scale = max(float(np.max(np.abs(v))), np.finfo(float).tiny)
    cnorm = max(float(np.linalg.norm(c_old)), np.finfo(float).tiny)
    for it in range(1, cfg.inner_max_iter + 1):
        R = c - c_old + dt * mu * basis.forward(_phi(v, m))
        d = m * np.maximum(v, 0.0) ** (m - 1)
        dbar = float(np.mean(d))

        # symmetrized Jacobian  I + dt mu^1/2 P D S mu^1/2
        rhs = -R / sq
        if c.size <= cfg.dense_limit:
            S = basis.grid_matrix
            K = vol * (S.T @ (d[:, None] * S))
            J = dt * (sq[:, None] * K * sq[None, :])
            J[np.diag_indices_from(J)] += 1.0
            z = cho_solve(cho_factor(J), rhs)
        else:
            def matvec(z, d=d):
                return z + dt * sq * basis.forward(d * basis.inverse(sq * z))

            n = c.size
            A = LinearOperator((n, n), matvec=matvec, dtype=float)
            Minv = LinearOperator(
                (n, n), matvec=lambda z: z / (1.0 + dt * mu * dbar), dtype=float)
            # inexact Newton: the linear tolerance tightens with the residual
            eta = min(1e-3, max(1e-12, float(np.linalg.norm(R) / cnorm)))
            z, _ = cg(A, rhs, M=Minv, rtol=eta, atol=0.0, maxiter=1000)
        delta = sq * z

        alpha = 1.0
        while True:
            c_try = c + alpha * delta
            v_try = basis.inverse(c_try)
            E_try = energy(c_try, v_try)
            if E_try <= E + 1e-14 * abs(E) or alpha < 1e-8:
                break
            alpha *= 0.5
        step_sup = float(np.max(np.abs(v_try - v)))
        c, v, E = c_try, v_try, E_try
        if not np.isfinite(step_sup):
            break
        if step_sup <= cfg.inner_tol * scale:
            info.iterations = it
            return c
        if alpha < 1e-8:
            break
    raise StepRejected(f"Newton inner solve did not converge at dt={dt:g}")


def solve(u0: Field, output_times, cfg: SolverConfig, t0: float = 0.0,
          label: str = "") -> Trajectory:
    """Integrate from ``u0`` at time ``t0`` and record every output time.

    ``t0`` itself is recorded as the first snapshot.
    """
    out = np.asarray(sorted(float(t) for t in output_times))
    if out.size and (out[0] < t0 or np.any(np.diff(out) <= 0)):
        raise ValueError("output times must be strictly increasing and >= t0")
    basis = u0.basis
    u = Field(basis, coeffs=u0.coeffs)
    traj = Trajectory(m=cfg.m, s=cfg.s, label=label)
    init_mass = u0.l1()
    traj.record(t0, Field(basis, values=u0.values, coeffs=u0.coeffs), 0.0, cfg.m)
    t = t0
    dt = cfg.dt0
    dissipation = 0.0
    for target in out:
        if target == t0:
            continue
        while t < target:
            h = min(dt, target - t)
            if target - (t + h) < 1e-12 * max(1.0, target):
                h = target - t
            info = StepInfo()
            try:
                new = step(u, h, cfg, info)
            except StepRejected:
                traj.rejections += 1
                dt = h / 2
                if dt < cfg.min_dt:
                    raise TimeStepUnderflow(f"dt fell below {cfg.min_dt:g} at t={t:g}")
                continue
            u = new
            t = target if h == target - t else t + h
            dissipation += info.dissipation
            traj.steps += 1
            traj.peak_clipped_mass = max(traj.peak_clipped_mass, info.clipped_mass)
            if init_mass > 0 and traj.peak_clipped_mass > cfg.max_clip_fraction * init_mass:
                raise PositivityError(
                    f"clipped mass {traj.peak_clipped_mass:.3e} exceeds "
                    f"{cfg.max_clip_fraction:g} of the initial mass at t={t:g}")
            if h >= dt:
                dt = min(cfg.max_dt, cfg.safety * dt * cfg.growth)
        traj.record(t, u, dissipation, cfg.m)
    return traj


def exact_linear(u0: Field, s: float, times) -> Trajectory:
    """The m = 1 solution ``c_k(t) = exp(-mu_k t) c_k(0)``."""
    op = FractionalOperator(s, u0.basis)
    traj = Trajectory(m=1.0, s=s, label="exact-linear")
    c0 = u0.coeffs
    for t in times:
        c = np.exp(-op.mu * t) * c0
        diss = op.mu[0] * c0[0] * (1 - np.exp(-op.mu[0] * t)) / op.mu[0]
        traj.record(t, Field(u0.basis, coeffs=c), diss, 1.0)
    return traj


def green_pairing(u: Field, x0, op: FractionalOperator | None = None, s=None):
    """``int u G(., x0)``, i.e. ``A^{-1} u`` evaluated at the points ``x0``."""
    if op is None:
        op = FractionalOperator(s, u.basis)
    Phi = u.basis.eval_modes(np.atleast_1d(x0) if u.basis.domain.dimension == 1
                             else np.atleast_2d(x0))
    out = Phi @ (u.coeffs / op.mu)
    return out if np.ndim(x0) and np.size(out) > 1 else float(out[0])


def pairing_at_nodes(u: Field, op: FractionalOperator):
    """``A^{-1} u`` at every interior node."""
    return u.basis.inverse(u.coeffs / op.mu)


def benilan_crandall_margin(traj: Trajectory, m: float) -> float:
    """Worst increment of ``u(t, x) t^{1/(m-1)}`` between consecutive snapshots."""
    if m == 1:
        raise InapplicableCheckError("the Benilan-Crandall estimate needs m > 1")
    if len(traj) < 2:
        raise InapplicableCheckError("need at least two snapshots")
    a = 1.0 / (m - 1)
    worst = np.inf
    prev = traj.snapshots[0].values * traj.times[0] ** a
    for t, u in zip(traj.times[1:], traj.snapshots[1:]):
        cur = u.values * t ** a
        worst = min(worst, float(np.min(cur - prev)))
        prev = cur
    return worst
