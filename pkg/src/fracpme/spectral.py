"""Dirichlet eigenbases on intervals and rectangles, sine transforms and
fractional powers of the Dirichlet Laplacian.

Grids are uniform and interior-node: on a side of length ``L`` with ``n``
points the nodes are ``x_j = j L / (n + 1)``, ``j = 1..n``, and the field is
zero on the boundary.  With this layout the rectangle rule is the trapezoid
rule, and the sampled sine modes ``1..n`` are exactly orthonormal under it,
so forward/inverse transforms are DST-I pairs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

from .errors import BasisMismatchError, UnsupportedDomainError


@dataclass(frozen=True)
class DomainSpec:
    dimension: int
    side_lengths: tuple
    grid_points_per_side: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise UnsupportedDomainError(
                f"dimension must be 1 or 2, got {self.dimension}")
        sides = tuple(float(v) for v in np.atleast_1d(self.side_lengths))
        if len(sides) == 1 and self.dimension == 2:
            sides = sides * 2
        if len(sides) != self.dimension:
            raise UnsupportedDomainError(
                f"expected {self.dimension} side lengths, got {len(sides)}")
        if any(not np.isfinite(v) or v <= 0 for v in sides):
            raise UnsupportedDomainError(f"side lengths must be positive: {sides}")
        if int(self.grid_points_per_side) < 16:
            raise UnsupportedDomainError("grid_points_per_side must be >= 16")
        object.__setattr__(self, "side_lengths", sides)
        object.__setattr__(self, "grid_points_per_side", int(self.grid_points_per_side))

    @property
    def shape(self):
        return (self.grid_points_per_side,) * self.dimension

    @property
    def spacing(self):
        n = self.grid_points_per_side
        return tuple(L / (n + 1) for L in self.side_lengths)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def diameter(self):
        return float(np.hypot.reduce(self.side_lengths)) if self.dimension == 2 \
            else self.side_lengths[0]

    @property
    def volume(self):
        return float(np.prod(self.side_lengths))

    def axes(self):
        n = self.grid_points_per_side
        return [np.arange(1, n + 1) * h for h in self.spacing]

    def nodes(self):
        """Interior nodes as an ``(n_nodes, dimension)`` array in C order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def distance_to_boundary(self, points=None):
        pts = self.nodes() if points is None else np.atleast_2d(points)
        d = np.full(pts.shape[0], np.inf)
        for i, L in enumerate(self.side_lengths):
            d = np.minimum(d, np.minimum(pts[:, i], L - pts[:, i]))
        return d

    def boundary_layer_mask(self, cells=2):
        """True at nodes within ``cells`` grid spacings of the boundary."""
        n = self.grid_points_per_side
        idx = np.arange(1, n + 1)
        near = (idx <= cells) | (idx > n - cells)
        if self.dimension == 1:
            return near
        return (near[:, None] | near[None, :]).ravel()


class EigenBasis:
    """The first ``M`` Dirichlet eigenpairs of ``-Laplacian`` on a domain.

    Modes are sorted by eigenvalue; equal eigenvalues are ordered
    lexicographically by their index tuple.
    """

    def __init__(self, domain: DomainSpec, M: int):
        if M < 1:
            raise ValueError("M must be >= 1")
        n = domain.grid_points_per_side
        if domain.dimension == 1:
            if M > n:
                raise ValueError(f"M={M} exceeds the {n} resolvable modes")
            indices = np.arange(1, M + 1)[:, None]
        else:
            if M > n * n:
                raise ValueError(f"M={M} exceeds the {n * n} resolvable modes")
            L1, L2 = domain.side_lengths
            kmax = min(n, int(np.ceil(np.sqrt(M))) + 1)
            # enlarge the candidate box until the M-th eigenvalue is safely inside
            while True:
                cand = sorted(
                    itertools.product(range(1, kmax + 1), repeat=2),
                    key=lambda kl: ((kl[0] / L1) ** 2 + (kl[1] / L2) ** 2, kl))
                if len(cand) >= M:
                    lam_M = (cand[M - 1][0] / L1) ** 2 + (cand[M - 1][1] / L2) ** 2
                    if kmax >= n or lam_M < (kmax / max(L1, L2)) ** 2:
                        break
                kmax = min(n, 2 * kmax)
            indices = np.array(cand[:M], dtype=int)
        self.domain = domain
        self.M = int(M)
        self.indices = np.asarray(indices, dtype=int)
        # same float expression as the sort key, so ties stay ordered
        key = sum((self.indices[:, i] / L) ** 2 for i, L in enumerate(domain.side_lengths))
        self.eigenvalues = np.pi ** 2 * key
        self._norm = float(np.prod(np.sqrt(2.0 / np.asarray(domain.side_lengths))))

    def __repr__(self):
        return f"EigenBasis(dimension={self.domain.dimension}, M={self.M})"

    # -- point evaluation -------------------------------------------------
    def eval_modes(self, points, modes=None):
        """Matrix ``Phi[p, k] = Phi_k(points[p])``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.domain.dimension == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
            pts = pts.T
        idx = self.indices if modes is None else self.indices[modes]
        out = np.full((pts.shape[0], idx.shape[0]), self._norm)
        for i, L in enumerate(self.domain.side_lengths):
            out *= np.sin(np.pi * np.outer(pts[:, i], idx[:, i]) / L)
        return out

    def eval_mode(self, k, points):
        """Evaluate the single (0-based) mode ``k``."""
        return self.eval_modes(points, modes=[k])[:, 0]

    @cached_property
    def grid_matrix(self):
        """``(n_nodes, M)`` samples of every mode at the interior nodes."""
        return self.eval_modes(self.domain.nodes())

    @cached_property
    def phi1_grid(self):
        """First eigenfunction at the interior nodes."""
        return self.eval_mode(0, self.domain.nodes())

    @cached_property
    def mode_integrals(self):
        """Exact integrals of each mode over the domain."""
        out = np.full(self.M, self._norm)
        for i, L in enumerate(self.domain.side_lengths):
            k = self.indices[:, i]
            out *= L * (1.0 - np.cos(np.pi * k)) / (np.pi * k)
        return out

    # -- transforms ------------------------------------------------------
    def _full_index(self):
        return tuple(self.indices[:, i] - 1 for i in range(self.domain.dimension))

    def forward(self, values):
        """Quadrature coefficients ``int g Phi_k`` for grid samples ``g``."""
        g = np.asarray(values, dtype=float).reshape(self.domain.shape)
        full = scipy.fft.dstn(g, type=1, axes=tuple(range(g.ndim)))
        scale = self.domain.cell_volume * self._norm / 2 ** self.domain.dimension
        return full[self._full_index()] * scale

    def inverse(self, coeffs):
        """Grid samples of ``sum_k c_k Phi_k``."""
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (self.M,):
            raise ValueError(f"expected {self.M} coefficients, got shape {c.shape}")
        full = np.zeros(self.domain.shape)
        full[self._full_index()] = c
        vals = scipy.fft.dstn(full, type=1, axes=tuple(range(full.ndim)))
        return (vals * (self._norm / 2 ** self.domain.dimension)).ravel()

    def integrate(self, values):
        return float(np.sum(values) * self.domain.cell_volume)

    def gram_matrix(self):
        S = self.grid_matrix
        return S.T @ S * self.domain.cell_volume


def build_basis(domain: DomainSpec, M: int) -> EigenBasis:
    return EigenBasis(domain, M)


class Field:
    """A function on the domain held as grid samples and spectral coefficients.

    Either representation may be authoritative; the other is computed on first
    access and cached.  Grid values supplied by the caller are kept verbatim
    (they need not be band-limited); the coefficients are their projection.
    """

    __slots__ = ("basis", "_values", "_coeffs", "nonnegative")

    def __init__(self, basis, values=None, coeffs=None, nonnegative=False):
        if values is None and coeffs is None:
            raise ValueError("Field needs values or coefficients")
        self.basis = basis
        self._values = None if values is None else \
            np.asarray(values, dtype=float).ravel().copy()
        self._coeffs = None if coeffs is None else np.asarray(coeffs, dtype=float).copy()
        self.nonnegative = nonnegative

    @classmethod
    def from_values(cls, basis, values, **kw):
        return cls(basis, values=values, **kw)

    @classmethod
    def from_coeffs(cls, basis, coeffs, **kw):
        return cls(basis, coeffs=coeffs, **kw)

    @classmethod
    def from_function(cls, basis, func, **kw):
        pts = basis.domain.nodes()
        return cls(basis, values=func(*pts.T), **kw)

    @classmethod
    def zeros(cls, basis):
        return cls(basis, values=np.zeros(int(np.prod(basis.domain.shape))),
                   coeffs=np.zeros(basis.M))

    @property
    def values(self):
        if self._values is None:
            self._values = self.basis.inverse(self._coeffs)
        return self._values

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = self.basis.forward(self._values)
        return self._coeffs

    @property
    def synchronized(self):
        return self._values is not None and self._coeffs is not None

    def sync(self):
        self.values, self.coeffs  # noqa: B018 - forces both caches
        return self

    def grid(self):
        return self.values.reshape(self.basis.domain.shape)

    def sup(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def l1(self):
        return self.basis.integrate(np.abs(self.values))

    def integral(self, weight=None):
        v = self.values if weight is None else self.values * weight
        return self.basis.integrate(v)

    def check_nonnegative(self, clip_tolerance):
        return float(self.values.min()) >= -clip_tolerance

    def __add__(self, other):
        _same_basis(self.basis, other.basis)
        return Field(self.basis, values=self.values + other.values)

    def __sub__(self, other):
        _same_basis(self.basis, other.basis)
        return Field(self.basis, values=self.values - other.values)

    def __mul__(self, scalar):
        c = None if self._coeffs is None else self._coeffs * scalar
        v = None if self._values is None else self._values * scalar
        return Field(self.basis, values=v, coeffs=c)

    __rmul__ = __mul__


def _same_basis(a, b):
    if a is not b:
        raise BasisMismatchError("fields live on different eigenbases")


def transform(field: Field, direction: str, basis: EigenBasis | None = None) -> Field:
    """Return a synchronized copy of ``field``.

    ``forward`` treats the grid values as authoritative and recomputes the
    coefficients; ``inverse`` does the opposite.
    """
    if basis is not None:
        _same_basis(field.basis, basis)
    b = field.basis
    if direction == "forward":
        v = field.values
        return Field(b, values=v, coeffs=b.forward(v), nonnegative=field.nonnegative)
    if direction == "inverse":
        c = field.coeffs
        return Field(b, values=b.inverse(c), coeffs=c, nonnegative=field.nonnegative)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")


@dataclass(frozen=True)
class FractionalOperator:
    s: float
    basis: EigenBasis

    def __post_init__(self):
        if not 0 < self.s <= 1:
            raise ValueError(f"s must lie in (0, 1], got {self.s}")

    @cached_property
    def mu(self):
        """Operator eigenvalues ``lambda_k ** s``."""
        return self.basis.eigenvalues ** self.s

    def multiplier(self, p):
        return self.mu ** p


def apply_power(op: FractionalOperator, field: Field, p: float) -> Field:
    _same_basis(op.basis, field.basis)
    return Field(field.basis, coeffs=field.coeffs * op.multiplier(p))


def norm_H(field: Field, op: FractionalOperator) -> float:
    _same_basis(op.basis, field.basis)
    return float(np.sqrt(np.sum(op.mu * field.coeffs ** 2)))


def norm_Hstar(field: Field, op: FractionalOperator) -> float:
    _same_basis(op.basis, field.basis)
    return float(np.sqrt(np.sum(field.coeffs ** 2 / op.mu)))


def phi1_profile(basis: EigenBasis) -> Field:
    c = np.zeros(basis.M)
    c[0] = 1.0
    return Field(basis, coeffs=c, nonnegative=True).sync()


def phi1_distance_ratio(basis: EigenBasis):
    """Min and max over interior nodes of ``Phi_1(x) / min(dist(x, boundary), 1)``."""
    phi = phi1_profile(basis).values
    d = np.minimum(basis.domain.distance_to_boundary(), 1.0)
    r = phi / d
    return float(r.min()), float(r.max())

