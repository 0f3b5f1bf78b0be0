import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from fracpme.errors import BasisMismatchError, UnsupportedDomainError
from fracpme.spectral import (DomainSpec, EigenBasis, Field, FractionalOperator, apply_power,
                              build_basis, norm_H, norm_Hstar, phi1_distance_ratio,
                              phi1_profile, transform)

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def line():
    d = DomainSpec(1, (1.0,), 64)
    return d, EigenBasis(d, 64)


@pytest.fixture(scope="module")
def square():
    d = DomainSpec(2, (1.0,), 16)
    return d, EigenBasis(d, 256)


def test_domain_validation():
    with pytest.raises(UnsupportedDomainError):
        DomainSpec(3, (1.0, 1.0, 1.0), 32)
    with pytest.raises(UnsupportedDomainError):
        DomainSpec(1, (0.0,), 32)
    with pytest.raises(UnsupportedDomainError):
        DomainSpec(1, (1.0,), 8)
    with pytest.raises(UnsupportedDomainError):
        DomainSpec(1, (1.0, 2.0), 32)
    d = DomainSpec(2, (2.0,), 16)
    assert d.side_lengths == (2.0, 2.0)
    assert d.nodes().shape == (256, 2)


def test_boundary_layer_mask_counts():
    d1 = DomainSpec(1, (1.0,), 32)
    assert d1.boundary_layer_mask(2).sum() == 4
    d2 = DomainSpec(2, (1.0,), 16)
    # 12 x 12 interior block survives
    assert (~d2.boundary_layer_mask(2)).sum() == 144


def test_eigenpairs_1d():
    d = DomainSpec(1, (1.0,), 32)
    b = build_basis(d, 3)
    np.testing.assert_allclose(b.eigenvalues, [np.pi ** 2, 4 * np.pi ** 2, 9 * np.pi ** 2])
    x = np.array([0.1, 0.37, 0.5])
    for k in range(3):
        np.testing.assert_allclose(b.eval_mode(k, x), SQRT2 * np.sin((k + 1) * np.pi * x),
                                   atol=1e-15)


def test_eigenpairs_2d_tie_break():
    d = DomainSpec(2, (1.0,), 16)
    b = build_basis(d, 3)
    np.testing.assert_allclose(b.eigenvalues, np.array([2, 5, 5]) * np.pi ** 2)
    assert b.indices.tolist() == [[1, 1], [1, 2], [2, 1]]


def test_too_many_modes():
    d = DomainSpec(1, (1.0,), 16)
    with pytest.raises(ValueError):
        EigenBasis(d, 17)


def test_gram_identity(line, square):
    for _, b in (line, square):
        G = b.gram_matrix()
        assert np.max(np.abs(G - np.eye(b.M))) < 1e-10


def test_eigenvalues_nondecreasing(square):
    _, b = square
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert b.eigenvalues[0] < b.eigenvalues[1]


def test_phi1_positive(line, square):
    for _, b in (line, square):
        assert np.all(phi1_profile(b).values > 0)


def test_mode_integrals_quadrature():
    d = DomainSpec(1, (2.0,), 32)
    b = EigenBasis(d, 5)
    for k in range(5):
        ref = quad(lambda x: math.sqrt(2 / 2.0) * math.sin((k + 1) * math.pi * x / 2.0), 0, 2)[0]
        assert b.mode_integrals[k] == pytest.approx(ref, abs=1e-12)


def test_transform_single_modes(line):
    _, b = line
    x = b.domain.nodes()[:, 0]
    f = Field(b, values=SQRT2 * np.sin(2 * np.pi * x))
    c = transform(f, "forward").coeffs
    expect = np.zeros(b.M)
    expect[1] = 1.0
    np.testing.assert_allclose(c, expect, atol=1e-13)
    e1 = np.zeros(b.M)
    e1[0] = 1.0
    g = transform(Field(b, coeffs=e1), "inverse")
    np.testing.assert_allclose(g.values, SQRT2 * np.sin(np.pi * x), atol=1e-14)
    assert g.synchronized


def test_transform_errors(line):
    _, b = line
    other = EigenBasis(DomainSpec(1, (1.0,), 64), 64)
    f = Field(b, values=np.ones(64))
    with pytest.raises(BasisMismatchError):
        transform(f, "forward", other)
    with pytest.raises(ValueError):
        transform(f, "sideways")
    with pytest.raises(BasisMismatchError):
        f + Field(other, values=np.ones(64))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=64, max_size=64))
def test_round_trip_1d(vals):
    d = DomainSpec(1, (1.0,), 64)
    b = _basis_cache(d)
    v = np.array(vals)
    back = b.inverse(b.forward(v))
    assert np.max(np.abs(back - v)) <= 1e-12 * max(1.0, np.max(np.abs(v)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_round_trip_2d(seed):
    d = DomainSpec(2, (1.0, 2.0), 16)
    b = _basis_cache(d)
    c = np.random.default_rng(seed).normal(size=b.M)
    assert np.max(np.abs(b.forward(b.inverse(c)) - c)) < 1e-12


_BASES = {}


def _basis_cache(d):
    if d not in _BASES:
        _BASES[d] = EigenBasis(d, int(np.prod(d.shape)))
    return _BASES[d]


def test_apply_power_examples(line):
    _, b = line
    phi = phi1_profile(b)
    op1 = FractionalOperator(1.0, b)
    np.testing.assert_allclose(apply_power(op1, phi, 1).values, np.pi ** 2 * phi.values,
                               rtol=1e-12)
    op_half = FractionalOperator(0.5, b)
    np.testing.assert_allclose(apply_power(op_half, phi, -1).values, phi.values / np.pi,
                               rtol=1e-12)
    with pytest.raises(ValueError):
        FractionalOperator(0.0, b)
    with pytest.raises(ValueError):
        FractionalOperator(1.5, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 1.0), st.floats(-2.0, 2.0))
def test_power_composition(seed, s, p):
    d = DomainSpec(1, (1.0,), 64)
    b = _basis_cache(d)
    op = FractionalOperator(s, b)
    f = Field(b, coeffs=np.random.default_rng(seed).normal(size=b.M))
    g = apply_power(op, apply_power(op, f, p), -p)
    assert np.max(np.abs(g.coeffs - f.coeffs)) <= 1e-12 * np.max(np.abs(f.coeffs))


def test_norms(line):
    _, b = line
    op = FractionalOperator(1.0, b)
    phi = phi1_profile(b)
    assert norm_H(phi, op) == pytest.approx(np.pi)
    assert norm_Hstar(phi, op) == pytest.approx(1 / np.pi)
    z = Field.zeros(b)
    assert norm_H(z, op) == 0.0 and norm_Hstar(z, op) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 1.0))
def test_norm_cauchy_schwarz(seed, s):
    d = DomainSpec(1, (1.0,), 64)
    b = _basis_cache(d)
    op = FractionalOperator(s, b)
    f = Field(b, coeffs=np.random.default_rng(seed).normal(size=b.M))
    l2sq = float(np.sum(f.coeffs ** 2))
    assert norm_H(f, op) * norm_Hstar(f, op) >= l2sq * (1 - 1e-12)


def test_phi1_distance_ratio():
    d = DomainSpec(1, (1.0,), 255)
    b = EigenBasis(d, 8)
    lo, hi = phi1_distance_ratio(b)
    # hi approaches pi sqrt(2) near the boundary, lo is attained at x = 1/2
    assert hi == pytest.approx(np.pi * SQRT2, rel=1e-4)
    assert lo == pytest.approx(2 * SQRT2, rel=1e-12)
    lo2, hi2 = phi1_distance_ratio(EigenBasis(DomainSpec(2, (1.0,), 32), 4))
    assert 0 < lo2 <= hi2 < np.inf


def test_field_arithmetic(line):
    _, b = line
    f = phi1_profile(b)
    g = 2.0 * f - f
    np.testing.assert_allclose(g.values, f.values)
    assert f.check_nonnegative(0.0)
    assert f.integral(f.values) == pytest.approx(1.0)
