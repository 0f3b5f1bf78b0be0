import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracpme.elliptic import EllipticConfig, solve_elliptic
from fracpme.errors import AdmissibilityError, EmptySampleError
from fracpme.green import (GreenEvaluator, bootstrap_upper, bq_regime, envelope_Bq,
                           fit_envelopes, green_eval, green_mass, green_q_integral,
                           grid_pairs, laplacian_green_1d, measure_c2, nu_sequence)
from fracpme.spectral import DomainSpec, EigenBasis, Field, FractionalOperator

from oracles import C0_LAPLACE_1D, GREEN_HALF, laplace_green


@pytest.fixture(scope="module")
def big_basis():
    d = DomainSpec(1, (1.0,), 2048)
    return EigenBasis(d, 2048)


@pytest.fixture(scope="module")
def small():
    d = DomainSpec(1, (1.0,), 128)
    return d, EigenBasis(d, 128)


def test_laplace_closed_form(big_basis):
    g = GreenEvaluator(FractionalOperator(1.0, big_basis))
    assert green_eval(g, 0.25, 0.5) == pytest.approx(0.125, abs=1e-3)
    assert laplacian_green_1d(0.25, 0.5) == 0.125


def test_half_power_value(big_basis):
    g = GreenEvaluator(FractionalOperator(0.5, big_basis))
    # the truncated sum approaches the limit at rate 1/M
    v = green_eval(g, 0.5, 0.25)
    assert v == pytest.approx(GREEN_HALF, abs=1e-3)
    coarse = GreenEvaluator(FractionalOperator(0.5, big_basis), M=1024)
    assert abs(v - GREEN_HALF) <= abs(green_eval(coarse, 0.5, 0.25) - GREEN_HALF)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.sampled_from([0.25, 0.5, 1.0]))
def test_symmetry_exact(x, y, s):
    b = _basis()
    g = GreenEvaluator(FractionalOperator(s, b))
    assert green_eval(g, x, y) == green_eval(g, y, x)


_B = {}


def _basis():
    if "b" not in _B:
        _B["b"] = EigenBasis(DomainSpec(1, (1.0,), 256), 256)
    return _B["b"]


def test_diagonal_metadata(small):
    _, b = small
    g = GreenEvaluator(FractionalOperator(0.5, b))
    meta = green_eval(g, 0.3, 0.3, with_meta=True)
    assert meta["truncation_sensitive"] is True
    assert green_eval(g, 0.3, 0.6, with_meta=True)["truncation_sensitive"] is False
    assert meta["modes"] == 128 and meta["mollification"] == 0.0


def test_reproducing_property(small):
    _, b = small
    g = GreenEvaluator(FractionalOperator(0.75, b))
    for k in (0, 3, 10):
        c = np.zeros(b.M)
        c[k] = 1.0
        f = Field(b, coeffs=c)
        np.testing.assert_allclose(g.apply(f), f.values / g.op.mu[k], atol=1e-12)


def test_offdiagonal_positivity(small):
    d, b = small
    for s in (0.25, 0.5, 1.0):
        g = GreenEvaluator(FractionalOperator(s, b))
        x, y = grid_pairs(d, 4, True)
        far = np.abs(x - y)[:, 0] >= 2 * d.spacing[0]
        assert np.min(g.pairs(x[far], y[far])) > -1e-3


def test_envelope_fit_laplace():
    d = DomainSpec(1, (1.0,), 512)
    g = GreenEvaluator(FractionalOperator(1.0, EigenBasis(d, 512)))
    env = fit_envelopes(g, grid_pairs(d, 4, True))
    # the infimum is approached but never undercut, up to truncation
    assert env.c0 >= C0_LAPLACE_1D * (1 - 1e-3)
    assert env.c0 <= C0_LAPLACE_1D * 1.2
    assert env.c1 > 0 and np.isfinite(env.c1)


def test_envelope_fit_holds_at_samples(small):
    d, b = small
    g = GreenEvaluator(FractionalOperator(0.5, b))
    x, y = grid_pairs(d, 4, True)
    env = fit_envelopes(g, (x, y))
    r = np.abs(x - y)[:, 0]
    keep = r >= env.fitted_on["exclusion_radius"]
    G = g.pairs(x[keep], y[keep])
    px, py = b.eval_mode(0, x[keep]), b.eval_mode(0, y[keep])
    rr = r[keep]
    upper = env.c1 * rr ** (2 * 0.5 - 1) * np.minimum(px / rr, 1) * np.minimum(py / rr, 1)
    assert np.all(G <= upper * (1 + 1e-12))
    assert np.all(G >= env.c0 * px * py * (1 - 1e-12))
    assert env.fitted_on["excluded"] == 0


def test_envelope_exclusion_and_empty(small):
    d, b = small
    g = GreenEvaluator(FractionalOperator(0.5, b))
    with pytest.raises(EmptySampleError):
        fit_envelopes(g, np.empty((0, 2)))
    with pytest.raises(EmptySampleError):
        fit_envelopes(g, (np.array([0.5]), np.array([0.5001])))
    env = fit_envelopes(g, (np.array([0.5, 0.2]), np.array([0.5001, 0.7])))
    assert env.fitted_on["excluded"] == 1 and env.fitted_on["pairs"] == 1


def test_q_integral_laplace(small):
    _, b = small
    g = GreenEvaluator(FractionalOperator(1.0, b))
    assert green_q_integral(g, [0.5], 1.0) == pytest.approx(1 / 8, abs=1e-4)
    # the mass identity int G(., x0) = x0 (1 - x0) / 2 through the mode integrals
    x0 = np.array([0.2, 0.5, 0.9])
    np.testing.assert_allclose(green_mass(g, x0), x0 * (1 - x0) / 2, atol=1e-5)
    # q = 2 against the polynomial closed form
    ref = (0.3 ** 2 * 0.7 ** 2) / 3  # int_0^1 G(x, 0.3)^2 dx = x0^2 (1-x0)^2 / 3
    assert green_q_integral(g, [0.3], 2.0) == pytest.approx(ref, rel=1e-3)
    assert laplace_green(0.3, 0.5) == pytest.approx(0.15)


def test_q_integral_singular_case(small):
    _, b = small
    # N = 1, s = 1/2: logarithmic singularity, every q > 0 admissible
    g = GreenEvaluator(FractionalOperator(0.5, b))
    v = green_q_integral(g, [0.5], 1.5)
    assert np.isfinite(v) and v > 0
    # s = 1/4: the bound N / (N - 2s) = 2
    g = GreenEvaluator(FractionalOperator(0.25, b))
    with pytest.raises(AdmissibilityError):
        green_q_integral(g, [0.5], 2.5)
    assert np.isfinite(green_q_integral(g, [0.5], 1.5))


def test_q_integral_2d():
    d = DomainSpec(2, (1.0,), 32)
    g = GreenEvaluator(FractionalOperator(1.0, EigenBasis(d, 1024)))
    v = green_q_integral(g, [0.5, 0.5], 1.0, n_cells=16)
    assert v == pytest.approx(float(green_mass(g, np.array([[0.5, 0.5]]))[0]), rel=1e-2)


def test_envelope_Bq_regimes():
    assert envelope_Bq(0.3, 0.5, 0.5, 1) == pytest.approx(0.3)
    # N=1, s=1/2: the log regime sits at q = 1
    assert bq_regime(1.0, 0.5, 1) == "log"
    assert envelope_Bq(1.0, 1.0, 0.5, 1) == 0.0
    assert envelope_Bq(0.2, 1.0, 0.5, 1) == pytest.approx(0.2 * abs(math.log(0.2)))
    # N=1, s=1/4, q=1 is in the power regime with exponent 1/2
    assert bq_regime(1.0, 0.25, 1) == "power"
    assert envelope_Bq(0.25, 1.0, 0.25, 1) == pytest.approx(0.5)
    # s = 1 in 1D: no upper split at all
    assert bq_regime(3.0, 1.0, 1) == "linear"
    with pytest.raises(AdmissibilityError):
        envelope_Bq(0.5, 2.5, 0.25, 1)


def test_nu_sequence():
    seq = nu_sequence(0.25, 2.0)
    assert seq[:3] == pytest.approx([0.25, 0.3125, 0.390625])
    assert seq[-1] == 1.0
    assert all(a <= b for a, b in zip(seq, seq[1:]))
    assert nu_sequence(0.75, 2.0) == [1.0]


def test_lower_pairing_bound(small):
    d, b = small
    g = GreenEvaluator(FractionalOperator(0.5, b))
    env = fit_envelopes(g, grid_pairs(d, 2, True))
    x = d.nodes()[:, 0]
    f = Field(b, values=np.exp(-((x - 0.7) / 0.05) ** 2))
    pair = g.apply(f)
    phi = b.phi1_grid
    wm = b.integrate(f.values * phi)
    inner = ~d.boundary_layer_mask(2)
    assert np.all(pair[inner] >= env.c0 * phi[inner] * wm * (1 - 1e-3))


def test_bootstrap_giant(small):
    _, b = small
    op = FractionalOperator(0.5, b)
    V = solve_elliptic(EllipticConfig.giant(2.0), b, op).V
    g = GreenEvaluator(op)
    res = bootstrap_upper(g, V, 1.0, 2.0)
    assert res.hypothesis_ok
    assert res.conclusion_margin >= 0
    zero = bootstrap_upper(g, Field.zeros(b), 1.0, 2.0)
    assert zero.c5 == 0.0 and zero.conclusion_margin >= 0


def test_measure_c2_laplace(small):
    _, b = small
    g = GreenEvaluator(FractionalOperator(1.0, b))
    # sup of x0 (1 - x0) / 2 is 1/8 at the midpoint
    assert measure_c2(g, 1.0, stride=1) == pytest.approx(1 / 8, abs=1e-4)
