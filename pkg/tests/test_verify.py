import math

import numpy as np
import pytest

from fracpme import verify as V
from fracpme.constants import evaluate_formulas, fit_empirical, fitted_set
from fracpme.elliptic import EllipticConfig, giant_trajectory, solve_elliptic
from fracpme.errors import InapplicableCheckError
from fracpme.solver import SolverConfig, Trajectory, exact_linear, solve
from fracpme.spectral import DomainSpec, EigenBasis, Field, FractionalOperator

INPUTS = dict(N=1, m=2.0, s=0.5, mu1=math.pi, phi1_sup=math.sqrt(2), diam=1.0,
              c0=0.08, c1=1.4, c2=0.3, c5=1.0)


@pytest.fixture(scope="module")
def basis():
    return EigenBasis(DomainSpec(1, (1.0,), 64), 64)


@pytest.fixture(scope="module")
def bump(basis):
    x = basis.domain.nodes()[:, 0]
    u0 = np.exp(-((x - 0.4) / 0.1) ** 2) * np.sin(np.pi * x) + 0.1 * np.sin(np.pi * x) ** 0.5
    times = list(np.geomspace(1e-3, 1e-1, 7)) + [0.3, 0.6, 1.0, 1.5, 2.0]
    return solve(Field(basis, values=u0), times, SolverConfig(m=2.0, s=0.5, dt0=1e-6,
                                                              max_dt=1e-2), label="bump")


@pytest.fixture(scope="module")
def giant(basis):
    Vp = solve_elliptic(EllipticConfig.giant(2.0), basis, FractionalOperator(0.5, basis)).V
    tr = Trajectory(m=2.0, s=0.5, label="giant")
    for t in (0.05, 0.1, 0.5, 1.0, 2.0):
        tr.record(t, giant_trajectory(Vp, t, 2.0), 0.0, 2.0)
    return Vp, tr


def zero_traj(basis):
    tr = Trajectory(m=2.0, s=0.5, label="zero")
    for t in (0.0, 0.1, 1.0):
        tr.record(t, Field.zeros(basis), 0.0, 2.0)
    return tr


def test_zero_solution_passes(basis):
    tr = zero_traj(basis)
    cs = evaluate_formulas(INPUTS)
    for rep in (V.check_absolute_bound(tr, cs), V.check_boundary_upper(tr, cs),
                V.check_smoothing(tr, cs), V.check_balance_law(tr),
                V.check_benilan_crandall(tr), V.check_green_pairing(tr)):
        assert rep.passed, rep.name
        assert rep.worst_margin >= 0


def test_lower_bound_zero_is_expected_fail(basis):
    tr = zero_traj(basis)
    rep = V.check_lower_bound(tr, evaluate_formulas(INPUTS), 0.0, 0.5)
    assert rep.expected_fail and not rep.passed


def test_linear_run_inapplicable(basis):
    tr = solve(Field(basis, coeffs=np.eye(basis.M)[0]), [0.1, 0.2],
               SolverConfig(m=1.0, s=0.5))
    with pytest.raises(InapplicableCheckError):
        V.check_absolute_bound(tr, evaluate_formulas(INPUTS))
    with pytest.raises(InapplicableCheckError):
        V.check_benilan_crandall(tr)


def test_giant_is_extremal(giant):
    Vp, tr = giant
    fs = fitted_set({"N": 1, "m": 2.0, "s": 0.5},
                    {k: fit_empirical([tr], k) for k in ("K1", "K2", "K2bar", "L1")}, "giant")
    # the separated solution attains the fitted constants, margins vanish
    rep = V.check_boundary_upper(tr, fs)
    assert rep.passed
    assert abs(min(rep.worst_margin, rep.boundary_margin)) < 1e-12
    assert V.check_benilan_crandall(tr).passed
    h0, h1 = V.harnack_ratio(tr, 0.0)
    assert 0 < h0 <= h1 < np.inf
    assert V.empirical_waiting_time(tr, fs["L1"]) == tr.times[0]


def test_bump_checks(bump):
    fs = fitted_set({"N": 1, "m": 2.0, "s": 0.5},
                    {k: fit_empirical([bump], k) for k in ("K1", "K2", "K2bar", "K4", "K5")},
                    "bump")
    assert V.check_balance_law(bump).passed
    assert V.check_benilan_crandall(bump).passed
    assert V.check_green_pairing(bump, 50).passed
    assert V.check_boundary_upper(bump, fs).passed
    assert V.check_smoothing(bump, fs).passed
    slope = V.smoothing_slope(bump, 1e-3, 1e-1)
    assert slope >= -(1 + 1) / 3 - 0.1


def test_fitted_lower_below_upper(bump):
    lo = fit_empirical([bump], "L1", t_min=0.6, interior_cells=2)
    hi = fit_empirical([bump], "K2", t_min=0.6)
    assert 0 < lo <= hi


def test_ordered_contraction_identical(bump, basis):
    rep = V.check_ordered_contraction(bump, bump, evaluate_formulas(INPUTS))
    assert rep.passed
    assert rep.extra["monotone_margin"] >= 0
    lower = solve(bump.snapshots[0] * 0.5, bump.times[1:],
                  SolverConfig(m=2.0, s=0.5, dt0=1e-6, max_dt=1e-2))
    with pytest.raises(InapplicableCheckError):
        V.check_ordered_contraction(lower, bump, evaluate_formulas(INPUTS))


def test_linear_limit(basis):
    c = np.zeros(basis.M)
    c[0], c[1] = 1.0, 0.01
    tr = exact_linear(Field(basis, coeffs=c), 0.5, list(np.linspace(0.1, 3, 30)))
    rep = V.check_linear_limit(tr)
    assert rep.passed
    assert rep.extra["decay_rate"] == pytest.approx(rep.extra["gap"], rel=1e-2)
    c[0] = 0.0
    tr0 = exact_linear(Field(basis, coeffs=c), 0.5, [0.1, 1.0])
    with pytest.raises(InapplicableCheckError, match="degenerate"):
        V.check_linear_limit(tr0)


def test_residual_decay_rate():
    t = np.linspace(0, 2, 10)
    assert V.residual_decay_rate(list(zip(t, np.exp(-3 * t)))) == pytest.approx(3.0)
    assert V.residual_decay_rate([(0.0, 0.0)]) is None


def test_merge_is_deterministic(bump):
    reps = [V.check_balance_law(bump), V.check_benilan_crandall(bump)]
    a = [r.name for r in V.merge_reports(reps)]
    b = [r.name for r in V.merge_reports(reps[::-1])]
    assert a == b == sorted(a)


def test_report_json_shape(bump):
    js = V.check_balance_law(bump).to_json()
    for key in ("name", "anchor", "params", "samples", "worst_margin", "passed", "tolerance",
                "constants", "boundary_margin"):
        assert key in js
