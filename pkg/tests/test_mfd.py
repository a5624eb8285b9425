import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringlab.mfd import (
    CLOSED_FORM,
    average_flow_approx,
    closed_form_curve,
    gridlock_time_formula,
    gridlock_time_simulated,
    mfd_at,
    mfd_closed_form,
    mfd_numeric,
    stationary_flow,
)
from ringlab.model import DomainError, TriangularFD, default_scenario
from ringlab.poincare import fixed_point_closed
from support import widest_cases

FD = TriangularFD.from_mph()
PI = 0.45


def qs(points):
    return sorted(p.q for p in points)


def test_free_flow_branch():
    (p,) = mfd_closed_form(FD, PI, 0.7, 20.0)
    assert p.q == pytest.approx(PI * FD.v_f * 20.0)
    assert p.pair == (1, 5) and p.source == CLOSED_FORM
    assert p.stability == "asymptotically-stable"


def test_capacity_plateau():
    # the (1,7)/(3,5) branch already coexists here, so pick the plateau
    pts = {p.pair: p for p in mfd_closed_form(FD, PI, 0.7, 50.0)}
    p = pts[(2, 6)]
    assert p.q == pytest.approx(PI * FD.C)
    assert pts[(1, 7)].q < p.q
    assert p.stability == "lyapunov-stable"
    assert (p.k1_star_lo, p.k1_star_hi) == pytest.approx((34.0, 66.0))


def test_congested_branches_above_half():
    # k = 60: the (1,7) and (3,5) states share one flow value
    pts = mfd_closed_form(FD, PI, 0.7, 60.0)
    want = PI * FD.C * (150.0 - 120.0) / (0.7 * 120.0 - 30.0)
    assert {p.pair for p in pts} >= {(1, 7), (3, 5)}
    assert all(p.q == pytest.approx(want) for p in pts if p.pair in ((1, 7), (3, 5)))


def test_gridlock_branch_and_jam():
    pts = mfd_closed_form(FD, PI, 0.7, 100.0)
    assert 0.0 in qs(pts)
    assert any(p.q > 0 and p.stability == "unstable" for p in pts)
    assert qs(mfd_closed_form(FD, PI, 0.7, 150.0)) == [0.0]
    assert qs(mfd_closed_form(FD, PI, 0.3, 0.0)) == [0.0]


def test_half_needs_k1_above_split():
    with pytest.raises(DomainError):
        mfd_closed_form(FD, PI, 0.5, 100.0)
    assert mfd_closed_form(FD, PI, 0.5, 50.0)[0].q == pytest.approx(PI * FD.C)


@given(st.floats(60.5, 149.0), st.floats(0.0, 1.0))
def test_half_continuum_symmetric_in_rings(k, u):
    lo, hi = max(2 * k - 150.0, 0.0), min(2 * k, 150.0)
    k1 = lo + u * (hi - lo)
    a = qs(mfd_closed_form(FD, PI, 0.5, k, k1))
    b = qs(mfd_closed_form(FD, PI, 0.5, k, 2 * k - k1))
    assert a == pytest.approx(b)


def test_closed_form_inputs():
    with pytest.raises(DomainError):
        mfd_closed_form(FD, 0.6, 0.7, 20.0)
    with pytest.raises(DomainError):
        mfd_closed_form(FD, PI, 0.7, 151.0)


@given(st.floats(0.0, 150.0), st.sampled_from([0.3, 0.5, 0.7, 0.85]))
def test_closed_form_flow_bounds(k, xi):
    for p in closed_form_curve(FD, PI, xi, [k]):
        assert 0.0 <= p.q <= PI * FD.C * (1 + 1e-12)


@pytest.mark.parametrize("xi", [0.3, 0.7])
def test_trapezoid_flow_close_to_measured(xi):
    for pair, (_, sc, fp, _) in widest_cases(xi).items():
        q_hat = average_flow_approx(pair, fp.k1_star, sc)
        q, _, ok = stationary_flow(sc, fp.k1_star)
        assert ok or fp.stability.value == "unstable"
        if fp.gridlock:
            assert q_hat == 0.0
        else:
            assert q_hat == pytest.approx(q, rel=2e-2, abs=1e-6 * FD.C)


def test_formula_matches_hand_value():
    sc = default_scenario(k=90.0, xi=0.7, T=30.0, delta=2.0)
    f = gridlock_time_formula(120.0, 0.7, sc.timing.pi, FD, 0.25)
    rate = FD.v_f * 30.0 / 0.25 / 120.0 * (1 - 0.3 / 0.7)
    assert f.T_g == pytest.approx(math.log(30.0 / 1.5) / (sc.timing.pi * rate), rel=1e-12)
    assert gridlock_time_formula(149.0, 0.7, 0.45, FD, 0.25).T_g == 0.0
    with pytest.raises(DomainError):
        gridlock_time_formula(120.0, 0.5, 0.45, FD, 0.25)


def test_formula_monotone_by_finite_difference():
    h = 1e-4
    for xi in (0.6, 0.7, 0.8, 0.9):
        for k1 in (105.0, 120.0, 135.0):
            t = lambda x, z: gridlock_time_formula(z, x, 0.4333, FD, 0.25).T_g  # noqa: E731
            assert (t(xi, k1 + h) - t(xi, k1 - h)) / (2 * h) < 0
            assert (t(xi + h, k1) - t(xi - h, k1)) / (2 * h) < 0


def test_simulated_gridlock_trend_in_start():
    times = [
        gridlock_time_simulated(default_scenario(k=90.0, xi=0.7, T=30.0, delta=2.0, k1_0=f * 150.0)).T_g
        for f in (0.7, 0.8, 0.9)
    ]
    assert times[0] > times[1] > times[2]


def test_no_gridlock_below_critical():
    g = gridlock_time_simulated(default_scenario(k=20.0, xi=0.7, T=30.0, delta=2.0, k1_0=35.0), max_cycles=300)
    assert not g.reached and math.isinf(g.T_g)


def test_numeric_mfd_points():
    sc = default_scenario(xi=0.7, T=5.0, delta=0.25)
    pts = mfd_numeric(sc, [0.0, 20.0, 50.0, 100.0])
    assert pts == sorted(pts, key=lambda p: (p.k, p.q, p.k1_star_lo))
    by_k = {}
    for p in pts:
        by_k.setdefault(p.k, []).append(p.q)
        assert 0.0 <= p.q <= sc.timing.pi * FD.C * (1 + 1e-9)
    assert by_k[0.0] == [0.0]
    assert max(by_k[20.0]) == pytest.approx(sc.timing.pi * FD.v_f * 20.0, rel=2e-2)
    assert max(by_k[50.0]) == pytest.approx(sc.timing.pi * FD.C, rel=1e-6)
    assert 0.0 in by_k[100.0]


def test_numeric_mfd_parallel_identical():
    sc = default_scenario(xi=0.85, T=100.0, delta=0.0)
    ks = [20.0, 39.0, 100.0]
    assert mfd_numeric(sc, ks, parallel=2) == mfd_numeric(sc, ks)


def test_continuum_points_carry_bounds():
    pts = mfd_at(default_scenario(xi=0.85, T=100.0, delta=0.0), 39.0)
    cont = [p for p in pts if p.stability == "continuum"]
    assert cont
    assert all(p.k1_star_hi > p.k1_star_lo for p in cont)
