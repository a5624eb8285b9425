import math

import numpy as np
import pytest

from ringlab.lqm import cycle_map
from ringlab.model import DomainError, Scenario, SignalTiming, TurningPolicy, default_scenario
from ringlab.poincare import (
    NotInRegion,
    Stability,
    classify_multiplier,
    closed_form_map,
    fixed_point_closed,
    multiplier_numeric,
    phi,
    scan_seeds,
    scan_stationary_states,
    secant_solve,
)
from support import EXPECTED_STABILITY, TAGS, closed_cases, fit_map, two_starts, widest_cases


def test_classify_multiplier():
    assert classify_multiplier(0.9) is Stability.ASYMPTOTIC
    assert classify_multiplier(1.0 + 1e-9) is Stability.LYAPUNOV
    assert classify_multiplier(1.01) is Stability.UNSTABLE


@pytest.mark.parametrize("xi", [0.3, 0.5, 0.7])
def test_closed_maps_match_two_point_fit(xi):
    cases = widest_cases(xi)
    assert set(cases) == set(EXPECTED_STABILITY[xi])
    for pair, (_, sc, _, band) in cases.items():
        a, b = two_starts(pair, sc, band)
        m = closed_form_map(pair, sc)
        slope, intercept = fit_map(sc, a, b)
        assert slope == pytest.approx(m.slope, rel=1e-6)
        assert abs(intercept - m.intercept) <= 1e-6 * max(abs(m.intercept), abs(m(a)))


def test_half_identity_maps():
    sc = default_scenario(k=75.0, xi=0.5, T=5.0, delta=0.25, k1_0=120.0)
    m = closed_form_map((3, 8), sc)
    assert (m.slope, m.intercept) == (1.0, 0.0)
    assert m.short_cycle


def test_closed_map_domain_errors():
    sc = default_scenario(k=20.0, xi=0.7, T=5.0, delta=0.25)
    with pytest.raises(DomainError):
        closed_form_map((4, 8), sc)
    odd = Scenario(sc.fd, sc.L, sc.timing, TurningPolicy(0.6, 0.7), 20.0, 20.0)
    with pytest.raises(DomainError):
        closed_form_map((1, 5), odd)
    lopsided = sc.with_(timing=SignalTiming(5.0, 0.25, pi1=0.3))
    with pytest.raises(DomainError):
        closed_form_map((1, 5), lopsided)


def test_free_fixed_point_value():
    sc = default_scenario(k=15.0, xi=0.7, T=5.0, delta=0.25)
    fp = fixed_point_closed((1, 5), sc)
    g1 = 0.3 * sc.fd.v_f / sc.L
    a = sc.timing.pi * sc.timing.T
    assert fp.k1_star == pytest.approx(30.0 / (1.0 + math.exp(-g1 * a)), rel=1e-14)
    assert fp.stability is Stability.ASYMPTOTIC
    assert not fp.gridlock


def test_out_of_region_fixed_point_rejected():
    # above the critical density the free-flow state is not reachable
    sc = default_scenario(k=40.0, xi=0.7, T=5.0, delta=0.25)
    with pytest.raises(NotInRegion):
        fixed_point_closed((1, 5), sc)


@pytest.mark.parametrize("xi", [0.3, 0.5, 0.7])
def test_closed_fixed_points_are_stationary(xi):
    for pair, sc, fp, _ in closed_cases(xi, ks=np.linspace(2.0, 148.0, 38)):
        assert abs(phi(sc, fp.k1_star)) < 1e-8 * sc.fd.k_j
        assert fp.stability.value == TAGS[EXPECTED_STABILITY[xi][pair]]


@pytest.mark.parametrize("xi", [0.3, 0.7])
def test_multiplier_matches_finite_difference(xi):
    for pair, (_, sc, fp, band) in widest_cases(xi).items():
        lo, hi = band
        h = 1e-4 * sc.fd.k_j
        if fp.k1_star - h < lo or fp.k1_star + h > hi:
            continue
        assert multiplier_numeric(sc, fp.k1_star) == pytest.approx(fp.multiplier, rel=1e-5)


def test_secant_against_bisection():
    sc = default_scenario(k=100.0, xi=0.85, T=100.0, delta=0.0)
    fp = secant_solve(sc, 95.0, 105.0, tol=1e-10)
    a, b = 95.0, 110.0
    fa = phi(sc, a)
    assert fa * phi(sc, b) < 0
    for _ in range(80):
        m = 0.5 * (a + b)
        if phi(sc, m) * fa > 0:
            a, fa = m, phi(sc, m)
        else:
            b = m
    assert fp is not None
    assert fp.k1_star == pytest.approx(0.5 * (a + b), abs=1e-6)
    assert fp.stability is Stability.UNSTABLE


def test_secant_flat_seed_returns_immediately():
    sc = default_scenario(k=39.0, xi=0.85, T=100.0, delta=0.0)
    fp = secant_solve(sc, 40.0, 41.0)
    assert fp.k1_star == 40.0 and fp.residual <= 1e-11 * 150.0


def test_secant_restarts_on_equal_phi(monkeypatch):
    # phi is 1 below k1 = 5 and falls linearly to a root at 10
    import ringlab.poincare as pc

    def fake_map(sc, x):
        return x - (1.0 if x < 5.0 else (10.0 - x) / 5.0)

    monkeypatch.setattr(pc, "cycle_map", fake_map)
    sc = default_scenario(k=20.0)
    fp = pc.secant_solve(sc, 4.9, 4.95)
    assert fp is not None
    assert fp.k1_star == pytest.approx(10.0, abs=1e-9)
    assert pc.secant_solve(sc, 1.0, 1.5, max_restarts=1) is None


def test_secant_rejects_equal_seeds():
    with pytest.raises(DomainError):
        secant_solve(default_scenario(), 20.0, 20.0)


def test_scan_seeds_cover_band():
    sc = default_scenario(k=100.0)
    seeds = scan_seeds(sc, 7.0)
    assert seeds[0] == 50.0 and seeds[-1] == 150.0
    assert np.all(np.diff(seeds) <= 7.0 + 1e-9)


def test_scan_catalogue_long_cycle():
    base = dict(xi=0.85, T=100.0, delta=0.0)
    one = scan_stationary_states(default_scenario(k=20.0, **base))
    assert len(one) == 1 and not one[0].continuum
    many = scan_stationary_states(default_scenario(k=100.0, **base))
    assert len(many) >= 2
    assert any(fp.gridlock for fp in many)
    assert any(fp.stability is Stability.UNSTABLE and not fp.gridlock for fp in many)
    flat = scan_stationary_states(default_scenario(k=39.0, **base))
    assert any(fp.continuum and fp.k1_hi - fp.k1_star > 1.0 for fp in flat)


def test_scan_finds_every_root_on_fine_grid():
    # every sign change of phi on a fine grid is reported
    sc = default_scenario(k=100.0, xi=0.85, T=100.0, delta=0.0)
    found = scan_stationary_states(sc)
    xs = np.linspace(*sc.band, 3001)
    f = np.array([phi(sc, x) for x in xs])
    for i in np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]:
        mid = 0.5 * (xs[i] + xs[i + 1])
        assert any(
            (fp.k1_star - 0.1 <= mid <= (fp.k1_hi or fp.k1_star) + 0.1) for fp in found
        ), mid


def test_scan_is_deterministic():
    sc = default_scenario(k=65.0, xi=0.55, T=60.0, delta=4.0)
    assert scan_stationary_states(sc) == scan_stationary_states(sc)


def test_stable_state_attracts():
    sc = default_scenario(k=20.0, xi=0.85, T=100.0, delta=0.0)
    (fp,) = scan_stationary_states(sc)
    x = 5.0
    for _ in range(400):
        x = cycle_map(sc, x)
    assert x == pytest.approx(fp.k1_star, abs=1e-6)
