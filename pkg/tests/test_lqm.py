import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringlab.atlas import AffineCoefficients
from ringlab.lqm import (
    average_flow,
    cycle_map,
    euler_reference,
    first_crossing,
    poincare_numeric,
    simulate,
    step_exact,
)
from ringlab.model import LOST, DomainError, default_scenario


def test_step_exact_constant_rate():
    k, tau = step_exact(10.0, AffineCoefficients(0.0, 2.0), 3.0)
    assert (k, tau) == (16.0, None)
    k, tau = step_exact(10.0, AffineCoefficients(0.0, 2.0), 3.0, hi=12.0)
    assert (k, tau) == (12.0, 1.0)


def test_step_exact_exponential():
    # dk/dt = -k: decays to k e^-t, reaches 5 at ln 2
    k, tau = step_exact(10.0, AffineCoefficients(-1.0, 0.0), 1.0)
    assert k == pytest.approx(10.0 * math.exp(-1.0), rel=1e-15)
    k, tau = step_exact(10.0, AffineCoefficients(-1.0, 0.0), 1.0, lo=5.0)
    assert k == 5.0 and tau == pytest.approx(math.log(2.0), rel=1e-15)


def test_step_exact_equilibrium_never_reached():
    # the orbit approaches 4 asymptotically and can never cross it
    k, tau = step_exact(10.0, AffineCoefficients(-1.0, 4.0), 50.0, lo=4.0)
    assert tau is None and k == pytest.approx(4.0)


def test_free_flow_cycle_closed_form():
    # one region per phase: k1 relaxes towards k
    sc = default_scenario(k=20.0, xi=0.7, T=60.0, delta=2.0, k1_0=25.0)
    tr = simulate(sc, 1)
    a = sc.timing.pi * sc.timing.T
    g1 = 0.3 * sc.fd.v_f / sc.L
    mid = 25.0 * math.exp(-g1 * a)
    want = 2 * 20.0 - (2 * 20.0 - mid) * math.exp(-g1 * a)
    assert tr.cycle_k1[-1] == pytest.approx(want, rel=1e-12)
    assert set(tr.region.tolist()) == {1, 5, 9, 10}


def test_cycle_samples_match_return_map():
    sc = default_scenario(k=55.0, xi=0.85, T=100.0, delta=0.0, k1_0=70.0)
    tr = simulate(sc, 6)
    x = sc.k1_0
    for want in tr.cycle_k1[1:]:
        x = cycle_map(sc, x)
        assert want == x


def test_green_pieces_monotone_and_lost_frozen():
    sc = default_scenario(k=70.0, xi=0.7, T=60.0, delta=4.0, k1_0=90.0)
    tr = simulate(sc, 5)
    for p in tr.pieces:
        ts = np.linspace(p.t0, p.t1, 7)
        ks = np.array([p.k1_at(t) for t in ts])
        d = np.diff(ks)
        assert np.all(d >= -1e-12) or np.all(d <= 1e-12)
        if p.deltas == LOST:
            assert np.ptp(ks) == 0.0


def test_trajectory_continuous_across_pieces():
    sc = default_scenario(k=70.0, xi=0.7, T=60.0, delta=4.0, k1_0=90.0)
    tr = simulate(sc, 5)
    for a, b in zip(tr.pieces[:-1], tr.pieces[1:]):
        assert a.t1 == pytest.approx(b.t0)
        assert a.k1_1 == pytest.approx(b.k1_0, abs=1e-9)


@given(
    st.floats(1.0, 149.0),
    st.floats(0.05, 0.95),
    st.floats(0.0, 1.0),
    st.floats(10.0, 120.0),
    st.floats(0.0, 0.2),
)
def test_conserved_and_in_band(k, xi, u, T, dfrac):
    lo, hi = max(2 * k - 150.0, 0.0), min(2 * k, 150.0)
    sc = default_scenario(k=k, xi=xi, T=T, delta=dfrac * T, k1_0=lo + u * (hi - lo))
    tr = simulate(sc, 3)
    k2 = np.array([tr.k2_at(t) for t in tr.t])
    assert np.max(np.abs(tr.k1 + k2 - 2 * k)) <= 1e-12 * 150.0
    assert np.all(tr.k1 >= lo - 1e-9) and np.all(tr.k1 <= hi + 1e-9)
    q = average_flow(tr, tr.t_end)
    assert -1e-12 <= q <= sc.fd.C * (1 + 1e-12)


def test_average_flow_free_state():
    # stationary free flow carries pi v_f k on average, up to the cycle shape
    sc = default_scenario(k=20.0, xi=0.7, T=5.0, delta=0.25)
    tr = simulate(sc, 200)
    q = average_flow(tr, tr.t_end)
    assert q == pytest.approx(sc.timing.pi * sc.fd.v_f * 20.0, rel=2e-2)


def test_average_flow_needs_full_cycle():
    sc = default_scenario()
    with pytest.raises(DomainError):
        average_flow(simulate(sc, 1), 10.0)


def test_outflow_integrals_against_quadrature():
    sc = default_scenario(k=70.0, xi=0.7, T=60.0, delta=4.0, k1_0=90.0)
    tr = simulate(sc, 2)
    from ringlab.model import diverge_fluxes, indicators

    ts = np.linspace(0.0, 120.0, 240001)
    mid = 0.5 * (ts[1:] + ts[:-1])
    g = np.array(
        [
            (lambda f: (f.g1, f.g2))(diverge_fluxes(tr.k1_at(t), sc.k, indicators(sc.timing, t), sc.turning, sc.fd))
            for t in mid
        ]
    )
    dt = ts[1] - ts[0]
    i1, i2 = tr.outflow_integrals(0.0, 120.0)
    assert i1 == pytest.approx(g[:, 0].sum() * dt, rel=1e-4)
    assert i2 == pytest.approx(g[:, 1].sum() * dt, rel=1e-4)


def test_poincare_domain():
    sc = default_scenario(k=20.0)
    with pytest.raises(DomainError):
        poincare_numeric(sc, 41.0)
    assert poincare_numeric(sc, 20.0) == cycle_map(sc, 20.0)


def _euler_gap(sc, dt, cycles=20):
    ref = euler_reference(sc, dt, cycles * sc.timing.T)
    tr = simulate(sc, cycles)
    return float(np.max(np.abs(tr.k1_at_many(ref.t) - ref.k1)))


def test_euler_oracle_first_order():
    sc = default_scenario(k=70.0, xi=0.7, T=60.0, delta=4.0, k1_0=90.0)
    g1 = _euler_gap(sc, 0.02, cycles=5)
    g2 = _euler_gap(sc, 0.01, cycles=5)
    assert g2 < 1e-3 * 150.0
    assert 1.6 < g1 / g2 < 2.4


def test_near_degenerate_green():
    # almost all of the cycle is lost time: the orbit barely moves
    sc = default_scenario(k=50.0, xi=0.7, T=60.0, delta=30.0 - 1e-6, k1_0=70.0)
    assert cycle_map(sc, 70.0) == pytest.approx(70.0, abs=1e-4)
    assert _euler_gap(sc, 0.01, cycles=3) < 1e-3


def test_first_crossing_matches_dense_sampling():
    sc = default_scenario(k=90.0, xi=0.7, T=30.0, delta=2.0, k1_0=120.0)
    thr = 0.99 * 150.0
    t = first_crossing(sc, thr, 1000)
    assert t is not None
    tr = simulate(sc, int(t // 30.0) + 1)
    assert max(tr.k1_at(t), tr.k2_at(t)) == pytest.approx(thr, abs=1e-9)
    before = np.linspace(0.0, t, 4001)[:-1]
    assert np.max([max(tr.k1_at(x), tr.k2_at(x)) for x in before]) < thr


def test_first_crossing_immediate_and_never():
    sc = default_scenario(k=20.0, xi=0.7, T=30.0, delta=2.0)
    assert first_crossing(sc, 20.0, 10) == 0.0
    assert first_crossing(sc, 140.0, 50) is None
