"""Network flow versus network density, closed-form and numeric, plus gridlock times."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

from .atlas import Gammas, Pair, admissible_pairs, coefficients, in_pair_band, pair_interval, xi_regime
from .lqm import average_flow, cycle_map, first_crossing, simulate, step_exact
from .model import PHASE_ONE, DomainError, Scenario, TriangularFD, TurningPolicy, diverge_fluxes
from .poincare import FixedPoint, Stability, is_gridlock, scan_stationary_states

log = logging.getLogger(__name__)

CLOSED_FORM = "closed-form"
NUMERIC = "scan+simulate"
CONTINUUM = "continuum"

STATIONARY_TOL = 1e-9
MAX_SETTLE_CYCLES = 500
CONTINUUM_SAMPLES = 9

_A, _L, _U = Stability.ASYMPTOTIC.value, Stability.LYAPUNOV.value, Stability.UNSTABLE.value
_STABILITY = {
    "above": {(1, 5): _A, (1, 7): _A, (2, 6): _L, (3, 5): _A, (3, 7): _U, (4, 7): _A, (3, 8): _A},
    "below": {(1, 5): _A, (2, 6): _L, (4, 8): _A, (4, 7): _U, (3, 8): _U},
    "half": {(1, 5): _A, (2, 6): _L, (4, 7): _L, (3, 8): _L},
}


@dataclass(frozen=True)
class MFDPoint:
    """One attainable stationary flow at network density ``k``.

    ``k1_star_lo == k1_star_hi`` for isolated states; a continuum sample
    carries the continuum's bounds and ``k1_sample`` the member it was
    measured at.  ``converged`` is False when the simulation never settled
    and ``q`` comes from the last simulated cycle.
    """

    k: float
    q: float
    stability: str
    source: str
    k1_star_lo: float
    k1_star_hi: float
    pair: Optional[Pair] = None
    converged: bool = True
    k1_sample: Optional[float] = None


@dataclass(frozen=True)
class GridlockForecast:
    T_g: float
    sigma: float
    k1_0: float
    predicted_by: str
    reached: bool = True


def _check_pi_xi(pi: float, xi: float):
    if not 0.0 < pi <= 0.5:
        raise DomainError(f"green ratio {pi!r} outside (0, 0.5]")
    xi_regime(xi)


def _small_cycle_state(pair: Pair, k: float, g: Gammas, fd: TriangularFD) -> float:
    """Stationary ``k1`` of ``pair`` as the cycle length shrinks to zero."""
    kj = fd.k_j
    if pair == (1, 7):
        return (kj - 2.0 * k) * g.g5 / (g.g1 - g.g5)
    if pair == (3, 5):
        return (2.0 * k * g.g4 - kj * g.g2) / (g.g4 - g.g2)
    if pair == (3, 8):
        return kj
    if pair == (4, 7):
        return 2.0 * k - kj
    return k


def mfd_closed_form(
    fd: TriangularFD, pi: float, xi: float, k: float, k1: Optional[float] = None
) -> List[MFDPoint]:
    """Every branch value of the short-cycle flow-density relation at ``k``.

    A branch contributes only where its value is non-negative and its
    small-cycle stationary state lies inside its region pair.  At
    ``xi = 0.5`` above ``(k_j + 3 k_c)/4`` the attainable flow depends on
    ``k1``, which must then be supplied.
    """
    _check_pi_xi(pi, xi)
    if not 0.0 <= k <= fd.k_j:
        raise DomainError(f"k={k!r} outside [0, {fd.k_j!r}]")
    kj, kc, C, vf = fd.k_j, fd.k_c, fd.C, fd.v_f
    regime = xi_regime(xi)
    turning = TurningPolicy.symmetric(xi)
    g = Gammas.of(fd, turning, 1.0)
    tags = _STABILITY[regime]
    out: List[MFDPoint] = []

    def emit(q, pair, lo=None, hi=None):
        if q < -1e-12 * C:
            return
        if lo is None:
            lo = hi = _small_cycle_state(pair, k, g, fd)
            if not in_pair_band(pair, lo, k, turning, fd):
                log.debug("branch %s at k=%g: state %g outside its band", pair, k, lo)
                return
        out.append(MFDPoint(k, max(q, 0.0), tags[pair], CLOSED_FORM, lo, hi, pair))

    def plateau():
        band = pair_interval((2, 6), k, turning, fd)
        if band is None:
            log.debug("no capacity band at k=%g", k)
            return
        emit(pi * C, (2, 6), *band)

    def gridlock():
        emit(0.0, (3, 8))
        emit(0.0, (4, 7))

    if k >= kj:
        # the band collapses to one point that no region claims
        return [MFDPoint(k, 0.0, tags[(3, 8)], CLOSED_FORM, kj, kj, (3, 8))]

    if k <= kc:
        emit(pi * vf * k, (1, 5))

    if regime == "above":
        b4 = kj - xi * (kj - kc)
        if kc < k <= b4:
            plateau()
        if ((1.0 - xi) * kj + (1.0 + xi) * kc) / 2.0 < k <= kj / 2.0:
            q = pi * C * (kj - 2.0 * k) / (xi * (kj - kc) - kc)
            emit(q, (1, 7))
            emit(q, (3, 5))
        if b4 < k < kj:
            emit(pi * C * (kj - k) / (xi * (kj - kc)), (3, 7))
        if kj / 2.0 < k:
            gridlock()
    elif regime == "below":
        b = kj - (1.0 - xi) * (kj - kc)
        if kc < k <= b:
            plateau()
        if b < k < kj:
            emit(pi * C * (kj - k) / ((1.0 - xi) * (kj - kc)), (4, 8))
        if kj / 2.0 < k:
            gridlock()
    else:
        split = (kj + 3.0 * kc) / 4.0
        if kc < k <= split:
            plateau()
        if k > split:
            if k1 is None:
                raise DomainError(f"flow at xi=0.5 and k={k!r} depends on k1; supply k1")
            out.extend(_half_continuum(fd, pi, k, k1, turning))
    return out


def _half_continuum(fd, pi, k, k1, turning) -> List[MFDPoint]:
    kj, kc, C = fd.k_j, fd.k_c, fd.C
    lo_b, hi_b = max(2.0 * k - kj, 0.0), min(2.0 * k, kj)
    if not lo_b - 1e-9 * kj <= k1 <= hi_b + 1e-9 * kj:
        raise DomainError(f"k1={k1!r} outside feasible band [{lo_b!r}, {hi_b!r}]")
    tag = Stability.LYAPUNOV.value
    if in_pair_band((2, 6), k1, k, turning, fd):
        return [MFDPoint(k, pi * C, tag, CLOSED_FORM, k1, k1, (2, 6))]
    # the window is stated for the ring-2 congested side; use symmetry otherwise
    pair, x = ((4, 7), k1) if k1 <= k else ((3, 8), 2.0 * k - k1)
    denom = kj / 2.0 - 1.5 * kc
    if denom <= 0.0:
        raise DomainError("k1 window undefined when k_j <= 3 k_c")
    w_lo = max(kc * (kj - 2.0 * k) / denom, 2.0 * k - kj)
    w_hi = max(2.0 * k - (kj + kc) / 2.0, k)
    if w_lo > w_hi:
        log.info("empty k1 window at k=%g", k)
        return []
    slack = 1e-9 * kj
    if not (w_lo - slack <= x <= w_hi + slack and in_pair_band(pair, k1, k, turning, fd)):
        log.debug("k1=%g at k=%g outside the continuum branch", k1, k)
        return []
    q = pi * C * (kj - 2.0 * k + x) / ((kj - kc) / 2.0)
    return [MFDPoint(k, max(q, 0.0), tag, CLOSED_FORM, k1, k1, pair)]


def average_flow_approx(pair: Pair, k1_star: float, scenario: Scenario) -> float:
    """Trapezoid estimate of the stationary flow from the phase-one endpoints."""
    sc = scenario
    flags = admissible_pairs(sc.turning.xi1)
    if pair not in flags:
        raise DomainError(f"pair {pair!r} cannot host stationary states at xi={sc.turning.xi1!r}")
    if flags[pair]:
        return 0.0
    g = Gammas.of(sc.fd, sc.turning, sc.L)
    coeffs = coefficients(pair[0], g, sc.k, sc.fd)
    green = sc.timing.pi1 * sc.timing.T
    k1_end, _ = step_exact(k1_star, coeffs, green)

    def g1(x):
        return diverge_fluxes(x, sc.k, PHASE_ONE, sc.turning, sc.fd).g1

    return sc.timing.pi1 * (g1(k1_star) + g1(k1_end)) / 2.0


def stationary_flow(scenario: Scenario, k1: float, max_cycles: int = MAX_SETTLE_CYCLES):
    """Settle the orbit from ``k1`` and measure flow over one cycle.

    Returns ``(q, k1_settled, converged)``.
    """
    sc = scenario
    tol = STATIONARY_TOL * sc.fd.k_j
    cur, converged = k1, False
    for _ in range(max_cycles):
        nxt = cycle_map(sc, cur)
        if abs(nxt - cur) < tol:
            converged = True
            break
        cur = nxt
    tr = simulate(sc, 1, k1_start=cur)
    return average_flow(tr, sc.timing.T), cur, converged


def _points_for_state(sc: Scenario, fp: FixedPoint) -> List[MFDPoint]:
    if fp.continuum:
        lo, hi = fp.k1_star, fp.k1_hi
        pts = []
        for i in range(CONTINUUM_SAMPLES):
            x = lo + (hi - lo) * i / (CONTINUUM_SAMPLES - 1)
            q, _, ok = stationary_flow(sc, x)
            # only the jammed members of a continuum carry no flow
            if is_gridlock(sc, x):
                q = 0.0
            pts.append(MFDPoint(sc.k, q, CONTINUUM, NUMERIC, lo, hi, None, ok, x))
        return pts
    q, _, ok = stationary_flow(sc, fp.k1_star)
    if fp.gridlock:
        q = 0.0
    if not ok:
        log.warning("k=%g: orbit from %g did not settle", sc.k, fp.k1_star)
    return [MFDPoint(sc.k, q, fp.stability.value, NUMERIC, fp.k1_star, fp.k1_star, None, ok, fp.k1_star)]


def _band_start(sc: Scenario, k: float) -> Scenario:
    lo, hi = max(2.0 * k - sc.fd.k_j, 0.0), min(2.0 * k, sc.fd.k_j)
    return sc.with_(k=k, k1_0=min(max(k, lo), hi))


def mfd_at(template: Scenario, k: float, dk: Optional[float] = None, tol: Optional[float] = None) -> List[MFDPoint]:
    sc = _band_start(template, k)
    pts: List[MFDPoint] = []
    for fp in scan_stationary_states(sc, dk=dk, tol=tol):
        pts.extend(_points_for_state(sc, fp))
    return pts


def _mfd_at_args(args):
    return mfd_at(*args)


def mfd_numeric(
    template: Scenario,
    k_grid: Sequence[float],
    dk: Optional[float] = None,
    tol: Optional[float] = None,
    parallel: int = 0,
) -> List[MFDPoint]:
    """Numeric flow-density relation over ``k_grid``, sorted by ``(k, q)``.

    ``parallel`` > 1 spreads densities over that many worker processes.
    """
    ks = [float(k) for k in k_grid]
    for k in ks:
        if not 0.0 <= k <= template.fd.k_j:
            raise DomainError(f"k={k!r} outside [0, {template.fd.k_j!r}]")
    jobs = [(template, k, dk, tol) for k in ks]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunks = list(pool.map(_mfd_at_args, jobs))
    else:
        chunks = [_mfd_at_args(j) for j in jobs]
    pts = [p for chunk in chunks for p in chunk]
    pts.sort(key=lambda p: (p.k, p.q, p.k1_star_lo))
    return pts


def gridlock_time_formula(
    k1_0: float, xi: float, pi: float, fd: TriangularFD, L: float, sigma: float = 0.01
) -> GridlockForecast:
    """Time for ring 1 to come within ``sigma k_j`` of jam under the gridlock map."""
    if not 0.0 < sigma < 1.0:
        raise DomainError(f"sigma={sigma!r} outside (0, 1)")
    if xi_regime(xi) != "above":
        raise DomainError("gridlock time formula needs xi > 0.5")
    if not 0.0 < pi <= 0.5:
        raise DomainError(f"green ratio {pi!r} outside (0, 0.5]")
    g = Gammas.of(fd, TurningPolicy.symmetric(xi), L)
    gap = fd.k_j - k1_0
    if gap <= sigma * fd.k_j:
        return GridlockForecast(0.0, sigma, k1_0, "formula")
    T_g = math.log(gap / (sigma * fd.k_j)) / (pi * (g.g3 - g.g2))
    return GridlockForecast(T_g, sigma, k1_0, "formula")


def gridlock_time_simulated(
    scenario: Scenario, sigma: float = 0.01, max_cycles: int = 10_000
) -> GridlockForecast:
    """First time either ring reaches ``(1 - sigma) k_j`` in the exact simulation."""
    if not 0.0 < sigma < 1.0:
        raise DomainError(f"sigma={sigma!r} outside (0, 1)")
    t = first_crossing(scenario, (1.0 - sigma) * scenario.fd.k_j, max_cycles)
    if t is None:
        return GridlockForecast(math.inf, sigma, scenario.k1_0, "simulation", reached=False)
    return GridlockForecast(t, sigma, scenario.k1_0, "simulation")


def closed_form_curve(
    fd: TriangularFD, pi: float, xi: float, ks: Iterable[float], k1_samples: int = CONTINUUM_SAMPLES
) -> List[MFDPoint]:
    """Closed-form points over ``ks``; a ``k1``-dependent band is sampled evenly."""
    out = []
    for k in ks:
        try:
            out.extend(mfd_closed_form(fd, pi, xi, k))
        except DomainError:
            lo, hi = max(2.0 * k - fd.k_j, 0.0), min(2.0 * k, fd.k_j)
            for i in range(k1_samples):
                out.extend(mfd_closed_form(fd, pi, xi, k, lo + (hi - lo) * i / (k1_samples - 1)))
    return out
