"""Stationary states as fixed points of the one-cycle return map.

Short cycles admit closed-form affine return maps per region pair; long
cycles are handled numerically by a grid scan with secant refinement of
``phi(k1) = k1 - P k1``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

from .atlas import Gammas, Pair, admissible_pairs, xi_regime
from .lqm import cycle_map, poincare_numeric, simulate
from .model import LOST, DomainError, Scenario

log = logging.getLogger(__name__)

LYAPUNOV_BAND = 1e-6


class Stability(str, enum.Enum):
    ASYMPTOTIC = "asymptotically-stable"
    LYAPUNOV = "lyapunov-stable"
    UNSTABLE = "unstable"


class NotInRegion(ValueError):
    """A closed-form fixed point lies outside the band of its own region pair."""


def classify_multiplier(a: float, tol: float = LYAPUNOV_BAND) -> Stability:
    if abs(a - 1.0) <= tol:
        return Stability.LYAPUNOV
    return Stability.ASYMPTOTIC if a < 1.0 else Stability.UNSTABLE


@dataclass(frozen=True)
class PoincareAffine:
    """``P k1 = slope * k1 + intercept``; ``slope = exp(exponent)``."""

    slope: float
    intercept: float
    exponent: float
    pair: Pair
    short_cycle: bool

    def __call__(self, k1: float) -> float:
        return self.slope * k1 + self.intercept


@dataclass(frozen=True)
class FixedPoint:
    k1_star: float
    pair: Union[Pair, str]
    multiplier: float
    stability: Stability
    gridlock: bool
    k1_hi: Optional[float] = None
    residual: float = 0.0

    @property
    def continuum(self) -> bool:
        return self.k1_hi is not None


def _require_homogeneous(sc: Scenario):
    if not sc.turning.is_symmetric:
        raise DomainError("closed-form maps need equal retaining ratios on both rings")
    if not sc.timing.symmetric:
        raise DomainError("closed-form maps need equal green ratios on both phases")


def _affine_parts(pair: Pair, sc: Scenario) -> Tuple[float, float]:
    """``(exponent, intercept)`` of the closed-form map."""
    g = Gammas.of(sc.fd, sc.turning, sc.L)
    a = sc.timing.pi * sc.timing.T
    k, kj = sc.k, sc.fd.k_j
    e = math.exp
    regime = xi_regime(sc.turning.xi1)
    if regime == "half" and pair in ((2, 6), (4, 7), (3, 8)):
        return 0.0, 0.0
    if pair == (1, 5):
        return -2.0 * g.g1 * a, 2.0 * k * (1.0 - e(-g.g1 * a))
    if pair == (2, 6):
        return 0.0, 0.0
    if pair == (1, 7):
        return (g.g5 - g.g1) * a, (kj - 2.0 * k) * (e(g.g5 * a) - 1.0)
    if pair == (4, 7):
        c = (g.g5 - g.g3) * a
        return c, (kj - 2.0 * k) * (e(c) - 1.0)
    if pair == (3, 5):
        return (g.g2 - g.g4) * a, (
            kj * (1.0 - e(g.g2 * a)) * e(-g.g4 * a) + 2.0 * k * (1.0 - e(-g.g4 * a))
        )
    if pair == (3, 7):
        x = e(g.g2 * a)
        return 2.0 * g.g2 * a, kj * (2.0 * x - x * x - 1.0) - 2.0 * k * (x - 1.0)
    if pair == (3, 8):
        c = (g.g2 - g.g3) * a
        return c, kj * (1.0 - e(c))
    if pair == (4, 8):
        y = e(-g.g3 * a)
        return -2.0 * g.g3 * a, kj * (y * y - 2.0 * y + 1.0) - 2.0 * k * (y * y - y)
    raise DomainError(f"no closed-form map for pair {pair!r}")


def short_cycle_check(scenario: Scenario, k1_start: float) -> Tuple[bool, Optional[Pair]]:
    """Whether one cycle from ``k1_start`` stays in a single region per green phase."""
    tr = simulate(scenario, 1, k1_start=k1_start)
    seen = {(1, 0): set(), (0, 1): set()}
    for p in tr.pieces:
        if p.deltas != LOST and p.t1 > p.t0:
            seen[p.deltas].add(p.region)
    ones, twos = seen[(1, 0)], seen[(0, 1)]
    if len(ones) == 1 and len(twos) == 1:
        return True, (next(iter(ones)), next(iter(twos)))
    return False, None


def closed_form_map(pair: Pair, scenario: Scenario) -> PoincareAffine:
    _require_homogeneous(scenario)
    if pair not in admissible_pairs(scenario.turning.xi1):
        raise DomainError(f"pair {pair!r} cannot host stationary states at xi={scenario.turning.xi1!r}")
    c, b = _affine_parts(pair, scenario)
    ok, seen = short_cycle_check(scenario, scenario.k1_0)
    return PoincareAffine(math.exp(c), b, c, pair, ok and seen == pair)


def _closed_fixed_value(pair: Pair, sc: Scenario) -> float:
    g = Gammas.of(sc.fd, sc.turning, sc.L)
    a = sc.timing.pi * sc.timing.T
    k, kj = sc.k, sc.fd.k_j
    e = math.exp
    if xi_regime(sc.turning.xi1) == "half" and pair != (1, 5):
        return sc.k1_0
    if pair == (1, 5):
        return 2.0 * k / (1.0 + e(-g.g1 * a))
    if pair == (1, 7):
        return (kj - 2.0 * k) * (e(g.g5 * a) - 1.0) / (1.0 - e((g.g5 - g.g1) * a))
    if pair == (2, 6):
        return sc.k1_0
    if pair == (4, 7):
        return 2.0 * k - kj
    if pair == (3, 5):
        num = 2.0 * k * (1.0 - e(-g.g4 * a)) - kj * (e(g.g2 * a) - 1.0) * e(-g.g4 * a)
        return num / (1.0 - e((g.g2 - g.g4) * a))
    if pair == (3, 7):
        x = e(g.g2 * a)
        return (2.0 * k + kj * (x - 1.0)) / (x + 1.0)
    if pair == (3, 8):
        return kj
    if pair == (4, 8):
        y = e(-g.g3 * a)
        return (kj * (1.0 - y) + 2.0 * k * y) / (1.0 + y)
    raise DomainError(f"no closed-form fixed point for pair {pair!r}")


def is_gridlock(sc: Scenario, k1: float) -> bool:
    """Whether either ring sits at jam density."""
    jam = sc.fd.k_j * (1.0 - 1e-9)
    return k1 >= jam or 2.0 * sc.k - k1 >= jam


def fixed_point_closed(pair: Pair, scenario: Scenario) -> FixedPoint:
    """Closed-form stationary state of ``pair``.

    Identity maps return ``scenario.k1_0`` as their fixed point.  Raises
    :class:`NotInRegion` if the one-cycle orbit from the fixed point leaves
    the pair's regions.
    """
    m = closed_form_map(pair, scenario)
    k1s = _closed_fixed_value(pair, scenario)
    lo, hi = scenario.band
    slack = 1e-9 * scenario.fd.k_j
    if not lo - slack <= k1s <= hi + slack:
        raise NotInRegion(f"fixed point {k1s!r} of {pair} outside feasible band [{lo!r}, {hi!r}]")
    k1s = min(max(k1s, lo), hi)
    ok, seen = short_cycle_check(scenario, k1s)
    if not ok or seen != pair:
        raise NotInRegion(f"orbit from fixed point {k1s!r} of {pair} visits {seen or 'several regions'}")
    return FixedPoint(
        k1_star=k1s,
        pair=pair,
        multiplier=m.slope,
        stability=classify_multiplier(m.slope),
        gridlock=is_gridlock(scenario, k1s),
        residual=abs(m(k1s) - k1s),
    )


def phi(scenario: Scenario, k1: float) -> float:
    return k1 - poincare_numeric(scenario, k1)


def multiplier_numeric(scenario: Scenario, k1: float, step: Optional[float] = None) -> float:
    """Finite-difference slope of the return map at ``k1``."""
    h = 1e-4 * scenario.fd.k_j if step is None else step
    lo, hi = scenario.band
    up, down = k1 + h <= hi, k1 - h >= lo
    P = lambda x: cycle_map(scenario, x)  # noqa: E731
    if up and down:
        return (P(k1 + h) - P(k1 - h)) / (2.0 * h)
    if up:
        return (P(k1 + h) - P(k1)) / h
    if down:
        return (P(k1) - P(k1 - h)) / h
    return 1.0


def _numeric_point(sc: Scenario, k1: float, residual: float) -> FixedPoint:
    a = multiplier_numeric(sc, k1)
    return FixedPoint(
        k1_star=k1,
        pair="numeric",
        multiplier=a,
        stability=classify_multiplier(a),
        gridlock=is_gridlock(sc, k1),
        residual=residual,
    )


def _phi_clamped(sc: Scenario, x: float) -> Tuple[float, float]:
    lo, hi = sc.band
    x = min(max(x, lo), hi)
    return x, x - cycle_map(sc, x)


def _zero_tol(sc: Scenario) -> float:
    return 1e-11 * sc.fd.k_j


def secant_solve(
    scenario: Scenario,
    k1_a: float,
    k1_b: float,
    tol: Optional[float] = None,
    n_max: int = 100,
    max_restarts: int = 5,
) -> Optional[FixedPoint]:
    """Secant iteration on ``phi``; returns None if ``n_max`` is exhausted.

    Iterates are clamped to the feasible band.  A flat secant (equal phi
    values at distinct points) restarts from a jittered older seed.
    """
    sc = scenario
    if k1_a == k1_b:
        raise DomainError("secant seeds must differ")
    tol = 1e-6 * sc.fd.k_j if tol is None else tol
    zero = _zero_tol(sc)
    x0, f0 = _phi_clamped(sc, k1_a)
    if abs(f0) <= zero:
        return _numeric_point(sc, x0, abs(f0))
    x1, f1 = _phi_clamped(sc, k1_b)
    restarts = 0
    for _ in range(n_max):
        if abs(f1) <= zero:
            return _numeric_point(sc, x1, abs(f1))
        if f1 == f0:
            if restarts >= max_restarts:
                return None
            restarts += 1
            jitter = (1e-3 * sc.fd.k_j) * restarts * (1 if restarts % 2 else -1)
            x0, f0 = _phi_clamped(sc, x1 + jitter)
            continue
        x2, f2 = _phi_clamped(sc, x1 - f1 * (x1 - x0) / (f1 - f0))
        step = abs(x2 - x1)
        x0, f0, x1, f1 = x1, f1, x2, f2
        if step < tol:
            # a clamped iterate can stall on the band edge without being a root
            return _numeric_point(sc, x1, abs(f1)) if abs(f1) <= tol else None
    return None


def _refine_edge(sc: Scenario, inside: float, outside: float, zero: float, iters: int = 40) -> float:
    """Bisect for the end of a flat zero segment of phi."""
    for _ in range(iters):
        mid = 0.5 * (inside + outside)
        if abs(mid - cycle_map(sc, mid)) <= zero:
            inside = mid
        else:
            outside = mid
    return inside


def scan_seeds(scenario: Scenario, dk: float) -> List[float]:
    lo, hi = scenario.band
    if hi - lo <= 0.0:
        return [lo]
    n = int(math.floor((hi - lo) / dk + 1e-9))
    seeds = [lo + i * dk for i in range(n + 1)]
    if hi - seeds[-1] > 1e-9 * dk:
        seeds.append(hi)
    return seeds


def scan_stationary_states(
    scenario: Scenario,
    dk: Optional[float] = None,
    tol: Optional[float] = None,
    n_max: int = 100,
) -> List[FixedPoint]:
    """Brute-force grid scan for every stationary state at the scenario's k.

    Each grid seed is either a root itself or the start of a secant run
    seeded with ``(k1, P k1)``.  Runs of consecutive zero seeds are merged
    into one continuum state.  The result is sorted by ``k1_star``.
    """
    sc = scenario
    kj = sc.fd.k_j
    dk = kj / 400.0 if dk is None else dk
    tol = 1e-6 * kj if tol is None else tol
    if dk <= 0.0:
        raise DomainError("scan step must be positive")
    zero = _zero_tol(sc)
    seeds = scan_seeds(sc, dk)
    is_root = []
    roots: List[FixedPoint] = []
    skipped = 0
    for s in seeds:
        ps = cycle_map(sc, s)
        f = s - ps
        if abs(f) <= zero:
            is_root.append(True)
            continue
        is_root.append(False)
        if ps == s:
            continue
        fp = secant_solve(sc, s, ps, tol=tol, n_max=n_max)
        if fp is None:
            skipped += 1
        else:
            roots.append(fp)
    if skipped:
        log.info("k=%g: %d seeds did not converge", sc.k, skipped)

    intervals = []
    i = 0
    while i < len(seeds):
        if not is_root[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(seeds) and is_root[j + 1]:
            j += 1
        if j > i:
            lo = seeds[i] if i == 0 else _refine_edge(sc, seeds[i], seeds[i - 1], zero)
            hi = seeds[j] if j == len(seeds) - 1 else _refine_edge(sc, seeds[j], seeds[j + 1], zero)
            intervals.append((lo, hi))
        else:
            roots.append(_numeric_point(sc, seeds[i], 0.0))
        i = j + 1

    radius = 10.0 * tol
    # a flat segment narrower than the grid shows up as exact isolated roots
    b_lo, b_hi = sc.band
    for r in roots:
        if r.residual > zero:
            continue
        x = r.k1_star
        lo = x if x - dk < b_lo else _refine_edge(sc, x, x - dk, zero)
        hi = x if x + dk > b_hi else _refine_edge(sc, x, x + dk, zero)
        if hi - lo > radius:
            intervals.append((lo, hi))
    intervals.sort()
    merged: List[Tuple[float, float]] = []
    for lo, hi in intervals:
        if merged and lo <= merged[-1][1] + radius:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    out: List[FixedPoint] = [
        FixedPoint(
            k1_star=lo,
            pair="numeric",
            multiplier=1.0,
            stability=Stability.LYAPUNOV,
            gridlock=is_gridlock(sc, lo) and is_gridlock(sc, hi),
            k1_hi=hi,
        )
        for lo, hi in merged
    ]
    intervals = merged

    roots.sort(key=lambda p: p.k1_star)
    kept: List[FixedPoint] = []
    for r in roots:
        if any(lo - radius <= r.k1_star <= hi + radius for lo, hi in intervals):
            continue
        if kept and r.k1_star - kept[-1].k1_star <= radius:
            # prefer the better-converged representative
            if r.residual < kept[-1].residual:
                kept[-1] = r
            continue
        kept.append(r)
    out.extend(kept)
    out.sort(key=lambda p: p.k1_star)
    return out
