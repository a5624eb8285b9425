"""Exact event-driven integration of the switched affine system.

Within one region segment the ring-1 density follows the closed-form
solution of ``dk1/dt = A k1 + B``; segment exits are found analytically, so
the simulator has no step size.  A forward-Euler integrator of the raw
right-hand side is kept alongside as an independent oracle.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .atlas import AffineCoefficients, Segment, classify, segments
from .model import (
    LOST,
    PHASE_ONE,
    PHASE_TWO,
    DomainError,
    Scenario,
    diverge_fluxes,
    indicators,
    rhs,
)

MAX_CROSSINGS_PER_CYCLE = 64
SAMPLES_PER_GREEN = 10


class ChatteringError(RuntimeError):
    """The orbit crossed more region boundaries in one cycle than allowed."""


def _flow(k1: float, A: float, B: float, tau: float) -> float:
    if A == 0.0:
        return k1 + B * tau
    return k1 + (A * k1 + B) * math.expm1(A * tau) / A


def _time_to(k1: float, A: float, B: float, target: float) -> Optional[float]:
    """Time for the orbit from ``k1`` to reach ``target``, or None if never."""
    r0 = A * k1 + B
    if r0 == 0.0 or (target - k1) * r0 <= 0.0:
        return None
    if A == 0.0:
        return (target - k1) / B
    ratio = (A * target + B) / r0
    if ratio <= 0.0:
        return None
    return math.log(ratio) / A


def step_exact(
    k1: float,
    coeffs: AffineCoefficients,
    dt: float,
    lo: float = -math.inf,
    hi: float = math.inf,
) -> Tuple[float, Optional[float]]:
    """Advance ``k1`` by up to ``dt`` inside the region interval ``[lo, hi]``.

    Returns ``(k1_new, exit_time)``.  ``exit_time`` is None when the orbit
    stays inside for the whole step; otherwise ``k1_new`` is the boundary
    value reached at ``exit_time``.
    """
    A, B = coeffs.A, coeffs.B
    r0 = A * k1 + B
    target = hi if r0 > 0.0 else lo
    tau = _time_to(k1, A, B, target) if math.isfinite(target) else None
    if tau is not None and tau < dt:
        return target, tau
    return _flow(k1, A, B, dt), None


@dataclass(frozen=True)
class Piece:
    """One analytic stretch of the orbit: a region over ``[t0, t1]``."""

    t0: float
    t1: float
    k1_0: float
    A: float
    B: float
    region: int
    deltas: Tuple[int, int]

    def k1_at(self, t: float) -> float:
        return _flow(self.k1_0, self.A, self.B, t - self.t0)

    @property
    def k1_1(self) -> float:
        return self.k1_at(self.t1)


@lru_cache(maxsize=1024)
def _tables(sc: Scenario):
    return {
        PHASE_ONE: segments(sc.k, PHASE_ONE, sc.turning, sc.fd, sc.L),
        PHASE_TWO: segments(sc.k, PHASE_TWO, sc.turning, sc.fd, sc.L),
    }


def _locate(sc: Scenario, deltas, table: Sequence[Segment], highs, k1: float) -> int:
    n = len(table)
    i = min(bisect.bisect_left(highs, k1), n - 1)
    if i + 1 < n and k1 == table[i].hi:
        # on a shared boundary: enter the side the orbit moves into
        r = table[i].rate(k1)
        if r > 0.0:
            return i + 1
        if r == 0.0 and classify(k1, sc.k, deltas, sc.turning, sc.fd) == table[i + 1].region:
            return i + 1
    return i


def _green(sc, deltas, table, k1, t0, duration, pieces, crossings):
    """Integrate one green interval; returns ``(k1, crossings)``."""
    highs = [s.hi for s in table]
    band_lo, band_hi = table[0].lo, table[-1].hi
    i = _locate(sc, deltas, table, highs, k1)
    remaining, t = duration, t0
    while True:
        s = table[i]
        new, tau = step_exact(k1, AffineCoefficients(s.A, s.B), remaining, s.lo, s.hi)
        if tau is None:
            if pieces is not None:
                pieces.append(Piece(t, t0 + duration, k1, s.A, s.B, s.region, deltas))
            return min(max(new, band_lo), band_hi), crossings
        if pieces is not None and tau > 0.0:
            pieces.append(Piece(t, t + tau, k1, s.A, s.B, s.region, deltas))
        k1, t, remaining = new, t + tau, remaining - tau
        crossings += 1
        if crossings > MAX_CROSSINGS_PER_CYCLE:
            raise ChatteringError(
                f"more than {MAX_CROSSINGS_PER_CYCLE} region crossings in one cycle "
                f"(t={t!r}, k1={k1!r}, k={sc.k!r})"
            )
        i += 1 if s.rate(k1) > 0.0 else -1
        if not 0 <= i < len(table):
            if pieces is not None:
                pieces.append(Piece(t, t0 + duration, k1, 0.0, 0.0, s.region, deltas))
            return k1, crossings


def _cycle(sc: Scenario, k1: float, t0: float, pieces: Optional[list]) -> float:
    tables = _tables(sc)
    crossings = 0
    t = t0
    for deltas, previous, duration in sc.timing.phase_plan():
        if deltas == LOST:
            if pieces is not None and duration > 0.0:
                region = 9 if previous == PHASE_ONE else 10
                pieces.append(Piece(t, t + duration, k1, 0.0, 0.0, region, LOST))
        elif duration > 0.0:
            k1, crossings = _green(sc, deltas, tables[deltas], k1, t, duration, pieces, crossings)
        t += duration
    return k1


def cycle_map(sc: Scenario, k1: float) -> float:
    """One-cycle return map from phase-one onset; no trajectory is kept."""
    return _cycle(sc, k1, 0.0, None)


@dataclass
class Trajectory:
    """Sampled exact orbit.  ``pieces`` allow evaluation at any time."""

    scenario: Scenario
    pieces: List[Piece]
    t: np.ndarray
    k1: np.ndarray
    region: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    event_times: List[float] = field(default_factory=list)
    cycle_k1: List[float] = field(default_factory=list)

    def __post_init__(self):
        self._starts = [p.t0 for p in self.pieces]

    @property
    def t_end(self) -> float:
        return self.pieces[-1].t1 if self.pieces else 0.0

    def piece_at(self, t: float) -> Piece:
        i = max(bisect.bisect_right(self._starts, t) - 1, 0)
        return self.pieces[i]

    def k1_at(self, t: float) -> float:
        return self.piece_at(t).k1_at(t)

    def k1_at_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        starts = np.array(self._starts)
        i = np.clip(np.searchsorted(starts, ts, side="right") - 1, 0, len(starts) - 1)
        k0 = np.array([p.k1_0 for p in self.pieces])[i]
        A = np.array([p.A for p in self.pieces])[i]
        B = np.array([p.B for p in self.pieces])[i]
        tau = ts - starts[i]
        safe = np.where(A == 0.0, 1.0, A)
        grow = np.where(A == 0.0, tau, np.expm1(A * tau) / safe)
        return k0 + np.where(A == 0.0, B, A * k0 + B) * grow

    def k2_at(self, t: float) -> float:
        return 2.0 * self.scenario.k - self.k1_at(t)

    def outflow_integrals(self, a: float, b: float) -> Tuple[float, float]:
        """Exact ``(int g1, int g2)`` over ``[a, b]``.

        Conservation gives ``g1 = -L/(1-xi1) dk1/dt`` during phase one and
        ``g2 = L/(1-xi2) dk1/dt`` during phase two, so each integral is a
        density difference.
        """
        sc = self.scenario
        c1 = sc.L / (1.0 - sc.turning.xi1)
        c2 = sc.L / (1.0 - sc.turning.xi2)
        i1 = i2 = 0.0
        i = max(bisect.bisect_right(self._starts, a) - 1, 0)
        for p in self.pieces[i:]:
            if p.t0 >= b:
                break
            lo, hi = max(p.t0, a), min(p.t1, b)
            if hi <= lo or p.deltas == LOST:
                continue
            dk = p.k1_at(hi) - p.k1_at(lo)
            if p.deltas == PHASE_ONE:
                i1 -= c1 * dk
            else:
                i2 += c2 * dk
        return i1, i2


def _sample_times(p: Piece, stride: float) -> List[float]:
    if p.deltas == LOST or stride <= 0.0:
        return [p.t0]
    n0 = math.ceil(p.t0 / stride - 1e-9)
    out = [p.t0]
    m = n0
    while m * stride < p.t1 - 1e-9 * stride:
        if m * stride > p.t0 + 1e-9 * stride:
            out.append(m * stride)
        m += 1
    return out


def simulate(scenario: Scenario, n_cycles: int, k1_start: Optional[float] = None) -> Trajectory:
    """Exact orbit over ``n_cycles`` cycles starting at phase-one onset.

    Samples are taken at every event and ``SAMPLES_PER_GREEN`` times per
    green interval.
    """
    if n_cycles < 1:
        raise DomainError("n_cycles must be at least 1")
    sc = scenario
    k1 = sc.k1_0 if k1_start is None else k1_start
    pieces: List[Piece] = []
    cycle_k1 = [k1]
    T = sc.timing.T
    for n in range(n_cycles):
        try:
            k1 = _cycle(sc, k1, n * T, pieces)
        except ChatteringError as exc:
            raise ChatteringError(f"cycle {n}: {exc}") from None
        cycle_k1.append(k1)
    return _assemble(sc, pieces, cycle_k1)


def _assemble(sc: Scenario, pieces: List[Piece], cycle_k1: List[float]) -> Trajectory:
    T = sc.timing.T
    stride = min(sc.timing.pi1, sc.timing.pi2) * T / SAMPLES_PER_GREEN
    times, ks, regions = [], [], []
    for p in pieces:
        for t in _sample_times(p, stride):
            if times and t <= times[-1]:
                continue
            times.append(t)
            ks.append(p.k1_at(t))
            regions.append(p.region)
    last = pieces[-1]
    if not times or last.t1 > times[-1]:
        times.append(last.t1)
        ks.append(cycle_k1[-1])
        regions.append(last.region)
    g1, g2 = [], []
    for t, k1 in zip(times, ks):
        fx = diverge_fluxes(k1, sc.k, indicators(sc.timing, t), sc.turning, sc.fd)
        g1.append(fx.g1)
        g2.append(fx.g2)
    events = sorted({p.t0 for p in pieces} | {last.t1})
    return Trajectory(
        scenario=sc,
        pieces=pieces,
        t=np.array(times),
        k1=np.array(ks),
        region=np.array(regions, dtype=int),
        g1=np.array(g1),
        g2=np.array(g2),
        event_times=events,
        cycle_k1=cycle_k1,
    )


def poincare_numeric(scenario: Scenario, k1: float) -> float:
    """``k1`` one cycle later, starting at phase-one onset."""
    lo, hi = scenario.band
    slack = 1e-12 * scenario.fd.k_j
    if not lo - slack <= k1 <= hi + slack:
        raise DomainError(f"k1={k1!r} outside feasible band [{lo!r}, {hi!r}]")
    return cycle_map(scenario, min(max(k1, lo), hi))


def average_flow(trajectory: Trajectory, t: float) -> float:
    """Network flow averaged over the trailing cycle ``[t - T, t]``."""
    T = trajectory.scenario.timing.T
    if t < T - 1e-9 * T:
        raise DomainError(f"average flow needs t >= T; got t={t!r}")
    i1, i2 = trajectory.outflow_integrals(t - T, t)
    return (i1 + i2) / (2.0 * T)


@dataclass
class SampledTrajectory:
    """Orbit known only on a fixed time grid."""

    scenario: Scenario
    t: np.ndarray
    k1: np.ndarray


def euler_reference(scenario: Scenario, dt: float, horizon: float) -> SampledTrajectory:
    """Forward-Euler integration of the raw right-hand side.

    Steps are split at signal switching instants, so the only error left is
    the first-order truncation of the continuous dynamics.
    """
    if not dt > 0.0:
        raise DomainError("dt must be positive")
    sc = scenario
    # never step past the horizon
    n = int(math.floor(horizon / dt + 1e-9))
    lo, hi = sc.band
    k1 = sc.k1_0
    out = np.empty(n + 1)
    out[0] = k1
    fd, tp, k, L, timing = sc.fd, sc.turning, sc.k, sc.L, sc.timing
    offsets = []
    acc = 0.0
    for _, _, duration in timing.phase_plan():
        acc += duration
        offsets.append(acc)
    switches = []
    for c in range(int(math.ceil(n * dt / timing.T)) + 1):
        switches.extend(c * timing.T + o for o in offsets)
    j = 0
    for m in range(n):
        a, b = m * dt, (m + 1) * dt
        while j < len(switches) and switches[j] <= a:
            j += 1
        cuts = [a]
        i = j
        while i < len(switches) and switches[i] < b:
            cuts.append(switches[i])
            i += 1
        cuts.append(b)
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            deltas = indicators(timing, 0.5 * (t0 + t1))
            if deltas != LOST and t1 > t0:
                k1 = min(max(k1 + (t1 - t0) * rhs(k1, k, deltas, tp, fd, L), lo), hi)
        out[m + 1] = k1
    return SampledTrajectory(sc, np.arange(n + 1) * dt, out)


def first_crossing(
    scenario: Scenario, threshold: float, max_cycles: int, k1_start: Optional[float] = None
) -> Optional[float]:
    """First time either ring density reaches ``threshold``, or None.

    Ring densities are monotone on each analytic piece, so the crossing is
    solved in closed form on the first piece whose end value passes it.
    """
    sc = scenario
    k1 = sc.k1_0 if k1_start is None else k1_start
    two_k = 2.0 * sc.k
    if max(k1, two_k - k1) >= threshold:
        return 0.0
    T = sc.timing.T
    for n in range(max_cycles):
        pieces: List[Piece] = []
        k1 = _cycle(sc, k1, n * T, pieces)
        for p in pieces:
            end = p.k1_1
            if end >= threshold:
                dt = _time_to(p.k1_0, p.A, p.B, threshold)
            elif two_k - end >= threshold:
                dt = _time_to(p.k1_0, p.A, p.B, two_k - threshold)
            else:
                continue
            # round-off can leave dt undefined when the piece ends exactly on it
            return p.t0 + (p.t1 - p.t0 if dt is None else min(dt, p.t1 - p.t0))
    return None
