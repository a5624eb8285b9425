"""Cell transmission model of the same signalized double ring.

Each ring is cut into cells of length ``v_f * dt`` so the free-flow
characteristic moves exactly one cell per step.  The junction sits between
the last and first cells of both rings and uses the same FIFO diverge rule
as the link queue model.  State arrays may carry a leading batch axis so
that several initial conditions advance together.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .mfd import GridlockForecast, MFDPoint
from .model import DomainError, Scenario, TriangularFD, TurningPolicy, indicators

log = logging.getLogger(__name__)

DEFAULT_DT = 0.25
MIN_CELLS = 3
CTM_SOURCE = "ctm"


@dataclass
class CellRing:
    """Cell densities of both rings; shape ``(..., n_cells)``."""

    rho1: np.ndarray
    rho2: np.ndarray
    ell: float
    dt: float
    t: float = 0.0

    @property
    def n_cells(self) -> int:
        return self.rho1.shape[-1]

    def vehicles(self) -> np.ndarray:
        return (self.rho1.sum(axis=-1) + self.rho2.sum(axis=-1)) * self.ell

    def mean_densities(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.rho1.mean(axis=-1), self.rho2.mean(axis=-1)


def cell_count(L: float, v_f: float, dt: float) -> int:
    if not dt > 0:
        raise DomainError(f"time step {dt!r} must be positive")
    n = int(round(L / (v_f * dt)))
    if n < MIN_CELLS:
        raise DomainError(f"time step {dt!r} leaves fewer than {MIN_CELLS} cells per ring")
    return n


def ctm_build(scenario: Scenario, dt: float = DEFAULT_DT, k1_starts: Optional[Sequence[float]] = None) -> CellRing:
    """Uniform initial cells; ``dt`` is nudged so each ring holds a whole number of cells."""
    sc = scenario
    n = cell_count(sc.L, sc.fd.v_f, dt)
    dt_used = sc.L / (n * sc.fd.v_f)
    if abs(dt_used - dt) > 1e-12 * dt:
        log.info("time step adjusted from %g to %g s for %d cells", dt, dt_used, n)
    starts = np.atleast_1d(np.asarray(sc.k1_0 if k1_starts is None else k1_starts, dtype=float))
    lo, hi = sc.band
    slack = 1e-12 * sc.fd.k_j
    if np.any(starts < lo - slack) or np.any(starts > hi + slack):
        raise DomainError(f"initial ring-1 densities must lie in [{lo!r}, {hi!r}]")
    starts = np.clip(starts, lo, hi)
    rho1 = np.repeat(starts[:, None], n, axis=1)
    rho2 = np.repeat((2.0 * sc.k - starts)[:, None], n, axis=1)
    if k1_starts is None:
        rho1, rho2 = rho1[0], rho2[0]
    return CellRing(rho1, rho2, sc.L / n, dt_used)


def _demand(fd: TriangularFD, rho):
    return np.minimum(fd.v_f * rho, fd.C)


def _supply(fd: TriangularFD, rho):
    return np.minimum(fd.C, fd.w * (fd.k_j - rho))


def ctm_step(state: CellRing, deltas, turning: TurningPolicy, fd: TriangularFD):
    """Advance one step in place; returns the junction out-fluxes ``(g1, g2)``."""
    r1, r2 = state.rho1, state.rho2
    d1, d2 = _demand(fd, r1), _demand(fd, r2)
    s1, s2 = _supply(fd, r1), _supply(fd, r2)
    xi1, xi2 = turning.xi1, turning.xi2
    zero = np.zeros_like(d1[..., -1])
    g1 = np.minimum(np.minimum(d1[..., -1], s1[..., 0] / xi1), s2[..., 0] / (1.0 - xi1)) if deltas[0] else zero
    g2 = np.minimum(np.minimum(d2[..., -1], s2[..., 0] / xi2), s1[..., 0] / (1.0 - xi2)) if deltas[1] else zero
    q1 = np.minimum(d1[..., :-1], s1[..., 1:])
    q2 = np.minimum(d2[..., :-1], s2[..., 1:])
    lam = state.dt / state.ell
    in1 = np.concatenate([(xi1 * g1 + (1.0 - xi2) * g2)[..., None], q1], axis=-1)
    in2 = np.concatenate([((1.0 - xi1) * g1 + xi2 * g2)[..., None], q2], axis=-1)
    out1 = np.concatenate([q1, g1[..., None]], axis=-1)
    out2 = np.concatenate([q2, g2[..., None]], axis=-1)
    state.rho1 = r1 + lam * (in1 - out1)
    state.rho2 = r2 + lam * (in2 - out2)
    state.t += state.dt
    return g1, g2


@dataclass
class CTMRun:
    """Ring-average densities and cumulative junction outflow after each step."""

    scenario: Scenario
    dt: float
    t: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    out1: np.ndarray
    out2: np.ndarray
    state: CellRing
    snapshots: List[Tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)

    def average_flow_last_cycle(self) -> np.ndarray:
        """Junction flow averaged over the final cycle, one value per batch member."""
        T = self.scenario.timing.T
        steps = int(round(T / self.dt))
        if steps >= len(self.t):
            raise DomainError("run shorter than one cycle")
        i1 = self.out1[-1] - self.out1[-1 - steps]
        i2 = self.out2[-1] - self.out2[-1 - steps]
        return (i1 + i2) / (2.0 * steps * self.dt)


def _signal(sc: Scenario, t0: float, dt: float):
    # sample the switching signal at the step midpoint
    return indicators(sc.timing, t0 + 0.5 * dt)


def ctm_simulate(
    scenario: Scenario,
    n_cycles: float,
    dt: float = DEFAULT_DT,
    k1_starts: Optional[Sequence[float]] = None,
    snapshot_every: Optional[int] = None,
) -> CTMRun:
    sc = scenario
    state = ctm_build(sc, dt, k1_starts)
    n_steps = int(math.ceil(n_cycles * sc.timing.T / state.dt - 1e-9))
    shape = (n_steps + 1,) + state.rho1.shape[:-1]
    t = np.empty(n_steps + 1)
    k1 = np.empty(shape)
    k2 = np.empty(shape)
    o1 = np.zeros(shape)
    o2 = np.zeros(shape)
    t[0] = 0.0
    k1[0], k2[0] = state.mean_densities()
    snaps = []
    if snapshot_every:
        snaps.append((0.0, state.rho1.copy(), state.rho2.copy()))
    for n in range(n_steps):
        t0 = n * state.dt
        g1, g2 = ctm_step(state, _signal(sc, t0, state.dt), sc.turning, sc.fd)
        state.t = (n + 1) * state.dt
        t[n + 1] = state.t
        k1[n + 1], k2[n + 1] = state.mean_densities()
        o1[n + 1] = o1[n] + g1 * state.dt
        o2[n + 1] = o2[n] + g2 * state.dt
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snaps.append((state.t, state.rho1.copy(), state.rho2.copy()))
    return CTMRun(sc, state.dt, t, k1, k2, o1, o2, state, snaps)


def ctm_gridlock_time(
    scenario: Scenario, dt: float = DEFAULT_DT, sigma: float = 0.01, max_cycles: int = 10_000
) -> GridlockForecast:
    """First time a ring-average cell density reaches ``(1 - sigma) k_j``.

    Stops early with "no gridlock" once the cell pattern repeats from one
    cycle to the next.
    """
    if not 0.0 < sigma < 1.0:
        raise DomainError(f"sigma={sigma!r} outside (0, 1)")
    sc = scenario
    thr = (1.0 - sigma) * sc.fd.k_j
    state = ctm_build(sc, dt)
    steps_per_cycle = int(round(sc.timing.T / state.dt))
    if max(sc.k1_0, 2.0 * sc.k - sc.k1_0) >= thr:
        return GridlockForecast(0.0, sigma, sc.k1_0, "ctm")
    prev = None
    n = 0
    for _ in range(max_cycles):
        for _ in range(steps_per_cycle):
            ctm_step(state, _signal(sc, n * state.dt, state.dt), sc.turning, sc.fd)
            n += 1
            a, b = state.mean_densities()
            if max(float(a), float(b)) >= thr:
                return GridlockForecast(n * state.dt, sigma, sc.k1_0, "ctm")
        snap = np.concatenate([state.rho1, state.rho2])
        if prev is not None and np.max(np.abs(snap - prev)) < 1e-12 * sc.fd.k_j:
            break
        prev = snap
    return GridlockForecast(math.inf, sigma, sc.k1_0, "ctm", reached=False)


def ctm_mfd(
    template: Scenario,
    k_grid: Sequence[float],
    dt: float = DEFAULT_DT,
    n_cycles: int = 40,
    n_splits: int = 9,
) -> List[MFDPoint]:
    """Simulated flows from ``n_splits`` uniform initial splits per density.

    Each point is the junction flow over the last of ``n_cycles`` cycles.
    """
    out: List[MFDPoint] = []
    kj = template.fd.k_j
    for k in k_grid:
        k = float(k)
        lo, hi = max(2.0 * k - kj, 0.0), min(2.0 * k, kj)
        sc = template.with_(k=k, k1_0=min(max(k, lo), hi))
        starts = np.linspace(lo, hi, n_splits) if hi > lo else np.array([lo])
        run = ctm_simulate(sc, n_cycles, dt, k1_starts=starts)
        q = run.average_flow_last_cycle()
        for x, qi in zip(starts, q):
            out.append(MFDPoint(k, float(qi), "simulated", CTM_SOURCE, float(x), float(x)))
    out.sort(key=lambda p: (p.k, p.q, p.k1_star_lo))
    return out
