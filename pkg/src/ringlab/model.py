"""Link queue model of the signalized double-ring network.

Units are fixed once here: densities in veh/mi, lengths in mi, times in s,
speeds in mi/s and flows in veh/s.  Use :func:`mph` to convert user-facing
speeds.  Ring 2 is never tracked directly; its density is ``2k - k1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Tuple

Deltas = Tuple[int, int]

PHASE_ONE: Deltas = (1, 0)
PHASE_TWO: Deltas = (0, 1)
LOST: Deltas = (0, 0)


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class InvariantError(ValueError):
    """A domain type was constructed with values violating its invariants.

    ``type_name`` names the violated type so config loaders can report it.
    """

    def __init__(self, type_name: str, message: str):
        super().__init__(f"{type_name}: {message}")
        self.type_name = type_name


def mph(speed: float) -> float:
    """Convert miles per hour to miles per second."""
    return speed / 3600.0


@dataclass(frozen=True)
class TriangularFD:
    """Triangular flow-density relation ``Q(k) = min(v_f k, w (k_j - k))``.

    ``k_c`` and ``C`` are derived so that both branches always meet at the
    critical density.
    """

    v_f: float
    w: float
    k_j: float
    k_c: float = field(init=False)
    C: float = field(init=False)

    def __post_init__(self):
        if not (self.v_f > 0 and self.w > 0 and self.k_j > 0):
            raise InvariantError("TriangularFD", "v_f, w and k_j must be positive")
        k_c = self.w * self.k_j / (self.v_f + self.w)
        object.__setattr__(self, "k_c", k_c)
        object.__setattr__(self, "C", self.v_f * k_c)

    @classmethod
    def from_mph(cls, v_f: float = 30.0, w: float = 7.5, k_j: float = 150.0) -> "TriangularFD":
        return cls(mph(v_f), mph(w), k_j)

    def Q(self, k: float) -> float:
        if k <= self.k_c:
            return self.v_f * k
        return self.w * (self.k_j - k)


@dataclass(frozen=True)
class SignalTiming:
    """Two-phase fixed-time signal; ``pi2`` defaults to the symmetric split."""

    T: float
    delta: float
    pi1: float | None = None
    pi2: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise InvariantError("SignalTiming", "cycle length T must be positive")
        if self.delta < 0:
            raise InvariantError("SignalTiming", "lost time must be non-negative")
        green = (self.T - 2.0 * self.delta) / self.T
        pi1, pi2 = self.pi1, self.pi2
        if pi1 is None and pi2 is None:
            pi1 = pi2 = green / 2.0
        elif pi2 is None:
            pi2 = green - pi1
        elif pi1 is None:
            pi1 = green - pi2
        elif abs((pi1 + pi2) * self.T - (self.T - 2.0 * self.delta)) > 1e-12 * self.T:
            raise InvariantError(
                "SignalTiming",
                f"(pi1 + pi2) * T must equal T - 2*delta; got {(pi1 + pi2) * self.T!r}"
                f" vs {self.T - 2.0 * self.delta!r}",
            )
        if not (pi1 > 0 and pi2 > 0):
            raise InvariantError("SignalTiming", "green ratios must be positive")
        object.__setattr__(self, "pi1", pi1)
        object.__setattr__(self, "pi2", pi2)

    @property
    def symmetric(self) -> bool:
        return abs(self.pi1 - self.pi2) <= 1e-12

    @property
    def pi(self) -> float:
        """Common green ratio; only meaningful when ``symmetric``."""
        return self.pi1

    def phase_plan(self):
        """Return ``[(deltas, previous_green, duration), ...]`` for one cycle."""
        T, d = self.T, self.delta
        return [
            (PHASE_ONE, PHASE_ONE, self.pi1 * T),
            (LOST, PHASE_ONE, d),
            (PHASE_TWO, PHASE_TWO, T - d - (d + self.pi1 * T)),
            (LOST, PHASE_TWO, d),
        ]


@dataclass(frozen=True)
class TurningPolicy:
    xi1: float
    xi2: float

    def __post_init__(self):
        for name in ("xi1", "xi2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvariantError("TurningPolicy", f"{name}={v!r} must lie in (0, 1)")

    @classmethod
    def symmetric(cls, xi: float) -> "TurningPolicy":
        return cls(xi, xi)

    @property
    def is_symmetric(self) -> bool:
        return self.xi1 == self.xi2


def feasible_band(k: float, k_j: float) -> Tuple[float, float]:
    """Range of ring-1 densities that keeps both rings within ``[0, k_j]``."""
    return max(2.0 * k - k_j, 0.0), min(2.0 * k, k_j)


@dataclass(frozen=True)
class Scenario:
    fd: TriangularFD
    L: float
    timing: SignalTiming
    turning: TurningPolicy
    k: float
    k1_0: float

    def __post_init__(self):
        if not self.L > 0:
            raise InvariantError("Scenario", "ring length L must be positive")
        if not 0.0 <= self.k <= self.fd.k_j:
            raise InvariantError("Scenario", f"k={self.k!r} outside [0, k_j]")
        lo, hi = feasible_band(self.k, self.fd.k_j)
        slack = 1e-12 * self.fd.k_j
        if not lo - slack <= self.k1_0 <= hi + slack:
            raise InvariantError(
                "Scenario", f"k1_0={self.k1_0!r} outside feasible band [{lo!r}, {hi!r}]"
            )
        object.__setattr__(self, "k1_0", min(max(self.k1_0, lo), hi))

    @property
    def band(self) -> Tuple[float, float]:
        return feasible_band(self.k, self.fd.k_j)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


def default_scenario(
    k: float = 20.0,
    xi: float = 0.7,
    T: float = 60.0,
    delta: float = 2.0,
    k1_0: float | None = None,
) -> Scenario:
    """Default network: L = 0.25 mi, v_f = 30 mph, k_j = 150 veh/mi, k_c = 30 veh/mi."""
    return Scenario(
        fd=TriangularFD.from_mph(),
        L=0.25,
        timing=SignalTiming(T, delta),
        turning=TurningPolicy.symmetric(xi),
        k=k,
        k1_0=k if k1_0 is None else k1_0,
    )


@dataclass(frozen=True)
class NetworkState:
    t: float
    k1: float
    deltas: Deltas


@dataclass(frozen=True)
class FluxBundle:
    g1: float
    g2: float
    f1: float
    f2: float


def _check_density(fd: TriangularFD, k_a: float):
    if not 0.0 <= k_a <= fd.k_j:
        raise DomainError(f"density {k_a!r} outside [0, {fd.k_j!r}]")


def demand(fd: TriangularFD, k_a: float) -> float:
    _check_density(fd, k_a)
    return fd.v_f * k_a if k_a <= fd.k_c else fd.C


def supply(fd: TriangularFD, k_a: float) -> float:
    _check_density(fd, k_a)
    return fd.C if k_a <= fd.k_c else fd.w * (fd.k_j - k_a)


def indicators(timing: SignalTiming, t: float) -> Deltas:
    """Signal state at time ``t``; intervals are closed on the left."""
    s = math.fmod(t, timing.T)
    g1_end = timing.pi1 * timing.T
    if 0.0 <= s < g1_end:
        return PHASE_ONE
    if timing.delta + g1_end <= s < timing.T - timing.delta:
        return PHASE_TWO
    return LOST


def _clip(fd: TriangularFD, k_a: float) -> float:
    # absorbs round-off of k2 = 2k - k1 at the band edges
    return min(max(k_a, 0.0), fd.k_j)


def diverge_fluxes(
    k1: float, k: float, deltas: Deltas, turning: TurningPolicy, fd: TriangularFD
) -> FluxBundle:
    """FIFO diverge fluxes at the junction for the active signal phase."""
    d1, d2 = deltas
    k2 = _clip(fd, 2.0 * k - k1)
    k1 = _clip(fd, k1)
    xi1, xi2 = turning.xi1, turning.xi2
    g1 = g2 = 0.0
    if d1:
        s1, s2 = supply(fd, k1), supply(fd, k2)
        g1 = min(demand(fd, k1), s1 / xi1, s2 / (1.0 - xi1))
    if d2:
        s1, s2 = supply(fd, k1), supply(fd, k2)
        g2 = min(demand(fd, k2), s2 / xi2, s1 / (1.0 - xi2))
    return FluxBundle(
        g1=g1,
        g2=g2,
        f1=g1 * xi1 + g2 * (1.0 - xi2),
        f2=g1 * (1.0 - xi1) + g2 * xi2,
    )


def rhs(
    k1: float, k: float, deltas: Deltas, turning: TurningPolicy, fd: TriangularFD, L: float
) -> float:
    """Rate of change of the ring-1 density."""
    fx = diverge_fluxes(k1, k, deltas, turning, fd)
    return (-(1.0 - turning.xi1) * fx.g1 + (1.0 - turning.xi2) * fx.g2) / L
