"""Phase-space regions of the switched affine system.

For each signal phase the ``(k1, k)`` plane splits into regions where the
ring-1 dynamics are ``dk1/dt = A k1 + B`` with constant coefficients.
Regions 1-4 belong to phase one, 5-8 to phase two, 9 and 10 to the lost
times following phase one and phase two respectively.

Boundary points use the closed/open inequalities of the region table; a
point that falls in none of them (a measure-zero gap on a shared line) or in
several is given to the lowest-numbered candidate.  The dynamics are
continuous across every boundary, so this only affects labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, List, Optional, Tuple

from .model import (
    LOST,
    PHASE_ONE,
    PHASE_TWO,
    Deltas,
    DomainError,
    TriangularFD,
    TurningPolicy,
    feasible_band,
)

Pair = Tuple[int, int]

PHASE_ONE_REGIONS = (1, 2, 3, 4)
PHASE_TWO_REGIONS = (5, 6, 7, 8)

# reference lambda sign pairs, per xi regime
PAIRS_ABOVE_HALF: Tuple[Pair, ...] = (
    (1, 5), (1, 6), (1, 7), (2, 5), (2, 6), (2, 7), (4, 7), (3, 5), (3, 6), (3, 7), (3, 8),
)
PAIRS_BELOW_HALF: Tuple[Pair, ...] = (
    (1, 5), (1, 6), (1, 7), (2, 5), (2, 6), (4, 6), (4, 7), (3, 5), (2, 8), (4, 8), (3, 8),
)
PAIRS_AT_HALF: Tuple[Pair, ...] = ((1, 5), (1, 6), (1, 7), (2, 5), (2, 6), (4, 7), (3, 5), (3, 8))

GRIDLOCK_PAIRS: FrozenSet[Pair] = frozenset({(4, 7), (3, 8)})


class ClassificationError(RuntimeError):
    """No region condition holds for a point inside the feasible band."""


@dataclass(frozen=True)
class Gammas:
    g1: float
    g2: float
    g3: float
    g4: float
    g5: float

    @classmethod
    def of(cls, fd: TriangularFD, turning: TurningPolicy, L: float) -> "Gammas":
        xi1, xi2 = turning.xi1, turning.xi2
        g3 = fd.v_f * fd.k_c / (L * (fd.k_j - fd.k_c))
        return cls(
            g1=(1.0 - xi1) * fd.v_f / L,
            g2=g3 * (1.0 - xi1) / xi1,
            g3=g3,
            g4=(1.0 - xi2) * fd.v_f / L,
            g5=g3 * (1.0 - xi2) / xi2,
        )


@dataclass(frozen=True)
class AffineCoefficients:
    A: float
    B: float

    def rate(self, k1: float) -> float:
        return self.A * k1 + self.B


def xi_regime(xi: float, tol: float = 1e-12) -> str:
    """``'above'``, ``'below'`` or ``'half'`` relative to xi = 0.5."""
    if not 0.0 < xi < 1.0:
        raise DomainError(f"retaining ratio {xi!r} outside (0, 1)")
    if abs(xi - 0.5) <= tol:
        return "half"
    return "above" if xi > 0.5 else "below"


def reference_pairs(xi: float) -> Tuple[Pair, ...]:
    return {"above": PAIRS_ABOVE_HALF, "below": PAIRS_BELOW_HALF, "half": PAIRS_AT_HALF}[
        xi_regime(xi)
    ]


# --- region conditions ------------------------------------------------------


def _phase_one_conditions(k1, k, xi, fd, strict):
    """Membership of regions 1-4; ``strict=False`` relaxes every ``<`` to ``<=``."""
    kj, kc = fd.k_j, fd.k_c
    lt = (lambda a, b: a < b) if strict else (lambda a, b: a <= b)
    l1 = kj / 2.0 - ((1.0 - xi) * kj - (2.0 - xi) * kc) * k1 / (2.0 * kc)
    l2 = (xi * kj + (1.0 - xi) * kc + k1) / 2.0
    l3 = (2.0 * xi - 1.0) / (2.0 * xi) * kj + k1 / (2.0 * xi)
    b4 = kj - xi * (kj - kc)
    top = (kj + k1) / 2.0
    low = k1 / 2.0
    return {
        1: lt(0.0, k1) and lt(k1, kc) and low <= k <= l1,
        2: kc <= k1 and lt(k1, b4) and low <= k <= l2,
        3: b4 <= k1 <= kj and low <= k <= l3,
        4: lt(0.0, k1) and lt(k1, kj) and lt(max(l1, l2, l3), k) and k <= top,
    }


def _phase_two_conditions(k1, k, xi, fd, strict):
    kj, kc = fd.k_j, fd.k_c
    lt = (lambda a, b: a < b) if strict else (lambda a, b: a <= b)
    m1 = (kj + k1 - xi * (kj - kc)) / 2.0
    m2 = ((1.0 - 2.0 * xi) * kj + k1) / (2.0 * (1.0 - xi))
    m3 = k1 / 2.0 + kc * (kj - k1) / (2.0 * (1.0 - xi) * (kj - kc))
    b8 = kj - (1.0 - xi) * (kj - kc)
    top = (kj + k1) / 2.0
    low = k1 / 2.0
    return {
        5: 0.0 <= k1 <= kj and low <= k <= min((k1 + kc) / 2.0, m3),
        6: 0.0 <= k1 <= b8 and lt((k1 + kc) / 2.0, k) and k <= m1,
        7: 0.0 <= k1 <= kj and lt(max(m1, m2), k) and k <= top,
        8: lt(b8, k1) and k1 <= kj and lt(m3, k) and lt(k, m2),
    }


def classify(
    k1: float,
    k: float,
    deltas: Deltas,
    turning: TurningPolicy,
    fd: TriangularFD,
    previous: Deltas = PHASE_ONE,
) -> int:
    """Region index of ``(k1, k)`` under the given signal phase.

    ``previous`` is the last green phase and only matters during lost time.
    """
    if deltas == LOST:
        return 9 if previous == PHASE_ONE else 10
    if deltas == PHASE_ONE:
        cond, xi = _phase_one_conditions, turning.xi1
    elif deltas == PHASE_TWO:
        cond, xi = _phase_two_conditions, turning.xi2
    else:
        raise DomainError(f"invalid signal state {deltas!r}")
    for strict in (True, False):
        hits = [r for r, ok in cond(k1, k, xi, fd, strict).items() if ok]
        if hits:
            return min(hits)
    lo, hi = feasible_band(k, fd.k_j)
    raise ClassificationError(
        f"no region for k1={k1!r}, k={k!r}, deltas={deltas}, xi={xi!r}; band=[{lo!r}, {hi!r}]"
    )


def coefficients(region: int, gammas: Gammas, k: float, fd: TriangularFD) -> AffineCoefficients:
    g, kj, kc = gammas, fd.k_j, fd.k_c
    table = {
        1: (-g.g1, 0.0),
        2: (0.0, -g.g1 * kc),
        3: (g.g2, -g.g2 * kj),
        4: (-g.g3, -g.g3 * (kj - 2.0 * k)),
        5: (-g.g4, 2.0 * k * g.g4),
        6: (0.0, g.g4 * kc),
        7: (g.g5, g.g5 * (kj - 2.0 * k)),
        8: (-g.g3, g.g3 * kj),
        9: (0.0, 0.0),
        10: (0.0, 0.0),
    }
    try:
        return AffineCoefficients(*table[region])
    except KeyError:
        raise DomainError(f"unknown region {region!r}") from None


def lambda_(k1: float, k: float, pair: Pair, gammas: Gammas, fd: TriangularFD) -> float:
    """Sum of the two phase rates of a region pair at ``(k1, k)``."""
    i, j = pair
    if i not in PHASE_ONE_REGIONS or j not in PHASE_TWO_REGIONS:
        raise DomainError(f"pair {pair!r} must combine a phase-one and a phase-two region")
    return coefficients(j, gammas, k, fd).rate(k1) + coefficients(i, gammas, k, fd).rate(k1)


def admissible_pairs(xi: float) -> Dict[Pair, bool]:
    """Region pairs that can host stationary states, mapped to a gridlock flag."""
    regime = xi_regime(xi)
    if regime == "above":
        free = [(1, 5), (1, 7), (2, 6), (3, 5), (3, 7)]
    elif regime == "below":
        free = [(1, 5), (2, 6), (4, 8)]
    else:
        return {(1, 5): False, (2, 6): False, (4, 7): False, (3, 8): False}
    out = {p: False for p in free}
    out.update({p: True for p in GRIDLOCK_PAIRS})
    return out


# --- segment tables ---------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Interval of k1 at fixed k over which one region's coefficients apply."""

    lo: float
    hi: float
    region: int
    A: float
    B: float

    def rate(self, k1: float) -> float:
        return self.A * k1 + self.B


def _candidate_breaks(k: float, deltas: Deltas, turning: TurningPolicy, fd: TriangularFD):
    kj, kc = fd.k_j, fd.k_c
    out = [kc, 2.0 * k - kc]
    if deltas == PHASE_ONE:
        xi = turning.xi1
        out.append(kj - xi * (kj - kc))
        slope = (1.0 - xi) * kj - (2.0 - xi) * kc
        if slope != 0.0:
            out.append((kj / 2.0 - k) * 2.0 * kc / slope)
        out.append(2.0 * k - xi * kj - (1.0 - xi) * kc)
        out.append(2.0 * xi * k - (2.0 * xi - 1.0) * kj)
    else:
        xi = turning.xi2
        out.append(kj - (1.0 - xi) * (kj - kc))
        out.append(2.0 * k - kj + xi * (kj - kc))
        out.append(2.0 * (1.0 - xi) * k - (1.0 - 2.0 * xi) * kj)
        r = kc / ((1.0 - xi) * (kj - kc))
        if r != 1.0:
            out.append((2.0 * k - r * kj) / (1.0 - r))
    return out


@lru_cache(maxsize=4096)
def segments(
    k: float, deltas: Deltas, turning: TurningPolicy, fd: TriangularFD, L: float
) -> Tuple[Segment, ...]:
    """Ordered region segments covering the feasible k1 band at density ``k``."""
    if deltas not in (PHASE_ONE, PHASE_TWO):
        raise DomainError("segment tables exist only for green phases")
    gam = Gammas.of(fd, turning, L)
    lo, hi = feasible_band(k, fd.k_j)
    if hi - lo <= 1e-12 * fd.k_j:
        r = classify(lo, k, deltas, turning, fd)
        c = coefficients(r, gam, k, fd)
        return (Segment(lo, hi, r, c.A, c.B),)
    pts = sorted({lo, hi, *(x for x in _candidate_breaks(k, deltas, turning, fd) if lo < x < hi)})
    span = hi - lo
    pts = [p for n, p in enumerate(pts) if n == 0 or p - pts[n - 1] > 1e-13 * span]
    if pts[-1] != hi:
        pts[-1] = hi
    out: List[Segment] = []
    for a, b in zip(pts[:-1], pts[1:]):
        r = classify(0.5 * (a + b), k, deltas, turning, fd)
        if out and out[-1].region == r:
            s = out[-1]
            out[-1] = Segment(s.lo, b, r, s.A, s.B)
        else:
            c = coefficients(r, gam, k, fd)
            out.append(Segment(a, b, r, c.A, c.B))
    return tuple(out)


def region_interval(
    region: int, k: float, turning: TurningPolicy, fd: TriangularFD, L: float = 1.0
) -> Optional[Tuple[float, float]]:
    """Closed k1-interval occupied by ``region`` at density ``k``, if any."""
    deltas = PHASE_ONE if region in PHASE_ONE_REGIONS else PHASE_TWO
    for s in segments(k, deltas, turning, fd, L):
        if s.region == region:
            return s.lo, s.hi
    return None


def pair_interval(
    pair: Pair, k: float, turning: TurningPolicy, fd: TriangularFD
) -> Optional[Tuple[float, float]]:
    """k1-interval where phase one is in ``pair[0]`` and phase two in ``pair[1]``."""
    a = region_interval(pair[0], k, turning, fd)
    b = region_interval(pair[1], k, turning, fd)
    if a is None or b is None:
        return None
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    if lo > hi:
        return None
    return lo, hi


def pair_of(k1: float, k: float, turning: TurningPolicy, fd: TriangularFD) -> Pair:
    return (
        classify(k1, k, PHASE_ONE, turning, fd),
        classify(k1, k, PHASE_TWO, turning, fd),
    )


def in_pair_band(
    pair: Pair, k1: float, k: float, turning: TurningPolicy, fd: TriangularFD, tol: float = 1e-9
) -> bool:
    band = pair_interval(pair, k, turning, fd)
    if band is None:
        return False
    slack = tol * fd.k_j
    return band[0] - slack <= k1 <= band[1] + slack


def boundary_points(
    turning: TurningPolicy, fd: TriangularFD, n_k: int = 301
) -> List[Tuple[str, str, float, float]]:
    """Sampled region boundaries as ``(deltas, boundary_id, k1, k)`` rows.

    ``boundary_id`` is ``"a|b"`` for the line between regions a and b, or
    ``"band-lo"``/``"band-hi"`` for the edges of the feasible band.
    """
    rows = []
    for n in range(n_k):
        k = fd.k_j * n / (n_k - 1)
        lo, hi = feasible_band(k, fd.k_j)
        for deltas in (PHASE_ONE, PHASE_TWO):
            tag = f"{deltas[0]}{deltas[1]}"
            rows.append((tag, "band-lo", lo, k))
            rows.append((tag, "band-hi", hi, k))
            segs = segments(k, deltas, turning, fd, 1.0)
            for a, b in zip(segs[:-1], segs[1:]):
                rows.append((tag, f"{a.region}|{b.region}", a.hi, k))
    rows.sort(key=lambda r: (r[0], r[1], r[3], r[2]))
    return rows

