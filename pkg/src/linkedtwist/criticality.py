"""Critical shear thresholds for the segment-growth argument.

The growth certification of unstable segments needs every returning piece
to carry enough vertical extent back into the square.  Summing the minimal
per-piece requirements and dividing out the parent extent turns that into
a single inequality lhs(alpha) < 1 per return shape: one for returns that
cross a single square edge, one for returns spanning both squares.  Each
lhs is strictly decreasing in alpha, so the threshold is the unique root
of lhs(alpha) = 1.  This module evaluates both left-hand sides and locates
the roots by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from . import maps

BRACKET_LO = 2.01
BRACKET_HI = 50.0
_GRID_POINTS = 10_000


class CriticalSystem(Enum):
    SINGLE_SQUARE = "single"
    DOUBLE_SQUARE = "double"


class NoRootError(RuntimeError):
    """The inequality has no threshold inside the search bracket."""


def _contracting_slope(alpha: float) -> float:
    return maps.eigen(alpha)[2]


def _check_alpha(alpha: float) -> float:
    a = float(alpha)
    if not a > 2.0:
        raise ValueError("thresholds are defined for alpha above 2")
    return a


def single_square_lhs(alpha: float, eta: float = 0.25) -> float:
    """Requirement sum for returns crossing one square edge.

    eta widens the crude upper bound assumed for the parent's vertical
    extent; the default matches a band much narrower than the lobes.
    Returns +inf where the bound is infeasible outright (the last term's
    denominator closes).
    """
    a = _check_alpha(alpha)
    if not eta > 0.0:
        raise ValueError("eta must be positive")
    L = _contracting_slope(a)
    den = 1.0 - (1.0 + 2.0 * eta) / (a + L)
    if den <= 0.0:
        return math.inf
    return 2.0 / (a + L) + 3.0 / (2.0 * a + L) + 2.0 / (a * den)


def double_square_lhs(alpha: float) -> float:
    """Requirement sum for returns spanning both squares."""
    a = _check_alpha(alpha)
    L = _contracting_slope(a)
    return 2.0 / (a + L) + 2.0 / a


@dataclass(frozen=True)
class CriticalityResult:
    alpha_star: float
    residual: float
    bracket: Tuple[float, float]
    system: CriticalSystem


@dataclass(frozen=True)
class PieceBounds:
    """Minimal vertical extents the four return pieces must carry."""

    lv_I1: float
    lv_I2: float
    lv_I3: float
    lv_I4: float


def sufficiency_bounds(alpha: float, lv_gamma: float, delta: float) -> PieceBounds:
    """Per-piece vertical-extent floors that make the growth conditions hold.

    The pieces partition the parent, so if the floors sum to less than
    lv_gamma some piece necessarily exceeds its floor and the growth
    disjunction goes through.
    """
    a = _check_alpha(alpha)
    if not delta > 1.0:
        raise ValueError("delta must exceed 1")
    if not lv_gamma > 0.0:
        raise ValueError("lv_gamma must be positive")
    slack = 1.0 - 2.0 * delta * lv_gamma
    if slack <= 0.0:
        raise ValueError("parent segment too long for the spacing bound")
    L = _contracting_slope(a)
    edge = delta * lv_gamma / (a + L)
    return PieceBounds(
        lv_I1=3.0 * delta * lv_gamma / (2.0 * a + L),
        lv_I2=2.0 * delta * lv_gamma / (a * slack),
        lv_I3=edge,
        lv_I4=edge,
    )


def _lhs_for(system: CriticalSystem, eta: float):
    if system is CriticalSystem.SINGLE_SQUARE:
        return lambda a: single_square_lhs(a, eta)
    if system is CriticalSystem.DOUBLE_SQUARE:
        return double_square_lhs
    raise ValueError(f"unknown critical system {system!r}")


def _assert_decreasing(f) -> None:
    # infeasible +inf values may only prefix the grid; the finite tail
    # must fall strictly
    prev = None
    for i in range(_GRID_POINTS):
        a = BRACKET_LO + (BRACKET_HI - BRACKET_LO) * i / (_GRID_POINTS - 1)
        v = f(a)
        if prev is not None and math.isfinite(prev):
            if not v < prev:
                raise NoRootError(
                    "requirement sum is not strictly decreasing on the bracket"
                )
        prev = v


def solve_critical(
    system: CriticalSystem,
    tol: float = 1e-6,
    eta: float = 0.25,
) -> CriticalityResult:
    """Locate the threshold shear where the requirement sum passes 1.

    Monotone decrease is verified on a fixed grid before bisecting, so the
    root is unique when it exists.  Raises NoRootError when the sum never
    crosses 1 inside the bracket.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    f = _lhs_for(system, eta)
    _assert_decreasing(f)
    lo, hi = BRACKET_LO, BRACKET_HI
    if not (f(lo) > 1.0 and f(hi) < 1.0):
        raise NoRootError("requirement sum does not cross 1 inside the bracket")
    # bisect well past the requested tolerance so the residual at the
    # reported root is negligible, not just the bracket width
    width = min(tol, 1e-12)
    for _ in range(200):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        if f(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    alpha_star = 0.5 * (lo + hi)
    return CriticalityResult(
        alpha_star=alpha_star,
        residual=abs(f(alpha_star) - 1.0),
        bracket=(lo, hi),
        system=system,
    )
