import math
import random

import pytest

from linkedtwist import maps
from linkedtwist.criticality import (
    CriticalSystem,
    CriticalityResult,
    NoRootError,
    double_square_lhs,
    single_square_lhs,
    solve_critical,
    sufficiency_bounds,
)
from linkedtwist.segments import rational_spacing

# Frozen roots, computed once by an independent high-precision bisection
# (mpmath, 50 digits) of the same inequality systems.
ALPHA1 = 6.231398321339917
ALPHA2 = 4.133185666641252


def _mp_root(lhs_name, eta="0.25"):
    """Independent high-precision recomputation of a threshold root."""
    from mpmath import mp, mpf, sqrt, inf

    mp.dps = 30
    eta = mpf(eta)

    def L(a):
        return -a / 2 + sqrt((a / 2) ** 2 - 1)

    def single(a):
        l = L(a)
        den = 1 - (1 + 2 * eta) / (a + l)
        if den <= 0:
            return inf
        return 2 / (a + l) + 3 / (2 * a + l) + 2 / (a * den)

    def double(a):
        l = L(a)
        return 2 / (a + l) + 2 / a

    f = single if lhs_name == "single" else double
    lo, hi = mpf("2.01"), mpf(50)
    for _ in range(120):
        mid = (lo + hi) / 2
        if f(mid) > 1:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def test_frozen_roots_match_independent_oracle():
    assert _mp_root("single") == pytest.approx(ALPHA1, abs=1e-12)
    assert _mp_root("double") == pytest.approx(ALPHA2, abs=1e-12)


def test_solve_critical_single():
    res = solve_critical(CriticalSystem.SINGLE_SQUARE)
    assert isinstance(res, CriticalityResult)
    assert res.system is CriticalSystem.SINGLE_SQUARE
    assert res.alpha_star == pytest.approx(ALPHA1, abs=1e-9)
    assert res.alpha_star == pytest.approx(6.23, abs=0.01)
    assert res.residual < 1e-8
    lo, hi = res.bracket
    assert lo <= res.alpha_star <= hi
    # strict feasibility just above the root
    assert single_square_lhs(res.alpha_star + 1e-3) < 1.0


def test_solve_critical_double():
    res = solve_critical(CriticalSystem.DOUBLE_SQUARE)
    assert res.system is CriticalSystem.DOUBLE_SQUARE
    assert res.alpha_star == pytest.approx(ALPHA2, abs=1e-9)
    assert res.alpha_star == pytest.approx(4.13, abs=0.01)
    assert res.residual < 1e-8
    assert double_square_lhs(res.alpha_star + 1e-3) < 1.0
    # the binding constant is the larger of the two thresholds
    a1 = solve_critical(CriticalSystem.SINGLE_SQUARE).alpha_star
    assert max(a1, res.alpha_star) == pytest.approx(6.23, abs=0.01)


def test_lhs_spot_values():
    assert single_square_lhs(6.23) == pytest.approx(1.0, abs=0.01)
    assert single_square_lhs(10.0) < 1.0
    assert single_square_lhs(3.0) > 1.0
    assert double_square_lhs(4.13) == pytest.approx(1.0, abs=0.01)
    assert double_square_lhs(8.0) < 1.0
    # alpha = 2.5 gives L = -1/2, so the sum is 1 + 4/5 exactly
    assert double_square_lhs(2.5) == pytest.approx(1.8, abs=1e-12)


def test_single_lhs_infeasible_region():
    # below the pole of the third term the bound cannot hold at all
    assert math.isinf(single_square_lhs(2.1))
    assert math.isinf(single_square_lhs(2.16))
    assert not math.isinf(single_square_lhs(2.2))


def test_lhs_rejects_alpha_at_or_below_two():
    for bad in (2.0, 1.5, -3.0):
        with pytest.raises(ValueError):
            single_square_lhs(bad)
        with pytest.raises(ValueError):
            double_square_lhs(bad)
    with pytest.raises(ValueError):
        solve_critical(CriticalSystem.SINGLE_SQUARE, tol=0.0)


def test_lhs_strictly_decreasing_on_grid():
    lo, hi, n = 2.01, 50.0, 10_000
    for f in (single_square_lhs, double_square_lhs):
        prev = None
        for i in range(n):
            v = f(lo + (hi - lo) * i / (n - 1))
            if prev is not None and math.isfinite(prev):
                assert v < prev
            # an infeasible stretch may only appear as a leading segment
            if prev is not None and math.isfinite(prev):
                assert math.isfinite(v)
            prev = v


def test_eta_knob_shifts_single_root():
    base = solve_critical(CriticalSystem.SINGLE_SQUARE, eta=0.25).alpha_star
    tighter = solve_critical(CriticalSystem.SINGLE_SQUARE, eta=0.1).alpha_star
    tightest = solve_critical(CriticalSystem.SINGLE_SQUARE, eta=0.025).alpha_star
    assert base == pytest.approx(ALPHA1, abs=1e-9)
    assert tighter == pytest.approx(6.086917261807849, abs=1e-9)
    assert tightest == pytest.approx(6.017910671640266, abs=1e-9)
    assert tightest < tighter < base
    # eta does not enter the two-square system
    same = solve_critical(CriticalSystem.DOUBLE_SQUARE, eta=0.1).alpha_star
    assert same == pytest.approx(ALPHA2, abs=1e-9)


def test_solve_critical_no_root():
    # a band-width allowance so large the one-square bound is infeasible
    # over the whole bracket
    with pytest.raises(NoRootError):
        solve_critical(CriticalSystem.SINGLE_SQUARE, eta=24.0)


def test_sufficiency_chain_brackets_the_root():
    delta = 1.0 + 1e-9
    for alpha, holds in ((ALPHA1 + 0.1, True), (ALPHA1 - 0.1, False)):
        L = maps.eigen(alpha)[2]
        lv_gamma = 0.999 * 3.0 / (4.0 * (alpha + L))
        b = sufficiency_bounds(alpha, lv_gamma, delta)
        total = b.lv_I1 + b.lv_I2 + b.lv_I3 + b.lv_I4
        assert (total < lv_gamma) is holds


def test_sufficiency_bounds_shapes_and_guards():
    b = sufficiency_bounds(7.0, 1e-3, 1.25)
    for v in (b.lv_I1, b.lv_I2, b.lv_I3, b.lv_I4):
        assert v > 0
    L = maps.eigen(7.0)[2]
    assert b.lv_I3 == pytest.approx(1.25e-3 / (7.0 + L), rel=1e-12)
    assert b.lv_I4 == b.lv_I3
    assert b.lv_I1 == pytest.approx(3 * 1.25e-3 / (14.0 + L), rel=1e-12)
    assert b.lv_I2 == pytest.approx(
        2 * 1.25e-3 / (7.0 * (1.0 - 2 * 1.25e-3)), rel=1e-12
    )
    with pytest.raises(ValueError):
        sufficiency_bounds(7.0, 0.4, 1.5)  # 1 - 2*delta*lv not positive
    with pytest.raises(ValueError):
        sufficiency_bounds(7.0, 1e-3, 1.0)


def test_spacing_threshold_implication():
    # if the middle piece is long enough, the orbit spacing d automatically
    # clears the 2*delta*lv(gamma) requirement; checked against the spacing
    # formula itself over random feasible instances
    rng = random.Random(977)
    checked = 0
    while checked < 10_000:
        alpha = rng.uniform(2.1, 30.0)
        delta = rng.uniform(1.0 + 1e-9, 2.0)
        lv_gamma = rng.uniform(1e-6, 0.01)
        need = 2.0 * delta * lv_gamma
        thresh = need / (alpha * (1.0 - need))
        lv2 = thresh * rng.uniform(1.0, 3.0)
        if alpha * lv2 >= 1.0:
            lv2 = thresh
        d, q = rational_spacing(alpha, lv2)
        assert d >= need - 1e-15
        checked += 1
