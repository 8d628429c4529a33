"""Composite-twist orbits, first returns to the square, and the fiber flow.

The non-return witness uses dyadic geometry so every engine operation is
exact in binary floating point: width 3/64 gives block edges 29/128 and
35/128, and with alpha = 16 the start (33/128, u=0) lands after one step on
the fixed lobe point s = 35/128 whose twist jumps 1/2 per passage.
"""

import math
import random
from fractions import Fraction

import numpy as np
import pytest

from linkedtwist import maps
from linkedtwist.dynamics import (
    CubeSet,
    FlowState,
    Layer,
    LinkedTwist,
    NonReturnedError,
    evolve_cube,
    first_return,
    flow_arrays,
    flow_event_count,
    flow_psi,
    make_flow_state,
    step_H,
    validate_cube,
)
from linkedtwist.geometry import (
    Chart,
    Region,
    TrackGeometry,
    build_geometry,
    build_geometry as _bg,
    fold,
    make_point,
    unfold,
)


def _cfg(alpha=3.0, geom=None):
    return LinkedTwist(geom or build_geometry({}), alpha)


def test_linked_twist_winding():
    cfg = LinkedTwist.for_winding(7.0, 2)
    assert cfg.alpha == 7.0
    assert cfg.winding == pytest.approx(2.0, abs=1e-12)
    assert cfg.geom.width_w == pytest.approx(2.0 / 7.0)
    with pytest.raises(ValueError):
        LinkedTwist(build_geometry({}), -1.0)


def test_fixed_point_on_bottom_edge():
    # bottom edge of the strip outside the square: both shears act trivially
    cfg = _cfg(3.0)
    g = cfg.geom
    p = make_point(g, Chart.FOLDED, 0.45, g.y0)
    q = step_H(p, cfg)
    assert q.chart is Chart.FOLDED
    assert q.x == p.x and q.y == p.y


def test_step_H_matches_matrix_locally():
    # central difference of the step around an interior square point
    # reproduces the composite derivative in folded coordinates
    cfg = _cfg(3.0)
    g = cfg.geom
    H = maps.compose_H(3.0)
    base = make_point(g, Chart.FOLDED, 0.2503, 0.2413)
    h = 1e-7
    cols = []
    for dx, dy in ((h, 0.0), (0.0, h)):
        plus = step_H(make_point(g, Chart.FOLDED, base.x + dx, base.y + dy), cfg)
        minus = step_H(make_point(g, Chart.FOLDED, base.x - dx, base.y - dy), cfg)
        cols.append(((plus.x - minus.x) / (2 * h), (plus.y - minus.y) / (2 * h)))
    J = np.array(cols).T
    assert np.allclose(J, H, atol=1e-5)


def test_step_H_chart_agreement():
    cfg = _cfg(3.0)
    g = cfg.geom
    rng = random.Random(5)
    for _ in range(300):
        s = rng.uniform(0, 1)
        y = rng.uniform(g.y0, g.y1)
        p = make_point(g, Chart.UNFOLDED, s, y)
        out_u = step_H(p, cfg)
        out_f = step_H(fold(p), cfg)
        assert out_u.chart is Chart.UNFOLDED and out_f.chart is Chart.FOLDED
        back = unfold(out_f)
        assert math.isclose(back.x, out_u.x, abs_tol=1e-12)
        assert math.isclose(back.y, out_u.y, abs_tol=1e-12)


def test_rational_orbit_torus_oracle():
    # unit-torus model: a rational shear offset p/q cycles the x coordinate
    # through an arithmetic progression with period dividing q
    cfg = maps.ShearConfig(alpha=10.0, k=2)
    pq = Fraction(3, 7)
    y = cfg.y0 + float(pq) / cfg.alpha
    x0 = Fraction(1, 5)
    pt = (float(x0), y)
    seen = [pt[0]]
    for n in range(1, 8):
        pt = maps.shear_F(pt, cfg)
        expect = (x0 + n * pq) % 1
        assert pt[0] == pytest.approx(float(expect), abs=1e-12)
        seen.append(pt[0])
    assert pt[0] == pytest.approx(float(x0), abs=1e-12)  # period divides q = 7


def test_rational_orbit_track_analog():
    # track analog: the dyadic witness advances s by exact multiples of 1/2,
    # so its orbit is confined to a two-point arithmetic progression
    g = build_geometry({"width_w": 3 / 64})
    cfg = LinkedTwist(g, 16.0)
    p = make_point(g, Chart.UNFOLDED, 35 / 128, g.y0 + 4 / 128)
    s_seen = set()
    q = p
    for _ in range(16):
        q = step_H(q, cfg)
        s_seen.add(q.x)
    lattice = {(35 / 128 + m * 0.5) % 1.0 for m in range(2)}
    assert s_seen <= lattice
    assert len(s_seen) == 2  # the half-step rotation fills both lattice points


def test_first_return_immediate():
    cfg = LinkedTwist.for_winding(7.0, 2)
    g = cfg.geom
    rng = random.Random(11)
    found = 0
    for _ in range(200):
        s = rng.uniform(g.x0, g.x1)
        y = rng.uniform(g.y0, g.y1)
        p = make_point(g, Chart.UNFOLDED, s, y)
        ret, steps = first_return(p, cfg, max_iter=10_000)
        if steps == 1:
            img = step_H(p, cfg)
            assert math.isclose(ret.x, img.x, abs_tol=1e-12)
            assert math.isclose(ret.y, img.y, abs_tol=1e-12)
            found += 1
    assert found > 0


def test_first_return_requires_square_start():
    cfg = _cfg(3.0)
    p = make_point(cfg.geom, Chart.UNFOLDED, 0.5, 0.25)
    with pytest.raises(ValueError):
        first_return(p, cfg)


def test_first_return_ensemble_statistics():
    cfg = LinkedTwist.for_winding(7.0, 2)
    g = cfg.geom
    rng = random.Random(13)
    times = []
    for _ in range(10_000):
        s = rng.uniform(g.x0, g.x1)
        y = rng.uniform(g.y0, g.y1)
        p = make_point(g, Chart.UNFOLDED, s, y)
        _, steps = first_return(p, cfg, max_iter=100_000)
        times.append(steps)
    assert len(times) == 10_000  # every sampled point came back
    assert sum(times) / len(times) < 100.0


def test_second_return_composition():
    cfg = LinkedTwist.for_winding(7.0, 2)
    g = cfg.geom
    rng = random.Random(17)
    for _ in range(50):
        p = make_point(g, Chart.UNFOLDED, rng.uniform(g.x0, g.x1), rng.uniform(g.y0, g.y1))
        r1, n1 = first_return(p, cfg)
        r2, n2 = first_return(r1, cfg)
        # direct scan for the second visit
        q, visits, steps = p, 0, 0
        while visits < 2:
            q = step_H(q, cfg)
            steps += 1
            if q.region in (Region.SQUARE_S1, Region.SQUARE_S2):
                visits += 1
        assert steps == n1 + n2
        assert math.isclose(q.x, r2.x, abs_tol=1e-9)
        assert math.isclose(q.y, r2.y, abs_tol=1e-9)


def test_non_returning_rational_witness():
    # gluing the far block's corner onto the near sheet lands exactly on the
    # zero-shear row, one tick past the block edge: a fixed point off the
    # square, so the orbit never comes back
    g = build_geometry({"width_w": 3 / 64})
    cfg = LinkedTwist(g, 16.0)
    p = make_point(g, Chart.UNFOLDED, g.s2_hi, g.y1)
    assert p.region is Region.SQUARE_S2
    one = step_H(p, cfg)
    assert one.x == g.x1 and one.y == g.y0  # exact dyadic landing
    assert one.region is Region.LOBE_A
    two = step_H(one, cfg)
    assert two.x == one.x and two.y == one.y  # the lobe point is fixed
    with pytest.raises(NonReturnedError):
        first_return(p, cfg, max_iter=1_000_000)


def test_flow_state_layers():
    cfg = _cfg(3.0)
    g = cfg.geom
    sq = make_point(g, Chart.FOLDED, 0.25, 0.25)
    lobe = make_point(g, Chart.FOLDED, 0.45, 0.25)
    assert make_flow_state(sq, 0.3).layer is Layer.UPPER
    assert make_flow_state(sq, 0.97).layer is Layer.LOWER
    assert make_flow_state(sq, 0.01).layer is Layer.LOWER
    assert make_flow_state(lobe, 0.3).layer is Layer.LOBE


def test_flow_lobe_fiber_single_event():
    cfg = _cfg(3.0)
    g = cfg.geom
    base = make_point(g, Chart.FOLDED, 0.45, g.y0 + 0.005)
    st = make_flow_state(base, 0.3)
    out = flow_psi(st, 1.0, cfg)
    assert flow_event_count(st, 1.0, cfg) == 1
    assert out.theta == pytest.approx(0.3, abs=1e-9)
    moved = unfold(out.base)
    assert moved.x == pytest.approx(0.45 + 3.0 * 0.005, abs=1e-12)
    assert moved.y == pytest.approx(g.y0 + 0.005, abs=1e-12)


def test_flow_double_layer_two_events():
    cfg = _cfg(3.0)
    g = cfg.geom
    base = make_point(g, Chart.FOLDED, 0.25, 0.25)
    st = make_flow_state(base, 0.0)
    assert flow_event_count(st, 1.0, cfg) == 2


def test_flow_period_equals_step_H_inside_square():
    # base chosen so the composite image lands back in the square: the two
    # fiber crossings in one period then reproduce exactly one composite step
    cfg = _cfg(80.0)
    g = cfg.geom
    base = make_point(g, Chart.UNFOLDED, 0.245, g.y0 + 1.4e-5)
    expect = step_H(base, cfg)
    assert expect.region in (Region.SQUARE_S1, Region.SQUARE_S2)
    st = make_flow_state(fold(base), 0.0)
    out = flow_psi(st, 1.0, cfg)
    assert flow_event_count(st, 1.0, cfg) == 2
    got = unfold(out.base)
    assert math.isclose(got.x, expect.x, abs_tol=1e-12)
    assert math.isclose(got.y, expect.y, abs_tol=1e-12)
    assert out.theta == pytest.approx(0.0, abs=1e-12)


def test_flow_rejects_backward_time():
    cfg = _cfg(3.0)
    st = make_flow_state(make_point(cfg.geom, Chart.FOLDED, 0.45, 0.25), 0.0)
    with pytest.raises(ValueError):
        flow_psi(st, -0.5, cfg)


def test_flow_semigroup():
    cfg = _cfg(3.0)
    g = cfg.geom
    rng = random.Random(23)
    for _ in range(1000):
        s = rng.uniform(0, 1)
        y = rng.uniform(g.y0, g.y1)
        th = rng.uniform(0, 1)
        t1, t2 = rng.uniform(0, 3), rng.uniform(0, 3)
        st = make_flow_state(fold(make_point(g, Chart.UNFOLDED, s, y)), th)
        a = flow_psi(st, t1 + t2, cfg)
        b = flow_psi(flow_psi(st, t1, cfg), t2, cfg)
        ua, ub = unfold(a.base), unfold(b.base)
        ds = abs(ua.x - ub.x)
        ds = min(ds, g.track_length - ds)
        assert ds < 1e-9
        assert abs(ua.y - ub.y) < 1e-9
        dth = abs(a.theta - b.theta)
        assert min(dth, 1 - dth) < 1e-9


def test_flow_arrays_matches_scalar():
    cfg = _cfg(3.0)
    g = cfg.geom
    rng = np.random.default_rng(29)
    n = 200
    s = rng.uniform(0, 1, n)
    y = rng.uniform(g.y0, g.y1, n)
    th = rng.uniform(0, 1, n)
    s2, y2, th2 = flow_arrays(s.copy(), y.copy(), th.copy(), 2.7, g, cfg.alpha)
    for i in range(n):
        st = make_flow_state(fold(make_point(g, Chart.UNFOLDED, s[i], y[i])), th[i])
        out = flow_psi(st, 2.7, cfg)
        u = unfold(out.base)
        assert math.isclose(u.x, s2[i], abs_tol=1e-10)
        assert math.isclose(u.y, y2[i], abs_tol=1e-10)
        assert math.isclose(out.theta, th2[i], abs_tol=1e-10)


def test_cube_validation():
    g = TrackGeometry.for_winding(7.0, 2)
    good = CubeSet((0.45, 0.55), (g.y0 + 0.01, g.y0 + 0.05), epsilon=0.02, center_theta=0.5)
    validate_cube(good, g)
    bad = CubeSet((0.45, 0.55), (g.y0 + 0.01, g.y0 + 0.05), epsilon=0.06, center_theta=0.5)
    with pytest.raises(ValueError, match="2"):
        validate_cube(bad, g)  # 2 eps >= d1 breaks the fiber-width hypothesis
    off_lobe = CubeSet((g.x0, g.x0 + 0.05), (g.y0 + 0.01, g.y0 + 0.05), 0.02, 0.5)
    with pytest.raises(ValueError):
        validate_cube(off_lobe, g)


def test_evolve_cube_identity_and_rigid():
    cfg = LinkedTwist.for_winding(7.0, 2)
    g = cfg.geom
    cube = CubeSet((0.45, 0.5), (g.y0 + 0.05, g.y0 + 0.1), epsilon=0.02, center_theta=0.6)
    ev0 = evolve_cube(cube, 0.0, cfg)
    assert ev0.n_blocks == 1 and not ev0.over_approximate
    # first lobe event fires when the fiber center reaches 0, i.e. after 0.4
    ev_small = evolve_cube(cube, 0.39, cfg)
    assert ev_small.n_blocks == 1
    assert ev_small.center_theta == pytest.approx(0.99, abs=1e-12)


def test_evolve_cube_growth_and_area():
    cfg = LinkedTwist.for_winding(7.0, 2)
    g = cfg.geom
    cube = CubeSet((0.45, 0.5), (g.y0 + 0.05, g.y0 + 0.1), epsilon=0.02, center_theta=0.6)
    area0 = 0.05 * 0.05
    counts = []
    for t in (0.0, 0.5, 1.5, 2.5, 3.0):
        ev = evolve_cube(cube, t, cfg)
        counts.append(ev.n_blocks)
        assert not ev.over_approximate
        assert ev.total_area() == pytest.approx(area0, abs=1e-9)
        assert ev.epsilon == cube.epsilon  # fiber half-width never changes
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] > counts[1] > 1


def test_evolve_cube_budget_coarsening():
    cfg = LinkedTwist.for_winding(7.0, 2)
    g = cfg.geom
    cube = CubeSet((0.42, 0.55), (g.y0 + 0.02, g.y0 + 0.2), epsilon=0.02, center_theta=0.6)
    ev = evolve_cube(cube, 12.0, cfg, block_budget=6)
    assert ev.over_approximate
    assert ev.n_blocks <= 6
    assert ev.total_area() >= 0.13 * 0.18 - 1e-9  # hull only ever over-covers
