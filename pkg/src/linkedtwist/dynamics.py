"""Orbits of the composite twist and the suspension flow over the track.

The composite step works in the unfolded chart and mirrors how the two
passages are traversed: a point stored on the V sheet inside the second
square block is first glued back to the W sheet, the horizontal-passage
twist acts on circumferential positions in the first half of the circle,
then the gluing into the vertical passage is applied on the first square
block and the oppositely oriented twist acts on the second half.  Every
point is twisted exactly once per step, so the step permutes each shear
row rigidly and preserves area; the one exception is material glued onto
the vertical passage mid-step, which is sheared on both sides of the
gluing and picks up the hyperbolic block of the composite.

The flow lifts the same moves to the unit tangent fibers.  A fiber over a
lobe point crosses the track once per turn, at angle 0; a fiber over a
square point crosses twice, at d1/2 (horizontal passage) and 1 - d1/2
(vertical passage).  Between crossings the base is frozen and the angle
advances at unit speed, so the angle coordinate moves rigidly: theta(t) =
theta(0) + t mod 1 regardless of the base.  Events are applied the moment
the angle reaches a crossing; an angle starting exactly on a crossing
waits a full turn before that crossing fires again.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from shapely import affinity
from shapely.geometry import GeometryCollection, MultiPolygon, Polygon, box
from shapely.ops import unary_union

from . import maps
from .geometry import (
    SQUARES,
    Chart,
    Region,
    TrackGeometry,
    TrackPoint,
    fold,
    make_point,
    unfold,
)


class NonReturnedError(RuntimeError):
    """Raised when an orbit fails to revisit the square within the budget."""


@dataclass(frozen=True)
class LinkedTwist:
    """Shear strength paired with the track it acts on."""

    geom: TrackGeometry
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be positive and finite")

    @property
    def winding(self) -> float:
        """How many times the twist wraps the top edge around the track."""
        return self.alpha * self.geom.width_w / self.geom.track_length

    @property
    def eigen(self):
        """Eigendata of the composite shear matrix, None below the threshold."""
        if self.alpha < 2.0:
            return None
        return maps.eigen(self.alpha)

    @classmethod
    def for_winding(
        cls,
        alpha: float,
        k: int,
        track_length: float = 1.0,
        layer_gap_d1: float = 0.1,
    ) -> "LinkedTwist":
        geom = TrackGeometry.for_winding(alpha, k, track_length, layer_gap_d1)
        return cls(geom, float(alpha))


def _check_same_geometry(p: TrackPoint, cfg: LinkedTwist) -> None:
    if p.geom != cfg.geom:
        raise ValueError("point was built on a different geometry")


def _h_step(s: float, y: float, g: TrackGeometry, alpha: float) -> Tuple[float, float]:
    """One composite step in unfolded coordinates.

    Each point is twisted exactly once per step, except square passengers:
    material converted onto the vertical passage mid-step is twisted on
    both sides of the conversion, which is what builds the hyperbolic
    block.  A twisted point that wraps past the half-way seam without
    entering the first square block must not be twisted again; forgetting
    that guard double-moves a band of lobe material and breaks area
    preservation.
    """
    C = g.track_length
    half = g.strip_length
    if g.s2_lo < s <= g.s2_hi:
        s, y = g.x0 + (y - g.y0), C - s
    moved = s < half
    if moved:
        s = (s + alpha * (y - g.y0)) % C
    converted = g.x0 <= s < g.x1
    if converted:
        s, y = C - y, g.y0 + (s - g.x0)
    if s >= half and (not moved or converted):
        s = (s + alpha * (y - g.y0)) % C
    return s, y


def step_H(p: TrackPoint, cfg: LinkedTwist) -> TrackPoint:
    """Apply one pass of both passage twists, preserving the input chart."""
    _check_same_geometry(p, cfg)
    folded_in = p.chart is Chart.FOLDED
    q = unfold(p) if folded_in else p
    s, y = _h_step(q.x, q.y, cfg.geom, cfg.alpha)
    out = make_point(cfg.geom, Chart.UNFOLDED, s, y)
    return fold(out) if folded_in else out


def orbit(p: TrackPoint, cfg: LinkedTwist, n: int) -> List[TrackPoint]:
    """The first n iterates of p, starting with p itself."""
    pts = [p]
    for _ in range(n):
        pts.append(step_H(pts[-1], cfg))
    return pts


def first_return(
    p: TrackPoint, cfg: LinkedTwist, max_iter: int = 1_000_000
) -> Tuple[TrackPoint, int]:
    """First revisit of the central square, with the number of steps taken.

    The start must lie in the square; membership is tested after each full
    composite step, so passages through the square mid-step do not count.
    """
    _check_same_geometry(p, cfg)
    g = cfg.geom
    folded_in = p.chart is Chart.FOLDED
    q = unfold(p) if folded_in else p
    x0, x1, s2l, s2h = g.x0, g.x1, g.s2_lo, g.s2_hi
    if not (x0 <= q.x < x1 or s2l < q.x <= s2h):
        raise ValueError("first_return needs a start inside the crossing square")
    C = g.track_length
    half = g.strip_length
    y0 = g.y0
    a = cfg.alpha
    s, y = q.x, q.y
    for n in range(1, max_iter + 1):
        if s2l < s <= s2h:
            s, y = x0 + (y - y0), C - s
        moved = s < half
        if moved:
            s = (s + a * (y - y0)) % C
        converted = x0 <= s < x1
        if converted:
            s, y = C - y, y0 + (s - x0)
        if s >= half and (not moved or converted):
            s = (s + a * (y - y0)) % C
        if x0 <= s < x1 or s2l < s <= s2h:
            out = make_point(g, Chart.UNFOLDED, s, y)
            return (fold(out) if folded_in else out), n
    raise NonReturnedError(
        f"orbit did not revisit the square within {max_iter} iterations"
    )


def h_step_arrays(s: np.ndarray, y: np.ndarray, g: TrackGeometry, alpha: float):
    """Vectorized composite step; mutates s and y in place and returns them."""
    C = g.track_length
    half = g.strip_length
    y0, x0 = g.y0, g.x0
    in2 = (g.s2_lo < s) & (s <= g.s2_hi)
    if in2.any():
        snew = x0 + (y[in2] - y0)
        y[in2] = C - s[in2]
        s[in2] = snew
    moved = s < half
    s[moved] = (s[moved] + alpha * (y[moved] - y0)) % C
    in1 = (x0 <= s) & (s < g.x1)
    if in1.any():
        ynew = y0 + (s[in1] - x0)
        s[in1] = C - y[in1]
        y[in1] = ynew
    m = (s >= half) & (~moved | in1)
    s[m] = (s[m] + alpha * (y[m] - y0)) % C
    return s, y


def h_step_with_tangent(
    s: np.ndarray,
    y: np.ndarray,
    ts: np.ndarray,
    ty: np.ndarray,
    g: TrackGeometry,
    alpha: float,
) -> np.ndarray:
    """Composite step carrying tangent vectors, all arrays updated in place.

    Gluings rotate tangents by a quarter turn, twists shear them.  Returns
    the mask of orbits whose tangent picked up a quarter turn this step,
    i.e. those that crossed between the two sheets through the square.
    """
    C = g.track_length
    half = g.strip_length
    y0, x0 = g.y0, g.x0
    in2 = (g.s2_lo < s) & (s <= g.s2_hi)
    if in2.any():
        snew = x0 + (y[in2] - y0)
        y[in2] = C - s[in2]
        s[in2] = snew
        tnew = ty[in2].copy()
        ty[in2] = -ts[in2]
        ts[in2] = tnew
    moved = s < half
    s[moved] = (s[moved] + alpha * (y[moved] - y0)) % C
    ts[moved] += alpha * ty[moved]
    in1 = (x0 <= s) & (s < g.x1)
    if in1.any():
        ynew = y0 + (s[in1] - x0)
        s[in1] = C - y[in1]
        y[in1] = ynew
        tnew = ts[in1].copy()
        ts[in1] = -ty[in1]
        ty[in1] = tnew
    m = (s >= half) & (~moved | in1)
    s[m] = (s[m] + alpha * (y[m] - y0)) % C
    ts[m] += alpha * ty[m]
    return in2 | in1


class Layer(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"
    LOBE = "lobe"


@dataclass(frozen=True)
class FlowState:
    """A unit-speed fiber position over a folded base point."""

    base: TrackPoint
    theta: float

    def __post_init__(self):
        if self.base.chart is not Chart.FOLDED:
            raise ValueError("flow states carry the base in the folded chart")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must be normalized to [0, 1)")

    @property
    def layer(self) -> Layer:
        """Which sheet of the double cover the fiber point currently sits on."""
        u = unfold(self.base)
        if u.region not in SQUARES:
            return Layer.LOBE
        lo = 0.5 * self.base.geom.layer_gap_d1
        if lo <= self.theta < 1.0 - lo:
            return Layer.UPPER
        return Layer.LOWER


def make_flow_state(base: TrackPoint, theta: float) -> FlowState:
    """Build a flow state, folding the base and wrapping the angle."""
    if base.chart is not Chart.FOLDED:
        base = fold(base)
    return FlowState(base, theta % 1.0)


def _next_gap(angle: float, theta: float) -> float:
    gap = (angle - theta) % 1.0
    return gap if gap > 0.0 else 1.0


def _flow_scalar(s, y, theta, t, g, alpha):
    C = g.track_length
    x0, x1, s2l, s2h, y0 = g.x0, g.x1, g.s2_lo, g.s2_hi, g.y0
    th_f = 0.5 * g.layer_gap_d1
    th_g = 1.0 - th_f
    rem = t
    events = 0
    while True:
        in1 = x0 <= s < x1
        in2 = s2l < s <= s2h
        if in1 or in2:
            gf = _next_gap(th_f, theta)
            gg = _next_gap(th_g, theta)
            if gf <= gg:
                gap, angle, kind = gf, th_f, 0
            else:
                gap, angle, kind = gg, th_g, 1
        else:
            gap, angle, kind = _next_gap(0.0, theta), 0.0, 2
        if gap > rem:
            break
        rem -= gap
        theta = angle
        events += 1
        if kind == 0 and in2:
            s, y = x0 + (y - y0), C - s
        elif kind == 1 and in1:
            s, y = C - y, y0 + (s - x0)
        s = (s + alpha * (y - y0)) % C
    return s, y, (theta + rem) % 1.0, events


def flow_psi(state: FlowState, t: float, cfg: LinkedTwist) -> FlowState:
    """Advance the suspension flow forward by time t."""
    _check_same_geometry(state.base, cfg)
    if t < 0:
        raise ValueError("the flow is advanced forward only")
    q = unfold(state.base)
    s, y, theta, _ = _flow_scalar(q.x, q.y, state.theta, t, cfg.geom, cfg.alpha)
    out = fold(make_point(cfg.geom, Chart.UNFOLDED, s, y))
    return FlowState(out, theta)


def flow_event_count(state: FlowState, t: float, cfg: LinkedTwist) -> int:
    """How many track crossings the fiber point makes in forward time t."""
    _check_same_geometry(state.base, cfg)
    if t < 0:
        raise ValueError("the flow is advanced forward only")
    q = unfold(state.base)
    return _flow_scalar(q.x, q.y, state.theta, t, cfg.geom, cfg.alpha)[3]


def flow_arrays(s, y, theta, t, g: TrackGeometry, alpha: float):
    """Vectorized flow advance; mutates the arrays in place and returns them."""
    if t < 0:
        raise ValueError("the flow is advanced forward only")
    C = g.track_length
    x0, x1, s2l, s2h, y0 = g.x0, g.x1, g.s2_lo, g.s2_hi, g.y0
    th_f = 0.5 * g.layer_gap_d1
    th_g = 1.0 - th_f
    rem = np.full(s.shape, float(t))
    while True:
        in1 = (x0 <= s) & (s < x1)
        in2 = (s2l < s) & (s <= s2h)
        sq = in1 | in2
        gf = (th_f - theta) % 1.0
        gf[gf == 0.0] = 1.0
        gg = (th_g - theta) % 1.0
        gg[gg == 0.0] = 1.0
        gl = (-theta) % 1.0
        gl[gl == 0.0] = 1.0
        gap = np.where(sq, np.minimum(gf, gg), gl)
        fire = gap <= rem
        if not fire.any():
            break
        done = ~fire & (rem > 0.0)
        theta[done] = (theta[done] + rem[done]) % 1.0
        rem[done] = 0.0
        rem[fire] -= gap[fire]
        f_ev = fire & sq & (gf <= gg)
        g_ev = fire & sq & (gg < gf)
        l_ev = fire & ~sq
        m = f_ev & in2
        if m.any():
            snew = x0 + (y[m] - y0)
            y[m] = C - s[m]
            s[m] = snew
        m = g_ev & in1
        if m.any():
            ynew = y0 + (s[m] - x0)
            s[m] = C - y[m]
            y[m] = ynew
        s[fire] = (s[fire] + alpha * (y[fire] - y0)) % C
        theta[f_ev] = th_f
        theta[g_ev] = th_g
        theta[l_ev] = 0.0
    last = rem > 0.0
    theta[last] = (theta[last] + rem[last]) % 1.0
    return s, y, theta


@dataclass(frozen=True)
class CubeSet:
    """Product of a base rectangle on a lobe with a fiber angle window.

    The window is [center_theta - epsilon, center_theta + epsilon]; its
    width 2 epsilon must stay below the layer gap d1 so the set never meets
    both crossing layers at once.
    """

    s_interval: Tuple[float, float]
    y_interval: Tuple[float, float]
    epsilon: float
    center_theta: float


def validate_cube(cube: CubeSet, g: TrackGeometry) -> None:
    s_lo, s_hi = cube.s_interval
    y_lo, y_hi = cube.y_interval
    if not 0.0 <= s_lo < s_hi <= g.track_length:
        raise ValueError("s_interval must be an increasing range inside the track")
    if not g.y0 <= y_lo < y_hi <= g.y1:
        raise ValueError("y_interval must be an increasing range across the band")
    if not cube.epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    if 2.0 * cube.epsilon >= g.layer_gap_d1:
        raise ValueError(
            "fiber window 2 * epsilon must stay below the layer gap d1; a wider "
            "window meets both crossing layers at once and voids the construction"
        )
    in_lobe_a = g.x1 <= s_lo and s_hi <= g.s2_lo
    in_lobe_b = s_hi <= g.x0 or g.s2_hi <= s_lo
    if not (in_lobe_a or in_lobe_b):
        raise ValueError("cube base must lie inside a single lobe arc")


@dataclass
class CubeBlock:
    polygon: Polygon
    region: Region


@dataclass
class CubeEvolution:
    """Piecewise image of a cube under the flow, as fiber-aligned blocks.

    Every block keeps the full fiber window of width 2 epsilon around the
    common center angle; only the base rectangles get cut and sheared.
    """

    blocks: List[CubeBlock]
    center_theta: float
    epsilon: float
    time: float
    over_approximate: bool

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def total_area(self) -> float:
        return sum(b.polygon.area for b in self.blocks)


_MIN_AREA = 1e-14


def _cells(g: TrackGeometry):
    return (
        (box(0.0, g.y0, g.x0, g.y1), Region.LOBE_B),
        (box(g.x0, g.y0, g.x1, g.y1), Region.SQUARE_S1),
        (box(g.x1, g.y0, g.s2_lo, g.y1), Region.LOBE_A),
        (box(g.s2_lo, g.y0, g.s2_hi, g.y1), Region.SQUARE_S2),
        (box(g.s2_hi, g.y0, g.track_length, g.y1), Region.LOBE_B),
    )


def _polygons_of(geomobj):
    if isinstance(geomobj, Polygon):
        return [geomobj]
    if isinstance(geomobj, (MultiPolygon, GeometryCollection)):
        return [p for p in geomobj.geoms if isinstance(p, Polygon)]
    return []


def _split_regions(poly, cells) -> List[CubeBlock]:
    out = []
    for cell, region in cells:
        part = poly.intersection(cell)
        for piece in _polygons_of(part):
            if piece.area > _MIN_AREA:
                out.append(CubeBlock(piece, region))
    return out


def _twist_blocks(blocks, g: TrackGeometry, alpha: float, cells) -> List[CubeBlock]:
    """Shear the base rectangles, wrap around the track, re-cut at region edges."""
    C = g.track_length
    out = []
    for b in blocks:
        sheared = affinity.affine_transform(
            b.polygon, [1.0, alpha, 0.0, 1.0, -alpha * g.y0, 0.0]
        )
        lo = math.floor(sheared.bounds[0] / C)
        hi = math.ceil(sheared.bounds[2] / C)
        for m in range(lo, hi):
            window = box(m * C, g.y0 - 1.0, (m + 1) * C, g.y1 + 1.0)
            piece = sheared.intersection(window)
            for poly in _polygons_of(piece):
                if poly.area > _MIN_AREA:
                    out.extend(_split_regions(affinity.translate(poly, -m * C), cells))
    return out


def _glue_s2(b: CubeBlock, g: TrackGeometry) -> CubeBlock:
    poly = affinity.affine_transform(
        b.polygon, [0.0, 1.0, -1.0, 0.0, g.x0 - g.y0, g.track_length]
    )
    return CubeBlock(poly, Region.SQUARE_S1)


def _glue_s1(b: CubeBlock, g: TrackGeometry) -> CubeBlock:
    poly = affinity.affine_transform(
        b.polygon, [0.0, -1.0, 1.0, 0.0, g.track_length, g.y0 - g.x0]
    )
    return CubeBlock(poly, Region.SQUARE_S2)


def _coarsen(blocks, cells) -> List[CubeBlock]:
    """Replace each region's blocks by their convex hull clipped to the region."""
    out = []
    for region in (Region.SQUARE_S1, Region.SQUARE_S2, Region.LOBE_A, Region.LOBE_B):
        polys = [b.polygon for b in blocks if b.region is region]
        if not polys:
            continue
        hull = unary_union(polys).convex_hull
        for cell, cell_region in cells:
            if cell_region is not region:
                continue
            for poly in _polygons_of(hull.intersection(cell)):
                if poly.area > _MIN_AREA:
                    out.append(CubeBlock(poly, region))
    return out


def evolve_cube(
    cube: CubeSet, t: float, cfg: LinkedTwist, block_budget: int = 2000
) -> CubeEvolution:
    """Push a cube forward under the flow for time t.

    Fires the same crossing events as the pointwise flow, scheduled by the
    common center angle of the fiber window, and cuts base rectangles at
    region boundaries so each block is carried by a single affine move.
    Exceeding the block budget coarsens the collection to per-region convex
    hulls and sets the over_approximate flag.
    """
    if t < 0:
        raise ValueError("the flow is advanced forward only")
    g = cfg.geom
    validate_cube(cube, g)
    cells = _cells(g)
    s_lo, s_hi = cube.s_interval
    y_lo, y_hi = cube.y_interval
    region0 = Region.LOBE_A if g.x1 <= s_lo else Region.LOBE_B
    blocks = [CubeBlock(box(s_lo, y_lo, s_hi, y_hi), region0)]
    theta = cube.center_theta % 1.0
    th_f = 0.5 * g.layer_gap_d1
    th_g = 1.0 - th_f
    rem = float(t)
    over = False
    while True:
        have_sq = any(b.region in SQUARES for b in blocks)
        have_lobe = any(b.region not in SQUARES for b in blocks)
        options = []
        if have_sq:
            options.append((_next_gap(th_f, theta), th_f, 0))
            options.append((_next_gap(th_g, theta), th_g, 1))
        if have_lobe:
            options.append((_next_gap(0.0, theta), 0.0, 2))
        gap, angle, kind = min(options, key=lambda o: o[0])
        if gap > rem:
            break
        rem -= gap
        theta = angle
        moving, still = [], []
        for b in blocks:
            if (b.region in SQUARES) == (kind in (0, 1)):
                moving.append(b)
            else:
                still.append(b)
        if kind == 0:
            moving = [_glue_s2(b, g) if b.region is Region.SQUARE_S2 else b for b in moving]
        elif kind == 1:
            moving = [_glue_s1(b, g) if b.region is Region.SQUARE_S1 else b for b in moving]
        blocks = still + _twist_blocks(moving, g, cfg.alpha, cells)
        if len(blocks) > block_budget:
            blocks = _coarsen(blocks, cells)
            over = True
    return CubeEvolution(
        blocks, (cube.center_theta + t) % 1.0, cube.epsilon, float(t), over
    )
