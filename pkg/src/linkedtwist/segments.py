"""Linear segment dynamics on the unfolded track.

A segment is carried through one composite step by applying the same four
phases as the pointwise map, cutting the segment wherever a phase boundary
crosses it so that each output piece transforms by a single affine rule.
On top of that engine sit the return-segment decomposition, the rational
orbit spacing bound, the per-return growth conditions, and the expansion
certifier that iterates an unstable segment until the square holds a full
vertical or horizontal crossing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from . import maps
from .dynamics import LinkedTwist
from .geometry import (
    SQUARES,
    Chart,
    Region,
    TrackGeometry,
    TrackPoint,
    make_point,
    region_of_unfolded,
)

_CUT_TOL = 1e-12
_MIN_LEN = 1e-12
_SPAN_TOL = 1e-9

# endpoints-as-tuples pipeline representation: ((s0, y0), (s1, y1))
_Piece = Tuple[Tuple[float, float], Tuple[float, float]]


class UnclassifiedReturnError(RuntimeError):
    """Return segment fits neither the one-square nor two-square case."""


class NoCertificateError(RuntimeError):
    """Certification ran out of iterations before a full crossing appeared."""

    def __init__(self, message: str, growth_factors: Sequence[float] = ()):
        super().__init__(message)
        self.growth_factors = tuple(growth_factors)


@dataclass(frozen=True)
class LinearSegment:
    """Straight segment in the unfolded chart.

    anchor fixes one endpoint, direction the line it extends along, and
    length how far.  Vertical and horizontal extents come from projecting
    the segment on the two axes.
    """

    anchor: TrackPoint
    direction: Tuple[float, float]
    length: float

    def __post_init__(self):
        if self.anchor.chart is not Chart.UNFOLDED:
            raise ValueError("segments anchor in the unfolded chart")
        n = math.hypot(self.direction[0], self.direction[1])
        if n == 0.0 or not self.length > 0.0:
            raise ValueError("segment needs a direction and a positive length")
        g = self.anchor.geom
        ex = self.anchor.x + self.direction[0] / n * self.length
        ey = self.anchor.y + self.direction[1] / n * self.length
        if not (g.y0 - _SPAN_TOL <= ey <= g.y1 + _SPAN_TOL):
            raise ValueError("segment leaves the annulus band")
        if not (-_SPAN_TOL <= ex <= g.track_length + _SPAN_TOL):
            raise ValueError("segment crosses the track wrap; cut it first")

    @property
    def _unit(self) -> Tuple[float, float]:
        dx, dy = self.direction
        n = math.hypot(dx, dy)
        return dx / n, dy / n

    @property
    def l_v(self) -> float:
        return abs(self._unit[1]) * self.length

    @property
    def l_h(self) -> float:
        return abs(self._unit[0]) * self.length

    def endpoints(self) -> _Piece:
        ux, uy = self._unit
        ax, ay = self.anchor.x, self.anchor.y
        return (ax, ay), (ax + ux * self.length, ay + uy * self.length)

    def point_at(self, t: float) -> Tuple[float, float]:
        ux, uy = self._unit
        return self.anchor.x + ux * t, self.anchor.y + uy * t

    @property
    def region(self) -> Region:
        """Region of the midpoint; cut pieces are single-region."""
        g = self.anchor.geom
        mid = self.point_at(0.5 * self.length)
        return region_of_unfolded(g, mid[0] % g.track_length)


# ---------------------------------------------------------------------------
# cutting engine


def _subdivide(piece: _Piece, cuts: Sequence[float]) -> List[_Piece]:
    (s0, y0), (s1, y1) = piece
    ds = s1 - s0
    if ds == 0.0:
        return [piece]
    lo, hi = (s0, s1) if s0 < s1 else (s1, s0)
    ts = sorted((c - s0) / ds for c in cuts if lo + _CUT_TOL < c < hi - _CUT_TOL)
    if not ts:
        return [piece]
    out = []
    prev = (s0, y0)
    for t in ts + [1.0]:
        nxt = (s0 + ds * t, y0 + (y1 - y0) * t)
        out.append((prev, nxt))
        prev = nxt
    return out


def _mid_s(piece: _Piece) -> float:
    return 0.5 * (piece[0][0] + piece[1][0])


def _glue_back(piece: _Piece, g: TrackGeometry) -> List[_Piece]:
    """First phase: pieces inside the far block fold onto the square."""
    out = []
    for q in _subdivide(piece, (g.s2_lo, g.s2_hi)):
        if g.s2_lo < _mid_s(q) <= g.s2_hi:
            q = tuple((g.x0 + (y - g.y0), g.track_length - s) for s, y in q)
        out.append(q)
    return out


def _wrap_track(piece: _Piece, C: float) -> List[_Piece]:
    (s0, _), (s1, _) = piece
    lo, hi = min(s0, s1), max(s0, s1)
    cuts = [m * C for m in range(math.floor(lo / C) + 1, math.ceil(hi / C))]
    out = []
    for q in _subdivide(piece, cuts):
        m = math.floor(_mid_s(q) / C)
        if m:
            q = tuple((s - m * C, y) for s, y in q)
        out.append(q)
    return out


def _twist_whole(piece: _Piece, g: TrackGeometry, alpha: float) -> List[_Piece]:
    """Shear applied to the piece as one affine move, wrapped at the track."""
    tw = tuple((s + alpha * (y - g.y0), y) for s, y in piece)
    return _wrap_track(tw, g.track_length)


def _rebuild(pieces: Sequence[_Piece], g: TrackGeometry) -> List[LinearSegment]:
    C = g.track_length
    out = []
    for (s0, y0), (s1, y1) in pieces:
        dx, dy = s1 - s0, y1 - y0
        length = math.hypot(dx, dy)
        if length < _MIN_LEN:
            continue
        if not 0.0 <= s0 < C:  # keep the anchor on the fundamental domain
            s0, y0, s1, y1 = s1, y1, s0, y0
            dx, dy = -dx, -dy
        s0 = min(max(s0, 0.0), math.nextafter(C, 0.0))
        y0 = min(max(y0, g.y0), g.y1)
        anchor = make_point(g, Chart.UNFOLDED, s0, y0)
        out.append(LinearSegment(anchor, (dx, dy), length))
    return out


def _phase_pipeline(seg: LinearSegment, cfg: LinkedTwist) -> List[_Piece]:
    """The four phases of the composite step, applied to cut pieces in order.

    A piece is twisted at most once per step unless it is glued onto the
    far block mid-step; the moved flag carries that bookkeeping, matching
    the pointwise map, so wrapping past the half-way seam never earns a
    second shear.
    """
    g = cfg.geom
    half = g.strip_length
    pieces: List[_Piece] = [seg.endpoints()]
    pieces = [q for p in pieces for q in _glue_back(p, g)]
    staged: List[Tuple[_Piece, bool]] = []
    for p in pieces:
        for q in _subdivide(p, (half,)):
            if _mid_s(q) < half:
                staged.extend((w, True) for w in _twist_whole(q, g, cfg.alpha))
            else:
                staged.append((q, False))
    relabeled: List[Tuple[_Piece, bool]] = []
    for p, moved in staged:
        for q in _subdivide(p, (g.x0, g.x1)):
            if g.x0 <= _mid_s(q) < g.x1:
                q = tuple((g.track_length - y, g.y0 + (s - g.x0)) for s, y in q)
                relabeled.append((q, False))
            else:
                relabeled.append((q, moved))
    out: List[_Piece] = []
    for p, moved in relabeled:
        for q in _subdivide(p, (half,)):
            if _mid_s(q) >= half and not moved:
                out.extend(_twist_whole(q, g, cfg.alpha))
            else:
                out.append(q)
    return out


def _stitch_arcs(pieces: Sequence[_Piece], C: float) -> List[_Piece]:
    """Rejoin the ordered pipeline output into maximal straight arcs.

    Cuts made at intermediate phase boundaries leave collinear neighbours
    when both sides followed the same overall branch; those are bookkeeping,
    not corners of the image curve, so they are merged away.  Arcs are kept
    unwrapped: a piece continuing across the track wrap extends its arc
    shifted by a whole number of track lengths, so an arc's track
    coordinate can leave [0, C].
    """
    arcs: List[_Piece] = []
    cur: Optional[_Piece] = None
    for a, b in pieces:
        if cur is not None:
            ex, ey = cur[1]
            k = round((ex - a[0]) / C)
            ax, ay = a[0] + k * C, a[1]
            bx, by = b[0] + k * C, b[1]
            if abs(ax - ex) < 1e-12 and abs(ay - ey) < 1e-12:
                d1 = (ex - cur[0][0], ey - cur[0][1])
                d2 = (bx - ax, by - ay)
                n1 = math.hypot(d1[0], d1[1])
                n2 = math.hypot(d2[0], d2[1])
                cross = d1[0] * d2[1] - d1[1] * d2[0]
                dot = d1[0] * d2[0] + d1[1] * d2[1]
                if n1 < 1e-10 or n2 < 1e-10 or (
                        abs(cross) <= 1e-9 * n1 * n2 and dot >= 0.0):
                    cur = (cur[0], (bx, by))
                    continue
            arcs.append(cur)
        cur = ((a[0], a[1]), (b[0], b[1]))
    if cur is not None:
        arcs.append(cur)
    return arcs


def _image_arcs(seg: LinearSegment, cfg: LinkedTwist) -> List[_Piece]:
    if seg.anchor.geom != cfg.geom:
        raise ValueError("segment was built on a different geometry")
    return _stitch_arcs(_phase_pipeline(seg, cfg), cfg.geom.track_length)


def iterate_segment(seg: LinearSegment, cfg: LinkedTwist) -> List[LinearSegment]:
    """Image of a segment under one composite step, as straight pieces.

    The segment is cut where the image curve genuinely bends (a block edge
    or sheet seam separated the branches), and additionally at the track
    wrap so every returned piece fits the fundamental domain.  Pieces
    shorter than the cutting tolerance are dropped.
    """
    C = cfg.geom.track_length
    arcs = _image_arcs(seg, cfg)
    wrapped = [q for arc in arcs for q in _wrap_track(arc, C)]
    return _rebuild(wrapped, cfg.geom)


def twist_image(seg: LinearSegment, cfg: LinkedTwist) -> List[LinearSegment]:
    """Shear applied to the whole segment, cut only at the track wrap.

    This is the matrix action of a single passage twist with no gluing,
    so a segment crossing the square maps to one straight image piece
    unless it wraps.
    """
    if seg.anchor.geom != cfg.geom:
        raise ValueError("segment was built on a different geometry")
    pieces = _twist_whole(seg.endpoints(), cfg.geom, cfg.alpha)
    return _rebuild(pieces, cfg.geom)


# ---------------------------------------------------------------------------
# return decomposition


@dataclass(frozen=True)
class SegmentDecomposition:
    """Labelled pieces of a return segment.

    One-square case: I4 is the part inside the square, I1/I2/I3 divide the
    outside part by vertical extent with I3 touching the edge, and I2 is
    halved into I2_prime and I2_doubleprime.  Two-square case: I1 and I3
    are the parts inside each square, I2 the crossing between them, I4
    empty.  Absent pieces are None.
    """

    I1: Optional[LinearSegment]
    I2_prime: Optional[LinearSegment]
    I2_doubleprime: Optional[LinearSegment]
    I3: Optional[LinearSegment]
    I4: Optional[LinearSegment]

    def pieces(self) -> Tuple[LinearSegment, ...]:
        parts = (self.I1, self.I2_prime, self.I2_doubleprime, self.I3, self.I4)
        return tuple(p for p in parts if p is not None)


def _span(seg: LinearSegment) -> Tuple[float, float]:
    (s0, _), (s1, _) = seg.endpoints()
    return (s0, s1) if s0 <= s1 else (s1, s0)


def _piece_between(seg: LinearSegment, ta: float, tb: float) -> Optional[LinearSegment]:
    """Sub-segment between two parameters of the low-to-high-s orientation."""
    g = seg.anchor.geom
    (s0, y0), (s1, y1) = seg.endpoints()
    if s1 < s0:
        s0, y0, s1, y1 = s1, y1, s0, y0
    if tb - ta < _MIN_LEN / max(seg.length, 1.0):
        return None
    ax, ay = s0 + (s1 - s0) * ta, y0 + (y1 - y0) * ta
    bx, by = s0 + (s1 - s0) * tb, y0 + (y1 - y0) * tb
    dx, dy = bx - ax, by - ay
    ln = math.hypot(dx, dy)
    if ln < _MIN_LEN:
        return None
    ay = min(max(ay, g.y0), g.y1)
    return LinearSegment(make_point(g, Chart.UNFOLDED, ax, ay), (dx, dy), ln)


def decompose_return(seg: LinearSegment, geom: TrackGeometry) -> SegmentDecomposition:
    """Split a return segment into the labelled pieces used by the growth
    conditions.

    A segment wholly inside one square is all I1.  A segment meeting both
    squares is cut at the block edges into I1, I2 (halved), I3.  A segment
    leaving one square across a single edge gets the inside part as I4 and
    the outside part divided into three pieces of equal vertical extent,
    I3 adjacent to the edge and I1 farthest; I2 is halved at its midpoint.
    The interior markers the spacing argument singles out constrain the
    orbit, not the decomposition, so equal thirds fix the labels.
    Anything else raises UnclassifiedReturnError.
    """
    if seg.anchor.geom != geom:
        raise ValueError("segment was built on a different geometry")
    g = geom
    slo, shi = _span(seg)

    def frac(s: float) -> float:
        return (s - slo) / (shi - slo) if shi > slo else 0.0

    in1 = g.x0 - _CUT_TOL <= slo and shi <= g.x1 + _CUT_TOL
    in2 = g.s2_lo - _CUT_TOL <= slo and shi <= g.s2_hi + _CUT_TOL
    if in1 or in2:
        return SegmentDecomposition(seg, None, None, None, None)
    if shi - slo < _MIN_LEN:  # vertical but outside both blocks
        raise UnclassifiedReturnError("vertical segment off the square")

    ov1 = min(shi, g.x1) - max(slo, g.x0)
    ov2 = min(shi, g.s2_hi) - max(slo, g.s2_lo)
    if ov1 > _MIN_LEN and ov2 > _MIN_LEN:
        if slo < g.x0 - _CUT_TOL or shi > g.s2_hi + _CUT_TOL:
            raise UnclassifiedReturnError("segment extends past both squares")
        ta, tb = frac(g.x1), frac(g.s2_lo)
        tm = 0.5 * (ta + tb)
        return SegmentDecomposition(
            I1=_piece_between(seg, 0.0, ta),
            I2_prime=_piece_between(seg, ta, tm),
            I2_doubleprime=_piece_between(seg, tm, tb),
            I3=_piece_between(seg, tb, 1.0),
            I4=None,
        )

    for blo, bhi, nxt in ((g.x0, g.x1, g.s2_lo), (g.s2_lo, g.s2_hi, None)):
        ov = min(shi, bhi) - max(slo, blo)
        if ov <= _MIN_LEN:
            continue
        if slo < blo - _CUT_TOL and shi <= bhi + _CUT_TOL:
            # crosses the left edge: outside part below blo, inside above
            te = frac(blo)
            step = te / 3.0
            return SegmentDecomposition(
                I1=_piece_between(seg, 0.0, step),
                I2_prime=_piece_between(seg, step, 1.5 * step),
                I2_doubleprime=_piece_between(seg, 1.5 * step, 2.0 * step),
                I3=_piece_between(seg, 2.0 * step, te),
                I4=_piece_between(seg, te, 1.0),
            )
        if slo >= blo - _CUT_TOL and shi > bhi + _CUT_TOL:
            if nxt is not None and shi > nxt + _CUT_TOL:
                raise UnclassifiedReturnError("segment reaches the far square")
            # crosses the right edge: mirrored labels, I1 farthest out
            te = frac(bhi)
            step = (1.0 - te) / 3.0
            return SegmentDecomposition(
                I1=_piece_between(seg, 1.0 - step, 1.0),
                I2_prime=_piece_between(seg, te + 1.5 * step, 1.0 - step),
                I2_doubleprime=_piece_between(seg, te + step, te + 1.5 * step),
                I3=_piece_between(seg, te, te + step),
                I4=_piece_between(seg, 0.0, te),
            )
    raise UnclassifiedReturnError("segment does not meet the square")


# ---------------------------------------------------------------------------
# spacing and growth conditions


def rational_spacing(alpha: float, lv_I2: float) -> Tuple[float, int]:
    """Spacing d = 1/q of the coarsest rational orbit a sheared extent
    alpha * lv_I2 is guaranteed to straddle: 1/q < alpha*lv_I2 <= 1/(q-1).

    When alpha * lv_I2 >= 1 any unit spacing works and (1.0, 1) is
    returned.
    """
    x = alpha * lv_I2
    if not x > 0.0:
        raise ValueError("alpha * lv_I2 must be positive")
    if x >= 1.0:
        return 1.0, 1
    q = int(math.floor(1.0 / x)) + 1
    while not 1.0 / q < x:  # settle float edge cases by direct check
        q += 1
    while q > 2 and 1.0 / (q - 1) < x:
        q -= 1
    return 1.0 / q, q


@dataclass(frozen=True)
class GrowthReport:
    """Outcome of the growth conditions at one value of delta.

    conditions and slacks line up; a slack is how far the corresponding
    inequality clears (negative when violated).  In single mode all four
    conditions must hold, in double mode any one branch suffices.
    """

    mode: str
    delta: float
    conditions: Tuple[bool, ...]
    slacks: Tuple[float, ...]
    satisfied: bool


def _ext(pieces: Sequence[Optional[LinearSegment]], attr: str) -> float:
    return sum(getattr(p, attr) for p in pieces if p is not None)


def _single_values(dec: SegmentDecomposition, alpha: float):
    lv_I2 = _ext((dec.I2_prime, dec.I2_doubleprime), "l_v")
    if lv_I2 > 0.0:
        d, _ = rational_spacing(alpha, lv_I2)
    else:
        d = 0.0
    far_lv = _ext((dec.I2_doubleprime, dec.I3), "l_v")
    far_lh = _ext((dec.I2_doubleprime, dec.I3), "l_h")
    near_lv = _ext((dec.I1, dec.I2_prime), "l_v")
    near_lh = _ext((dec.I1, dec.I2_prime), "l_h")
    return d, far_lv, far_lh, near_lv, near_lh


def _single_report(values, gamma_lv: float, alpha: float, delta: float) -> GrowthReport:
    d, far_lv, far_lh, near_lv, near_lh = values
    slacks = (
        d - 2.0 * delta * gamma_lv,
        alpha * far_lv - delta * gamma_lv,
        alpha * near_lv + near_lh - 3.0 * delta * gamma_lv,
        far_lh - delta * gamma_lv,
    )
    conds = tuple(s >= 0.0 for s in slacks)
    return GrowthReport("single", delta, conds, slacks, all(conds))


def _validate_growth_args(gamma_lv: float, delta: float):
    if not delta > 1.0:
        raise ValueError("delta must exceed 1")
    if not gamma_lv > 0.0:
        raise ValueError("gamma_lv must be positive")


def check_growth_single(dec: SegmentDecomposition, gamma_lv: float,
                        alpha: float, delta: float) -> GrowthReport:
    """Four conditions for vertical growth through a one-square return:
    the rational orbit spacing beats 2*delta*lv(gamma); the far half
    shears in enough vertical extent; the near half carries enough total
    extent; and the far half already spans enough horizontally.
    """
    _validate_growth_args(gamma_lv, delta)
    return _single_report(_single_values(dec, alpha), gamma_lv, alpha, delta)


def _join_I2(dec: SegmentDecomposition) -> Optional[LinearSegment]:
    parts = [p for p in (dec.I2_prime, dec.I2_doubleprime) if p is not None]
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    pts = sorted(e for p in parts for e in p.endpoints())
    a, b = pts[0], pts[-1]
    g = parts[0].anchor.geom
    ay = min(max(a[1], g.y0), g.y1)
    anchor = make_point(g, Chart.UNFOLDED, a[0], ay)
    dx, dy = b[0] - a[0], b[1] - a[1]
    return LinearSegment(anchor, (dx, dy), math.hypot(dx, dy))


def _double_values(dec: SegmentDecomposition, alpha: float):
    lh_I1 = dec.I1.l_h if dec.I1 is not None else 0.0
    lh_I3 = dec.I3.l_h if dec.I3 is not None else 0.0
    joined = _join_I2(dec)
    if joined is None:
        gain = 0.0
    else:
        cfg = LinkedTwist(joined.anchor.geom, float(alpha))
        image = iterate_segment(joined, cfg)
        gain = sum(p.l_h for p in image) - joined.l_h
    return lh_I1, lh_I3, gain


def _double_report(values, gamma_lv: float, delta: float) -> GrowthReport:
    lh_I1, lh_I3, gain = values
    slacks = (
        lh_I1 - delta * gamma_lv,
        lh_I3 - delta * gamma_lv,
        gain - 2.0 * delta * gamma_lv,
    )
    conds = tuple(s >= 0.0 for s in slacks)
    return GrowthReport("double", delta, conds, slacks, any(conds))


def check_growth_double(dec: SegmentDecomposition, gamma_lv: float,
                        alpha: float, delta: float) -> GrowthReport:
    """Two-square disjunction: either inside part is already long enough
    horizontally, or one composite step stretches the crossing I2 by at
    least twice the target.
    """
    _validate_growth_args(gamma_lv, delta)
    return _double_report(_double_values(dec, alpha), gamma_lv, delta)


DELTA_GRID = tuple(1.0001 + i * (2.0 - 1.0001) / 199 for i in range(200))


def best_delta_report(dec: SegmentDecomposition, gamma_lv: float, alpha: float,
                      mode: str = "single") -> GrowthReport:
    """Report at the largest grid delta whose conditions pass.

    Slacks shrink as delta grows, so the scan walks down from the top of
    the grid; when no grid point passes, the report at the smallest delta
    shows the least-violated state.
    """
    if mode == "single":
        values = _single_values(dec, alpha)
        rep = lambda d: _single_report(values, gamma_lv, alpha, d)
    elif mode == "double":
        values = _double_values(dec, alpha)
        rep = lambda d: _double_report(values, gamma_lv, d)
    else:
        raise ValueError("mode must be 'single' or 'double'")
    if not gamma_lv > 0.0:
        raise ValueError("gamma_lv must be positive")
    for delta in reversed(DELTA_GRID):
        r = rep(delta)
        if r.satisfied:
            return r
    return rep(DELTA_GRID[0])


# ---------------------------------------------------------------------------
# expansion certification


def folded_lv(seg: LinearSegment) -> float:
    """Vertical extent through the square as seen on the folded strip.

    Pieces on the near sheet cross the band in y; pieces on the far sheet
    enter the square sideways, so their track extent is the vertical one.
    """
    g = seg.anchor.geom
    (s0, y0), (s1, y1) = seg.endpoints()
    if 0.5 * (s0 + s1) >= g.strip_length:
        return abs(s1 - s0)
    return abs(y1 - y0)


def segment_kind(seg: LinearSegment) -> frozenset:
    """Crossing kinds the piece contains: a subset of {"v", "h"}.

    A piece crosses the square horizontally when its track coordinate
    sweeps a whole block, and vertically when its band coordinate sweeps
    the whole band while the track coordinate stays inside one block.  The
    far-sheet block is glued in sideways, so the roles swap there.  A long
    piece can contain several crossings at once.
    """
    g = seg.anchor.geom
    (s0, y0), (s1, y1) = seg.endpoints()
    slo, shi = min(s0, s1), max(s0, s1)
    kinds = set()
    if slo <= g.x0 + _SPAN_TOL and shi >= g.x1 - _SPAN_TOL:
        kinds.add("h")
    if slo <= g.s2_lo + _SPAN_TOL and shi >= g.s2_hi - _SPAN_TOL:
        kinds.add("v")
    ylo, yhi = min(y0, y1), max(y0, y1)
    if ylo <= g.y0 + _SPAN_TOL and yhi >= g.y1 - _SPAN_TOL:
        if y1 != y0:  # restrict to the sub-piece between the band edges
            ta = (g.y0 - y0) / (y1 - y0)
            tb = (g.y1 - y0) / (y1 - y0)
            sa = s0 + (s1 - s0) * ta
            sb = s0 + (s1 - s0) * tb
            qlo, qhi = min(sa, sb), max(sa, sb)
        else:
            qlo, qhi = slo, shi
        if g.x0 - _SPAN_TOL <= qlo and qhi <= g.x1 + _SPAN_TOL:
            kinds.add("v")
        if g.s2_lo - _SPAN_TOL <= qlo and qhi <= g.s2_hi + _SPAN_TOL:
            kinds.add("h")
    return frozenset(kinds)


def _covers_block(lo: float, hi: float, blo: float, bhi: float, C: float) -> bool:
    """Whether [lo, hi] contains some track copy [mC + blo, mC + bhi]."""
    m = math.ceil((lo - blo - _SPAN_TOL) / C)
    return m * C + bhi <= hi + _SPAN_TOL


def _arc_crossings(arc: _Piece, g: TrackGeometry) -> set:
    """Crossing kinds of an unwrapped straight arc (track copies allowed)."""
    (S0, Y0), (S1, Y1) = arc
    lo, hi = (S0, S1) if S0 <= S1 else (S1, S0)
    C = g.track_length
    kinds = set()
    if _covers_block(lo, hi, g.x0, g.x1, C):
        kinds.add("h")
    if _covers_block(lo, hi, g.s2_lo, g.s2_hi, C):
        kinds.add("v")
    ylo, yhi = min(Y0, Y1), max(Y0, Y1)
    if Y0 != Y1 and ylo <= g.y0 + _SPAN_TOL and yhi >= g.y1 - _SPAN_TOL:
        ta = (g.y0 - Y0) / (Y1 - Y0)
        tb = (g.y1 - Y0) / (Y1 - Y0)
        sa = S0 + (S1 - S0) * ta
        sb = S0 + (S1 - S0) * tb
        qlo, qhi = (sa, sb) if sa <= sb else (sb, sa)
        m = math.floor(qlo / C)
        if g.x0 - _SPAN_TOL <= qlo - m * C and qhi - m * C <= g.x1 + _SPAN_TOL:
            kinds.add("v")
        if g.s2_lo - _SPAN_TOL <= qlo - m * C and qhi - m * C <= g.s2_hi + _SPAN_TOL:
            kinds.add("h")
    return kinds


@dataclass(frozen=True)
class ExpansionCertificate:
    """Record of a successful certification run.

    step is the iterate at which a full crossing first appeared, kind its
    orientation, insertions the per-step best vertical extent inside the
    square, growth_factors the successive ratios of those extents, and
    best_delta their geometric mean.  pieces holds the working set at the
    certificate step.
    """

    step: int
    kind: str
    growth_factors: Tuple[float, ...]
    best_delta: float
    insertions: Tuple[Tuple[int, float], ...]
    pieces: Tuple[LinearSegment, ...]


def _prune(pieces: Sequence[LinearSegment], budget: int) -> List[LinearSegment]:
    sq, lobe = [], []
    for p in pieces:
        (sq if p.region in SQUARES else lobe).append(p)
    sq.sort(key=lambda p: p.length, reverse=True)
    lobe.sort(key=lambda p: p.length, reverse=True)
    return sq[:budget] + lobe[:budget]


def advance_pieces(pieces: Sequence[LinearSegment], cfg: LinkedTwist,
                   budget: int = 32) -> List[LinearSegment]:
    """One composite step of a piece collection, pruned to the longest
    pieces per region class so the working set stays bounded."""
    new: List[LinearSegment] = []
    for p in pieces:
        new.extend(iterate_segment(p, cfg))
    return _prune(new, budget)


def random_unstable_segment(g: TrackGeometry, alpha: float, rng,
                            margin: float = 0.01,
                            len_lo: float = 1e-5,
                            len_hi: float = 1e-4) -> LinearSegment:
    """Thin random segment in the square along the expanding eigendirection.

    rng supplies uniform draws (random.Random works).  The anchor stays at
    least margin away from the square's vertical walls so the slanted
    endpoint cannot leave it, and the vertical extent is drawn from
    [len_lo, len_hi].
    """
    L = maps.eigen(alpha)[2]
    s0 = rng.uniform(g.x0 + margin, g.x1 - margin)
    lv = rng.uniform(len_lo, len_hi)
    y_lo = rng.uniform(g.y0, g.y1 - 2.0 * len_hi)
    anchor = make_point(g, Chart.UNFOLDED, s0, y_lo)
    return LinearSegment(anchor, (L, 1.0), lv * math.hypot(L, 1.0))


def _growth_stats(insertions: Sequence[Tuple[int, float]]):
    factors = tuple(b[1] / a[1] for a, b in zip(insertions, insertions[1:])
                    if a[1] > 0.0)
    if factors and insertions[0][1] > 0.0:
        best = (insertions[-1][1] / insertions[0][1]) ** (1.0 / len(factors))
    else:
        best = 1.0
    return factors, best


def certify_expansion(gamma: LinearSegment, alpha: float,
                      max_iters: int = 10_000,
                      budget: int = 32) -> ExpansionCertificate:
    """Iterate an unstable segment until the square holds a full crossing.

    gamma must start inside the square with its direction in one of the
    invariant expanding cones.  Each step maps every working piece through
    the composite and checks, before any pruning, whether some piece fully
    crosses the square vertically or horizontally.  The per-step largest
    folded vertical extent inside the square gives the growth record; the
    geometric mean of its ratios is reported as best_delta.  Raises
    NoCertificateError (carrying the partial growth factors) if max_iters
    passes without a crossing.
    """
    if not alpha > 2.0:
        raise ValueError("certification needs alpha above the cone threshold 2")
    if gamma.region not in SQUARES:
        raise ValueError("gamma must start inside the square")
    bound = abs(maps.eigen(alpha)[2])
    memb = maps.Cone("C", bound).classify(gamma.direction)
    if memb.cone is None:
        memb = maps.Cone("Cprime", bound).classify(gamma.direction)
    if memb.cone is None:
        raise ValueError("gamma must be unstable: direction inside a cone")
    g = gamma.anchor.geom
    C = g.track_length
    cfg = LinkedTwist(g, float(alpha))
    pieces: List[LinearSegment] = [gamma]
    insertions = [(0, folded_lv(gamma))]
    for step in range(1, max_iters + 1):
        new: List[LinearSegment] = []
        won = None
        for p in pieces:
            # detect on whole arcs before wrapping and pruning so a winning
            # crossing cannot be cut apart or dropped
            for arc in _image_arcs(p, cfg):
                kinds = _arc_crossings(arc, g)
                if "v" in kinds:
                    won = "vertical"
                elif "h" in kinds and won is None:
                    won = "horizontal"
                new.extend(_rebuild(_wrap_track(arc, C), g))
        best_in_s = 0.0
        for p in new:
            if p.region in SQUARES:
                lv = folded_lv(p)
                if lv > best_in_s:
                    best_in_s = lv
        if best_in_s > 0.0:
            insertions.append((step, best_in_s))
        if won is not None:
            factors, best = _growth_stats(insertions)
            return ExpansionCertificate(step, won, factors, best,
                                        tuple(insertions),
                                        tuple(_prune(new, budget)))
        pieces = _prune(new, budget)
        if not pieces:
            break
    factors, _ = _growth_stats(insertions)
    raise NoCertificateError(
        f"no full crossing of the square within {max_iters} iterations",
        growth_factors=factors,
    )
