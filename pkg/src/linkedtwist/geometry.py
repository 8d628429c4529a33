"""Two-strip surgery track with folded and unfolded coordinate charts.

The track is an annular band of circumference ``track_length`` and width
``width_w`` that crosses itself once.  In the folded chart the band is drawn
as a horizontal strip W of length ``track_length / 2`` and a vertical strip V
of the same length, overlapping in a central square S; the free ends of the
strips are identified pairwise (W's right end continues into V's top end, V's
bottom end continues into W's left end).  In the unfolded chart the band is
cut along those identifications and laid out as a circle: the square appears
twice, once per passage, as the blocks S1 = [x0, x1) and S2 = (s2_lo, s2_hi].

Conventions used throughout:

* unfolded points are (x, y) with x the circumferential coordinate mod
  track_length and y in [y0, y1] the transverse coordinate;
* x < track_length/2 is the W passage, x >= track_length/2 the V passage;
* square blocks are closed on the folded bottom edge and open on the top
  edge, which in circle coordinates makes S1 closed-left/open-right and S2
  open-left/closed-right;
* a point within SEAM_TOL of a region boundary validates against either
  side, but classification itself is deterministic half-open.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

SEAM_TOL = 1e-9

CONFIG_KEYS = ("track_length", "width_w", "layer_gap_d1", "seed")


class Chart(enum.Enum):
    FOLDED = "folded"
    UNFOLDED = "unfolded"


class Region(enum.Enum):
    SQUARE_S1 = "square_s1"
    SQUARE_S2 = "square_s2"
    LOBE_A = "lobe_a"
    LOBE_B = "lobe_b"


SQUARES = (Region.SQUARE_S1, Region.SQUARE_S2)


@dataclass(frozen=True)
class TrackGeometry:
    """Dimensions and derived positions of the two-layered track.

    y0/y1 bound the horizontal strip W transversally, x0/x1 bound the
    vertical strip V; both squares are placed so the two lobe arcs have
    equal length.  All coordinates are in the same length unit as
    track_length.
    """

    track_length: float = 1.0
    width_w: float = 0.02
    layer_gap_d1: float = 0.1
    y0: float = None  # type: ignore[assignment]
    y1: float = None  # type: ignore[assignment]
    x0: float = None  # type: ignore[assignment]
    x1: float = None  # type: ignore[assignment]
    lobe_symmetric: bool = True

    def __post_init__(self):
        L, w = self.track_length, self.width_w
        if not (L > 0 and w > 0):
            raise ValueError("track_length and width_w must be positive")
        if not self.layer_gap_d1 > 0:
            raise ValueError("layer_gap_d1 must be positive")
        half = L / 2.0
        if not w < half:
            raise ValueError("width_w must be smaller than half the track length")
        if self.y0 is None:
            object.__setattr__(self, "y0", (half - w) / 2.0)
        if self.y1 is None:
            object.__setattr__(self, "y1", self.y0 + w)
        if self.x0 is None:
            object.__setattr__(self, "x0", self.y0)
        if self.x1 is None:
            object.__setattr__(self, "x1", self.x0 + w)
        if abs((self.y1 - self.y0) - w) > 1e-12 or abs((self.x1 - self.x0) - w) > 1e-12:
            raise ValueError("square S must have side width_w on both strips")
        if abs(self.lobe_gap_after_s1 - self.lobe_gap_after_s2) > 1e-12:
            raise ValueError("square placement must leave symmetric lobes")

    @classmethod
    def for_winding(
        cls,
        alpha: float,
        k: int,
        track_length: float = 1.0,
        layer_gap_d1: float = 0.1,
    ) -> "TrackGeometry":
        """Geometry whose width makes the shear wrap the track exactly k times.

        The top edge of the strip is carried alpha * width_w along the band,
        so integer winding requires width_w = k * track_length / alpha.  This
        bypasses the w << track_length guard of build_geometry, which such
        widths usually violate; only the structural bound 2 w < track_length
        is enforced here.
        """
        if not (isinstance(k, int) and k >= 1):
            raise ValueError("winding number k must be a positive integer")
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        w = k * track_length / alpha
        if not 2.0 * w < track_length:
            raise ValueError(
                f"winding k={k} at alpha={alpha} needs width {w}, wider than half the track"
            )
        return cls(track_length=track_length, width_w=w, layer_gap_d1=layer_gap_d1)

    @property
    def strip_length(self) -> float:
        return self.track_length / 2.0

    @property
    def s2_lo(self) -> float:
        return self.track_length - self.x1

    @property
    def s2_hi(self) -> float:
        return self.track_length - self.x0

    @property
    def lobe_gap_after_s1(self) -> float:
        """Arc length from the right edge of block S1 to the left edge of S2."""
        return self.s2_lo - self.x1

    @property
    def lobe_gap_after_s2(self) -> float:
        """Arc length from the right edge of block S2 around to the left edge of S1."""
        return (self.track_length - self.s2_hi) + self.x0


def build_geometry(cfg: Optional[Mapping] = None) -> TrackGeometry:
    """Validated geometry from a key/value configuration.

    Accepts the keys track_length, width_w, layer_gap_d1 (and seed, which is
    ignored here); anything else is an error.  Enforces the narrow-track
    regime w < track_length / 10 on top of the structural invariants.
    """
    cfg = dict(cfg or {})
    unknown = set(cfg) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown geometry config keys: {sorted(unknown)}")
    cfg.pop("seed", None)
    length = cfg.get("track_length", 1.0)
    width = cfg.get("width_w", 0.02)
    if not (length > 0 and width > 0):
        raise ValueError("track_length and width_w must be positive")
    if not width < length / 10.0:
        raise ValueError("width violates w << 1: require width_w < track_length / 10")
    return TrackGeometry(**cfg)


def read_config(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines skipped."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise ValueError(f"line {ln}: unknown config key {key!r}")
        try:
            out[key] = int(val) if key == "seed" else float(val)
        except ValueError as exc:
            raise ValueError(f"line {ln}: bad value for {key}: {val!r}") from exc
    return out


def region_of_unfolded(geom: TrackGeometry, s: float) -> Region:
    """Half-open region classification of an unfolded circumferential coordinate."""
    if geom.x0 <= s < geom.x1:
        return Region.SQUARE_S1
    if geom.s2_lo < s <= geom.s2_hi:
        return Region.SQUARE_S2
    if geom.x1 <= s <= geom.s2_lo:
        return Region.LOBE_A
    return Region.LOBE_B


@dataclass(frozen=True)
class TrackPoint:
    """A point of the track in one chart, tagged with the region it lies in.

    For points of the central square the tag also records which passage of
    the band the point is considered to belong to (SQUARE_S1 for the W
    passage, SQUARE_S2 for V); the two representations describe the same
    physical point and are exchanged by sigma_12 / sigma_21.
    """

    geom: TrackGeometry = field(repr=False)
    chart: Chart = Chart.UNFOLDED
    x: float = 0.0
    y: float = 0.0
    region: Region = Region.LOBE_B


def _in_region_folded(g: TrackGeometry, x: float, y: float, region: Region, tol: float) -> bool:
    half = g.strip_length
    on_w = (g.y0 - tol <= y <= g.y1 + tol) and (-tol <= x <= half + tol)
    on_v = (g.x0 - tol <= x <= g.x1 + tol) and (-tol <= y <= half + tol)
    if region in SQUARES:
        return on_w and on_v
    if region is Region.LOBE_A:
        return (on_w and x >= g.x1 - tol) or (on_v and y >= g.y1 - tol)
    return (on_w and x <= g.x0 + tol) or (on_v and y <= g.y0 + tol)


def _in_region_unfolded(g: TrackGeometry, s: float, y: float, region: Region, tol: float) -> bool:
    if not (g.y0 - tol <= y <= g.y1 + tol):
        return False
    C = g.track_length
    if region is Region.SQUARE_S1:
        return g.x0 - tol <= s <= g.x1 + tol
    if region is Region.SQUARE_S2:
        return g.s2_lo - tol <= s <= g.s2_hi + tol
    if region is Region.LOBE_A:
        return g.x1 - tol <= s <= g.s2_lo + tol
    return s <= g.x0 + tol or s >= g.s2_hi - tol or s - C >= -tol


def _infer_region_folded(g: TrackGeometry, x: float, y: float) -> Region:
    tol = SEAM_TOL
    on_w = (g.y0 - tol <= y <= g.y1 + tol) and (-tol <= x <= g.strip_length + tol)
    on_v = (g.x0 - tol <= x <= g.x1 + tol) and (-tol <= y <= g.strip_length + tol)
    if not (on_w or on_v):
        raise ValueError(f"folded point ({x}, {y}) lies on neither strip")
    if on_w and on_v:
        return Region.SQUARE_S1
    if on_w:
        return Region.LOBE_A if x >= g.x1 else Region.LOBE_B
    return Region.LOBE_A if y >= g.y1 else Region.LOBE_B


def make_point(
    geom: TrackGeometry,
    chart: Chart,
    x: float,
    y: float,
    region: Optional[Region] = None,
) -> TrackPoint:
    """Construct a validated TrackPoint, inferring the region tag if absent.

    Folded square points default to the SQUARE_S1 (W passage) tag; pass
    region=Region.SQUARE_S2 to select the other representation.
    """
    if chart is Chart.UNFOLDED:
        x = x % geom.track_length
        if not (geom.y0 - SEAM_TOL <= y <= geom.y1 + SEAM_TOL):
            raise ValueError(f"transverse coordinate {y} outside strip [{geom.y0}, {geom.y1}]")
        inferred = region_of_unfolded(geom, x)
        tag = region or inferred
        if not _in_region_unfolded(geom, x, y, tag, SEAM_TOL):
            raise ValueError(f"unfolded point ({x}, {y}) not in region {tag}")
    else:
        inferred = _infer_region_folded(geom, x, y)
        tag = region or inferred
        if not _in_region_folded(geom, x, y, tag, SEAM_TOL):
            raise ValueError(f"folded point ({x}, {y}) not in region {tag}")
    return TrackPoint(geom, chart, x, y, tag)


def unfold(p: TrackPoint) -> TrackPoint:
    """Chart change folded -> unfolded; preserves the region tag."""
    if p.chart is not Chart.FOLDED:
        raise ValueError("unfold expects a folded-chart point")
    g = p.geom
    on_w_band = g.y0 - SEAM_TOL <= p.y <= g.y1 + SEAM_TOL
    if on_w_band and p.region is not Region.SQUARE_S2:
        s, ty = p.x, p.y
    else:
        # V passage: circumferential position runs back from the track end
        s = (g.track_length - p.y) % g.track_length
        ty = g.y0 + (p.x - g.x0)
    return TrackPoint(g, Chart.UNFOLDED, s, ty, p.region)


def fold(p: TrackPoint) -> TrackPoint:
    """Chart change unfolded -> folded; inverse of unfold off the seams."""
    if p.chart is not Chart.UNFOLDED:
        raise ValueError("fold expects an unfolded-chart point")
    g = p.geom
    if p.x < g.strip_length:
        x, y = p.x, p.y
    else:
        x = g.x0 + (p.y - g.y0)
        y = g.track_length - p.x
    return TrackPoint(g, Chart.FOLDED, x, y, p.region)


def sigma_12(p: TrackPoint) -> TrackPoint:
    """Gluing involution sending an S1-block point to its S2 representation."""
    if p.chart is not Chart.UNFOLDED or p.region is not Region.SQUARE_S1:
        raise ValueError("sigma_12 expects an unfolded SQUARE_S1 point")
    g = p.geom
    s = g.track_length - p.y
    y = g.y0 + (p.x - g.x0)
    return TrackPoint(g, Chart.UNFOLDED, s, y, Region.SQUARE_S2)


def sigma_21(p: TrackPoint) -> TrackPoint:
    """Gluing involution sending an S2-block point to its S1 representation."""
    if p.chart is not Chart.UNFOLDED or p.region is not Region.SQUARE_S2:
        raise ValueError("sigma_21 expects an unfolded SQUARE_S2 point")
    g = p.geom
    s = g.x0 + (p.y - g.y0)
    y = g.track_length - p.x
    return TrackPoint(g, Chart.UNFOLDED, s, y, Region.SQUARE_S1)


def same_physical_point(p: TrackPoint, q: TrackPoint, tol: float = 1e-9) -> bool:
    """True when two points describe the same location on the track.

    Handles chart changes, the end-seam identification and the two square
    representations.
    """
    a = unfold(p) if p.chart is Chart.FOLDED else p
    b = unfold(q) if q.chart is Chart.FOLDED else q
    if a.region is Region.SQUARE_S2:
        a = sigma_21(a)
    if b.region is Region.SQUARE_S2:
        b = sigma_21(b)
    C = a.geom.track_length
    ds = abs(a.x - b.x) % C
    ds = min(ds, C - ds)
    if ds <= tol and abs(a.y - b.y) <= tol:
        return True
    # square points sitting exactly on a block edge may classify as lobe on
    # one side and square on the other; compare through the other sheet too
    for u, v in ((a, b), (b, a)):
        if u.region is Region.SQUARE_S1:
            w = sigma_12(u)
            ds = abs(w.x - v.x) % C
            ds = min(ds, C - ds)
            if ds <= tol and abs(w.y - v.y) <= tol:
                return True
    return False
