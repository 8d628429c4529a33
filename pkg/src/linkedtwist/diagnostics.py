"""Statistical evidence for the map's dynamics.

Tangent-growth exponents, occupancy discrepancy against the invariant
area, and intersection traces of the suspension flow.  Everything here is
Monte Carlo or grid bookkeeping on top of the vectorized steppers; nothing
in this module proves anything, it measures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dynamics import (
    CubeSet,
    LinkedTwist,
    flow_arrays,
    h_step_arrays,
    h_step_with_tangent,
    validate_cube,
)
from .geometry import TrackGeometry, build_geometry
from .maps import compose_H, compose_H_inv, eigen

_MIN_EXPONENT_ITERS = 10_000
_POWER_BURN_IN = 64


@dataclass(frozen=True)
class LyapunovReport:
    """Ensemble estimate of the top tangent-growth exponent.

    exponents holds the per-orbit estimates that entered the ensemble;
    orbits that never crossed between sheets carry no hyperbolic block and
    are excluded from it, counted in n_excluded.  reference_log_lambda is
    the log of the expanding eigenvalue of the square block, the exact rate
    an always-crossing orbit would show.
    """

    alpha: float
    n_iters: int
    exponent_estimate: float
    exponents: Tuple[float, ...]
    n_excluded: int
    reference_log_lambda: float

    def __post_init__(self):
        if not math.isfinite(self.exponent_estimate):
            raise ValueError("exponent estimate must be finite")
        if self.n_iters < _MIN_EXPONENT_ITERS:
            raise ValueError("exponent runs need at least 10^4 steps")


def lyapunov(
    alpha: float,
    n_orbits: int,
    n_iters: int,
    seed: int,
    geom: Optional[TrackGeometry] = None,
    starts: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> LyapunovReport:
    """Estimate the top exponent from norm growth along random orbits.

    Tangent norms are accumulated with periodic renormalization and the
    ensemble median of the per-orbit rates is reported.  Orbits that never
    cross between the sheets see only shears, grow at most linearly, and
    are excluded and counted; random starts almost never produce such
    orbits, but the zero-shear edge row is full of them, and a caller can
    place controls there through starts, a pair of position arrays that
    overrides the random draw (n_orbits must match their length).
    """
    if not alpha > 2.0:
        raise ValueError("growth estimates need alpha above 2")
    if n_orbits < 1:
        raise ValueError("need at least one orbit")
    if n_iters < _MIN_EXPONENT_ITERS:
        raise ValueError("exponent runs need at least 10^4 steps")
    g = geom if geom is not None else build_geometry()
    rng = np.random.default_rng(seed)
    if starts is not None:
        s = np.array(starts[0], dtype=float)
        y = np.array(starts[1], dtype=float)
        if s.shape != (n_orbits,) or y.shape != (n_orbits,):
            raise ValueError("starts arrays must both have length n_orbits")
    else:
        s = rng.uniform(0.0, g.track_length, n_orbits)
        y = rng.uniform(g.y0, g.y1, n_orbits)
    ang = rng.uniform(0.0, 2.0 * math.pi, n_orbits)
    ts, ty = np.cos(ang), np.sin(ang)
    # renormalize often enough that 64 steps of shear growth cannot overflow
    cadence = max(1, min(64, int(300.0 / math.log(2.0 + alpha))))
    logsum = np.zeros(n_orbits)
    crossed = np.zeros(n_orbits, dtype=bool)
    for k in range(n_iters):
        crossed |= h_step_with_tangent(s, y, ts, ty, g, alpha)
        if (k + 1) % cadence == 0:
            norm = np.hypot(ts, ty)
            logsum += np.log(norm)
            ts /= norm
            ty /= norm
    norm = np.hypot(ts, ty)
    logsum += np.log(norm)
    exponents = logsum / n_iters
    kept = exponents[crossed]
    if kept.size == 0:
        raise RuntimeError(
            "every sampled orbit avoided the square; no exponent ensemble to report"
        )
    return LyapunovReport(
        alpha=float(alpha),
        n_iters=int(n_iters),
        exponent_estimate=float(np.median(kept)),
        exponents=tuple(float(v) for v in kept),
        n_excluded=int(n_orbits - kept.size),
        reference_log_lambda=math.log(abs(eigen(alpha)[0])),
    )


def matrix_exponent(alpha: float, n_steps: int = 256, contracting: bool = False) -> float:
    """Growth rate of the square block by renormalized power iteration.

    A float forward iteration cannot hold the contracting direction (the
    expanding component seeded by roundoff takes over within a handful of
    steps), so the contracting rate is measured on the inverse block, whose
    expanding direction is the forward map's contracting one.
    """
    if n_steps <= 2 * _POWER_BURN_IN:
        raise ValueError("need enough steps to discard the alignment transient")
    M = compose_H_inv(alpha) if contracting else compose_H(alpha)
    v = np.array([1.0, 0.0])
    total = 0.0
    measured = 0
    for k in range(n_steps):
        v = M @ v
        norm = math.hypot(v[0], v[1])
        v /= norm
        if k >= _POWER_BURN_IN:
            total += math.log(norm)
            measured += 1
    rate = total / measured
    return -rate if contracting else rate


def _canonical(s: np.ndarray, y: np.ndarray, g: TrackGeometry):
    """Rebase occupants of the second square copy onto the first address."""
    s = np.array(s, dtype=float, copy=True)
    y = np.array(y, dtype=float, copy=True)
    in2 = (g.s2_lo < s) & (s <= g.s2_hi)
    if in2.any():
        snew = g.x0 + (y[in2] - g.y0)
        y[in2] = g.track_length - s[in2]
        s[in2] = snew
    return s, y


def _bin_indices(s: np.ndarray, y: np.ndarray, g: TrackGeometry, grid_n: int) -> np.ndarray:
    s, y = _canonical(s, y, g)
    band = g.y1 - g.y0
    col = np.clip((s / g.track_length * grid_n).astype(int), 0, grid_n - 1)
    row = np.clip(((y - g.y0) / band * grid_n).astype(int), 0, grid_n - 1)
    return col * grid_n + row


def _cell_weights(g: TrackGeometry, grid_n: int) -> np.ndarray:
    """Area weight of each grid cell, with the second square copy carrying none."""
    edges = np.linspace(0.0, g.track_length, grid_n + 1)
    lo, hi = edges[:-1], edges[1:]
    overlap = np.clip(np.minimum(hi, g.s2_hi) - np.maximum(lo, g.s2_lo), 0.0, None)
    col_width = (hi - lo) - overlap
    weights = np.repeat(col_width / (grid_n * col_width.sum()), grid_n)
    return weights


def cell_histogram(s, y, g: TrackGeometry, grid_n: int):
    """Occupancy counts over a grid_n x grid_n partition of the band plus
    the matching area weights; returns (counts, weights), both flat."""
    if grid_n < 1:
        raise ValueError("grid_n must be positive")
    idx = _bin_indices(np.asarray(s, float), np.asarray(y, float), g, grid_n)
    counts = np.bincount(idx, minlength=grid_n * grid_n).astype(float)
    return counts, _cell_weights(g, grid_n)


def equidistribution(
    alpha: float,
    grid_n: int,
    n_iters: int,
    n_orbits: int,
    seed: int,
    geom: Optional[TrackGeometry] = None,
) -> float:
    """Sup-norm discrepancy between orbit occupancy and the area weights.

    n_orbits random starts are advanced n_iters composite steps and every
    visited state is binned; the statistic is the largest absolute gap
    between a cell's visit fraction and its area fraction.  Near zero means
    the sampled orbits fill the band evenly; a periodic orbit scores near 1.
    """
    if grid_n < 1:
        raise ValueError("grid_n must be positive")
    if n_iters < 1 or n_orbits < 1:
        raise ValueError("need at least one orbit and one step")
    g = geom if geom is not None else build_geometry()
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, g.track_length, n_orbits)
    y = rng.uniform(g.y0, g.y1, n_orbits)
    counts = np.zeros(grid_n * grid_n)
    for _ in range(n_iters):
        h_step_arrays(s, y, g, alpha)
        counts += np.bincount(_bin_indices(s, y, g, grid_n), minlength=grid_n * grid_n)
    weights = _cell_weights(g, grid_n)
    return float(np.max(np.abs(counts / counts.sum() - weights)))


@dataclass(frozen=True)
class MixingTrace:
    """Estimated overlap volume of an evolved cube with a fixed one.

    zero_fraction is the share of sampled times with zero hits; for those
    times zero_upper_bound is the 95% binomial bound on the volume that
    zero hits out of n_samples still allows.
    """

    times: Tuple[float, ...]
    intersection_measure: Tuple[float, ...]
    zero_fraction: float
    zero_upper_bound: float
    n_samples: int

    def __post_init__(self):
        if len(self.times) != len(self.intersection_measure):
            raise ValueError("one measure per sampled time")
        if any(m < 0.0 for m in self.intersection_measure):
            raise ValueError("intersection estimates cannot be negative")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise ValueError("zero_fraction is a proportion")


def cube_volume(cube: CubeSet) -> float:
    s_lo, s_hi = cube.s_interval
    y_lo, y_hi = cube.y_interval
    return (s_hi - s_lo) * (y_hi - y_lo) * 2.0 * cube.epsilon


def _cube_hits(cube: CubeSet, s, y, theta) -> int:
    s_lo, s_hi = cube.s_interval
    y_lo, y_hi = cube.y_interval
    start = cube.center_theta - cube.epsilon
    inside = (
        (s_lo <= s)
        & (s <= s_hi)
        & (y_lo <= y)
        & (y <= y_hi)
        & (((theta - start) % 1.0) <= 2.0 * cube.epsilon)
    )
    return int(np.count_nonzero(inside))


def non_weak_mixing_demo(
    A: CubeSet,
    B: CubeSet,
    t_max: float,
    dt: float,
    cfg: LinkedTwist,
    seed: int = 0,
    n_samples: int = 100_000,
) -> MixingTrace:
    """Monte Carlo trace of how much of the flowed cube A lies in B.

    A is filled with n_samples uniform points, the cloud is advanced dt at
    a time, and at each grid time the hit fraction against B is scaled by
    the volume of A.  Times are in units of the fiber period (the angle
    coordinate has period 1 here).  A large zero_fraction is the point:
    narrow fiber windows keep missing each other no matter how long the
    flow runs, which is exactly what rules out weak mixing.
    """
    validate_cube(A, cfg.geom)
    validate_cube(B, cfg.geom)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t_max < 0.0:
        raise ValueError("t_max cannot be negative")
    if n_samples < 1:
        raise ValueError("need at least one sample point")
    rng = np.random.default_rng(seed)
    s = rng.uniform(A.s_interval[0], A.s_interval[1], n_samples)
    y = rng.uniform(A.y_interval[0], A.y_interval[1], n_samples)
    theta = (
        A.center_theta - A.epsilon + 2.0 * A.epsilon * rng.uniform(0.0, 1.0, n_samples)
    ) % 1.0
    vol_a = cube_volume(A)
    times = np.arange(0.0, t_max + 0.5 * dt, dt)
    measures = []
    for i in range(times.size):
        if i:
            flow_arrays(s, y, theta, dt, cfg.geom, cfg.alpha)
        measures.append(vol_a * _cube_hits(B, s, y, theta) / n_samples)
    zero = sum(1 for m in measures if m == 0.0)
    return MixingTrace(
        times=tuple(float(t) for t in times),
        intersection_measure=tuple(measures),
        zero_fraction=zero / len(measures),
        zero_upper_bound=vol_a * 3.0 / n_samples,
        n_samples=int(n_samples),
    )


def pushforward_tv(
    alpha: float,
    grid_n: int,
    geom: Optional[TrackGeometry] = None,
    samples_per_cell: int = 6,
) -> float:
    """Total-variation gap between one pushed-forward uniform cloud and uniform.

    Every cell is seeded with a regular lattice, the cloud is advanced one
    composite step, and the occupancy histogram is compared with the cell
    area weights.  The map preserves area, so the gap is pure discretization
    error along the cut lines and shrinks as the grid refines.
    """
    if grid_n < 1:
        raise ValueError("grid_n must be positive")
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be positive")
    g = geom if geom is not None else build_geometry()
    m = samples_per_cell
    offs = (np.arange(m) + 0.5) / m
    ticks = (np.arange(grid_n)[:, None] + offs[None, :]).ravel() / grid_n
    s_line = ticks * g.track_length
    y_line = g.y0 + ticks * (g.y1 - g.y0)
    S, Y = np.meshgrid(s_line, y_line, indexing="ij")
    s = S.ravel()
    y = Y.ravel()
    # seed the quotient only: second-copy addresses alias first-copy ones
    keep = ~((g.s2_lo < s) & (s <= g.s2_hi))
    s, y = s[keep].copy(), y[keep].copy()
    h_step_arrays(s, y, g, alpha)
    counts = np.bincount(_bin_indices(s, y, g, grid_n), minlength=grid_n * grid_n)
    weights = _cell_weights(g, grid_n)
    return float(0.5 * np.sum(np.abs(counts / counts.sum() - weights)))
