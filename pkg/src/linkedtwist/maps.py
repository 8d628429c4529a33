"""Linear-algebraic core: shears, composites, eigenstructure, cones.

This module works on the unit torus, the local model of the track near the
crossing square: a horizontal shear band [y0, y1] and a vertical band
[x0, x1], both of width w = k / alpha so the shear wraps the torus exactly k
times across the band.

Sign conventions.  The eigendirection ratio L solves L = 1/(alpha + L) along
the expanding eigenvector (L, 1); for alpha > 2 the solution used is
L = -alpha/2 + sqrt((alpha/2)^2 - 1), which is negative, and the literal
identity holds for the magnitude: |L| (alpha - |L|) = 1.  All cone arithmetic
uses |L|.  lambda_plus always denotes the expanding eigenvalue (the branch of
larger magnitude); both eigenvalues are negative for alpha > 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

Vec2 = Tuple[float, float]

_BOUNDARY_TOL = 1e-9


def eigen(alpha: float) -> Tuple[float, float, float]:
    """Eigenvalues of the composite shear and the eigendirection ratio L.

    Returns (lambda_plus, lambda_minus, L) with |lambda_plus| >= 1 >=
    |lambda_minus|.  Raises for alpha < 2 where the composite is elliptic.
    """
    if alpha < 2.0:
        raise ValueError(f"elliptic regime, no real eigenvalues (alpha={alpha} < 2)")
    sq = math.sqrt(alpha * alpha * (alpha * alpha - 4.0))
    lam_expanding = (-alpha * alpha + 2.0 - sq) / 2.0
    # the small branch cancels catastrophically for large alpha; use det = 1
    lam_contracting = 1.0 / lam_expanding
    # likewise L = -alpha/2 + sqrt((alpha/2)^2 - 1), rationalized
    L = -2.0 / (alpha + math.sqrt(alpha * alpha - 4.0))
    return lam_expanding, lam_contracting, L


@dataclass(frozen=True)
class ShearConfig:
    """Shear strength alpha, winding number k and derived eigen-quantities.

    The band origins y0 (horizontal band) and x0 (vertical band) default to
    the centered placement (1 - w) / 2.  lambda_plus, lambda_minus and L are
    None below the hyperbolic threshold alpha = 2.
    """

    alpha: float
    k: int
    y0: float = None  # type: ignore[assignment]
    x0: float = None  # type: ignore[assignment]
    lambda_plus: Optional[float] = None
    lambda_minus: Optional[float] = None
    L: Optional[float] = None

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError("winding number k must be a positive integer")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        w = self.k / self.alpha
        if w > 1.0:
            raise ValueError(f"band width k/alpha = {w} exceeds the torus")
        if self.y0 is None:
            object.__setattr__(self, "y0", (1.0 - w) / 2.0)
        if self.x0 is None:
            object.__setattr__(self, "x0", (1.0 - w) / 2.0)
        if not (0.0 <= self.y0 and self.y0 + w <= 1.0 and 0.0 <= self.x0 and self.x0 + w <= 1.0):
            raise ValueError("shear band does not fit inside the unit torus")
        if self.alpha >= 2.0:
            lp, lm, L = eigen(self.alpha)
            object.__setattr__(self, "lambda_plus", lp)
            object.__setattr__(self, "lambda_minus", lm)
            object.__setattr__(self, "L", L)

    @property
    def w(self) -> float:
        return self.k / self.alpha

    @property
    def y1(self) -> float:
        return self.y0 + self.w

    @property
    def x1(self) -> float:
        return self.x0 + self.w


def shear_F(p: Vec2, cfg: ShearConfig) -> Vec2:
    """Horizontal shear: slides x by alpha (y - y0) on the band, identity off it."""
    x, y = p
    if cfg.y0 <= y <= cfg.y1:
        return ((x + cfg.alpha * (y - cfg.y0)) % 1.0, y)
    return (x, y)


def shear_G(p: Vec2, cfg: ShearConfig) -> Vec2:
    """Vertical shear of slope -alpha on the band [x0, x1], identity off it."""
    x, y = p
    if cfg.x0 <= x <= cfg.x1:
        return (x, (y - cfg.alpha * (x - cfg.x0)) % 1.0)
    return (x, y)


def _alpha_of(cfg: Union[ShearConfig, float]) -> float:
    return cfg.alpha if isinstance(cfg, ShearConfig) else float(cfg)


def compose_H(cfg: Union[ShearConfig, float]) -> np.ndarray:
    """Derivative matrix of the composite (vertical after horizontal shear)."""
    a = _alpha_of(cfg)
    DF = np.array([[1.0, a], [0.0, 1.0]])
    DG = np.array([[1.0, 0.0], [-a, 1.0]])
    return DG @ DF


def compose_H_inv(cfg: Union[ShearConfig, float]) -> np.ndarray:
    a = _alpha_of(cfg)
    DF_inv = np.array([[1.0, -a], [0.0, 1.0]])
    DG_inv = np.array([[1.0, 0.0], [a, 1.0]])
    return DF_inv @ DG_inv


@dataclass(frozen=True)
class ConeMembership:
    cone: Optional[str]  # "C", "Cprime" or None
    boundary: bool = False


@dataclass(frozen=True)
class Cone:
    """Direction cone: C holds slopes v/w in [L, 0], Cprime is C rotated 90 degrees."""

    kind: str  # "C" or "Cprime"
    bound: float  # |L|

    @classmethod
    def for_config(cls, kind: str, cfg: ShearConfig) -> "Cone":
        if cfg.L is None:
            raise ValueError("cones need alpha >= 2")
        return cls(kind, abs(cfg.L))

    def classify(self, d: Sequence[float]) -> ConeMembership:
        v, w = float(d[0]), float(d[1])
        n = math.hypot(v, w)
        if n == 0.0:
            raise ValueError("zero direction vector")
        v, w = v / n, w / n
        tol = _BOUNDARY_TOL
        if self.kind == "C":
            inside = v * w <= tol and abs(v) <= self.bound * abs(w) + tol
            edge = abs(v) <= tol or abs(abs(v) - self.bound * abs(w)) <= tol
        else:
            inside = v * w >= -tol and abs(w) <= self.bound * abs(v) + tol
            edge = abs(w) <= tol or abs(abs(w) - self.bound * abs(v)) <= tol
        if inside:
            return ConeMembership(self.kind, boundary=edge)
        return ConeMembership(None)


def classify_direction(d: Sequence[float], cfg: ShearConfig) -> ConeMembership:
    """Membership of a direction in C or Cprime (they meet only at zero)."""
    m = Cone.for_config("C", cfg).classify(d)
    if m.cone is not None:
        return m
    return Cone.for_config("Cprime", cfg).classify(d)


@dataclass(frozen=True)
class ConeStepResult:
    direction: Vec2
    before: ConeMembership
    after: ConeMembership


def cone_step(direction: Sequence[float], which: str, cfg: ShearConfig) -> ConeStepResult:
    """Apply the derivative of one shear to a direction and report cone membership.

    which is "F" (horizontal shear derivative [[1, a], [0, 1]]) or "G"
    (vertical, [[1, 0], [-a, 1]]).
    """
    v, w = float(direction[0]), float(direction[1])
    if v == 0.0 and w == 0.0:
        raise ValueError("zero direction vector")
    step = which.strip().upper()[:1]
    if step not in ("F", "G"):
        raise ValueError(f"which must be an F-step or a G-step, got {which!r}")
    before = classify_direction((v, w), cfg)
    a = cfg.alpha
    if step == "F":
        out = (v + a * w, w)
    else:
        out = (v, w - a * v)
    return ConeStepResult(out, before, classify_direction(out, cfg))


@dataclass(frozen=True)
class AngledShear:
    """Shear strength A > 2 and angle phi in [0, pi/2] between the two lobes."""

    A: float
    phi: float

    def __post_init__(self):
        if not self.A > 2.0:
            raise ValueError("angled shear requires A > 2")
        if not 0.0 <= self.phi <= math.pi / 2 + 1e-12:
            raise ValueError("phi must lie in [0, pi/2]")


def angled_composite(A: float, phi: float) -> np.ndarray:
    """Product of two strength-A shears whose strips meet at angle phi.

    Computed as R(phi) S R(-phi) S with S = [[1, A], [0, 1]]: the second
    shear acts along a direction rotated by phi from the first.  At phi = 0
    the two shears are collinear and the product is parabolic [[1, 2A], [0, 1]];
    at phi = pi/2 the product coincides with the main composite of two
    perpendicular strips.  The determinant is exactly 1 for every (A, phi).
    """
    AngledShear(A, phi)
    c, s = math.cos(phi), math.sin(phi)
    R = np.array([[c, s], [-s, c]])
    Rinv = np.array([[c, -s], [s, c]])
    S = np.array([[1.0, A], [0.0, 1.0]])
    return R @ S @ Rinv @ S


def angled_eigen(A: float, phi: float) -> Tuple[float, float]:
    """Eigenvalue magnitudes (lambda_plus, lambda_minus) of the angled composite.

    The trace is 2 - (A sin phi)^2.  While |trace| < 2 the eigenvalues form a
    unit-modulus complex pair and the magnitudes are reported as (1, 1); past
    the transition A sin phi = 2 the pair is real with product 1 and
    lambda_plus = (|trace| + sqrt(trace^2 - 4)) / 2 >= 1.
    """
    AngledShear(A, phi)
    t = abs(2.0 - (A * math.sin(phi)) ** 2)
    if t <= 2.0:
        return (1.0, 1.0)
    m = (t + math.sqrt(t * t - 4.0)) / 2.0
    return (m, 1.0 / m)
