"""Numerical toolkit for a suspension flow over a linked twist map.

Submodules: geometry (the two-strip track and its charts), maps (shear
matrices, eigenstructure, cones, angled composites), dynamics (orbits, first
returns, the fiber flow), segments (linear-segment iteration and growth
certificates), criticality (critical shear thresholds), diagnostics
(Lyapunov, equidistribution, mixing traces), cli (batch front-end).

Submodules are imported on demand; ``import linkedtwist.dynamics`` etc.
"""

__version__ = "0.1.0"
