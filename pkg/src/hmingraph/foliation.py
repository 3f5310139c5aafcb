"""Integral curves of the graph direction field and their polynomial form.

A graph function ``u`` induces the plane direction field ``(1, u(x))``. Its
integral curves ("leaves") satisfy

    gamma(t) = (start1 + t, gamma2(t)),      gamma2' = u(gamma),

so the first component is linear in the flow time by construction and is
stored exactly.  For a solution of the limiting minimal-graph equation the
second derivative of ``u`` along a leaf vanishes, which forces ``gamma2`` to
be a quadratic polynomial in ``t`` and ``u`` restricted to the leaf to be
affine.  This module traces leaves with classical fourth-order Runge-Kutta
(bilinear interpolation of ``u``, matching its Lipschitz regularity class),
fits centered polynomials to quantify how close a traced leaf is to that
degree-two form, and differences ``u`` along leaves.

Fits use monomials in ``t`` centered at the leaf midpoint for conditioning.
Leaves are independent of one another; everything here is read-only in ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .grid import GridFunction

__all__ = [
    "Leaf",
    "LeafTraceError",
    "LieDerivativeSample",
    "trace_leaf",
    "fit_leaf",
    "lie_derivatives",
    "foliation_cover",
    "coverage_fraction",
    "leaf_table",
]


class LeafTraceError(ValueError):
    """A leaf could not be traced or processed from the given data."""


@dataclass
class Leaf:
    """Sampled integral curve of ``(1, u)`` with optional fit results.

    ``points[:, 0]`` equals ``start[0] + t_samples`` exactly.  Fit fields are
    ``None`` until :func:`fit_leaf` runs; polynomial coefficients are stored
    ascending in ``t - fit_center``.
    """

    start: tuple[float, float]
    t_samples: np.ndarray
    points: np.ndarray
    u_values: np.ndarray
    poly_fit: np.ndarray | None = None
    u_fit: np.ndarray | None = None
    fit_center: float | None = None
    gamma2_rel_residual: float | None = None
    gamma2_quad_rel_residual: float | None = None
    u_quad_rel_residual: float | None = None

    def __len__(self) -> int:
        return len(self.t_samples)

    @property
    def cubic_coefficient(self) -> float:
        """|c3| of the centered cubic fit; zero for an exact degree-2 leaf."""
        if self.poly_fit is None:
            raise LeafTraceError("leaf has not been fitted")
        return abs(float(self.poly_fit[3]))


@dataclass(frozen=True)
class LieDerivativeSample:
    t: float
    first: float
    second: float


def _march(u: GridFunction, start: tuple[float, float], dt: float, t_max: float, sign: int):
    """March RK4 steps of size ``sign*dt`` until ``|t| > t_max`` or exit.

    Returns (t_list, y_list) excluding the seed itself.  A step whose stages
    or endpoint leave the grid rectangle is discarded and marching stops.
    """
    s1, s2 = start
    ts: list[float] = []
    ys: list[float] = []
    t, y = 0.0, s2
    h = sign * dt
    n_max = int(np.floor(t_max / dt + 1e-12))
    for _ in range(n_max):
        try:
            k1 = u.interp(s1 + t, y)
            k2 = u.interp(s1 + t + h / 2, y + h * k1 / 2)
            k3 = u.interp(s1 + t + h / 2, y + h * k2 / 2)
            k4 = u.interp(s1 + t + h, y + h * k3)
            y_next = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            u.interp(s1 + t + h, y_next)  # reject steps that land outside
        except ValueError:
            break
        t, y = t + h, y_next
        ts.append(t)
        ys.append(y)
    return ts, ys


def trace_leaf(u: GridFunction, start: tuple[float, float], t_span: tuple[float, float],
               dt: float | None = None) -> Leaf:
    """Trace the integral curve of ``(1, u)`` through ``start``.

    Integrates backward to ``t_span[0] <= 0`` and forward to ``t_span[1] >= 0``
    with uniform steps, stopping early where the curve leaves the grid
    rectangle.  Raises :class:`LeafTraceError` if the seed lies outside the
    grid or no step can be taken in either direction.
    """
    g = u.grid
    s1, s2 = float(start[0]), float(start[1])
    if not g.contains(s1, s2, tol=1e-12):
        raise LeafTraceError(f"leaf seed {(s1, s2)} outside grid rectangle")
    t_lo, t_hi = float(t_span[0]), float(t_span[1])
    if not (t_lo <= 0.0 <= t_hi) or t_hi - t_lo <= 0.0:
        raise LeafTraceError(f"flow-time span {t_span} must straddle 0")
    if dt is None:
        dt = 0.5 * min(g.h1, g.h2)
    if dt <= 0.0:
        raise LeafTraceError("dt must be positive")

    fwd_t, fwd_y = _march(u, (s1, s2), dt, t_hi, +1)
    bwd_t, bwd_y = _march(u, (s1, s2), dt, -t_lo, -1)
    t = np.array(bwd_t[::-1] + [0.0] + fwd_t)
    y = np.array(bwd_y[::-1] + [s2] + fwd_y)
    if len(t) < 2:
        raise LeafTraceError(
            f"zero-length leaf at {(s1, s2)}: no admissible step within the grid")
    points = np.column_stack([s1 + t, y])
    u_vals = np.array([u.interp(p1, p2) for p1, p2 in points])
    return Leaf(start=(s1, s2), t_samples=t, points=points, u_values=u_vals)


def _rel_residual(y: np.ndarray, fit: np.ndarray) -> float:
    """RMS misfit relative to the RMS variation of the data (0 if constant)."""
    spread = float(np.sqrt(np.mean((y - y.mean()) ** 2)))
    if spread == 0.0:
        return 0.0
    return float(np.sqrt(np.mean((y - fit) ** 2))) / spread


def fit_leaf(leaf: Leaf) -> Leaf:
    """Return a copy of ``leaf`` with centered polynomial fits attached.

    Cubic least squares on ``gamma2(t)`` (the |c3| gauge of departure from a
    degree-two curve, plus the quadratic-only relative residual) and quadratic
    least squares on ``u(gamma(t))``.
    """
    n = len(leaf)
    if n < 8:
        raise LeafTraceError(f"need at least 8 samples to fit a leaf, got {n}")
    t = leaf.t_samples
    span = float(t[-1] - t[0])
    if span <= 0.0 or np.min(np.diff(t)) <= 1e-13 * span:
        raise LeafTraceError("degenerate sample spacing in leaf")
    center = 0.5 * float(t[0] + t[-1])
    s = t - center
    y = leaf.points[:, 1]
    P = np.polynomial.polynomial
    cubic = P.polyfit(s, y, 3)
    quad = P.polyfit(s, y, 2)
    u_quad = P.polyfit(s, leaf.u_values, 2)
    return replace(
        leaf,
        poly_fit=cubic,
        u_fit=u_quad,
        fit_center=center,
        gamma2_rel_residual=_rel_residual(y, P.polyval(s, cubic)),
        gamma2_quad_rel_residual=_rel_residual(y, P.polyval(s, quad)),
        u_quad_rel_residual=_rel_residual(leaf.u_values, P.polyval(s, u_quad)),
    )


def lie_derivatives(leaf: Leaf) -> list[LieDerivativeSample]:
    """Centered first and second flow-time differences of ``u`` along the leaf.

    The second difference approximates the second derivative of ``u`` composed
    with the leaf, the quantity that vanishes for limit solutions.  Endpoints
    carry no sample.
    """
    n = len(leaf)
    if n < 5:
        raise LeafTraceError(f"need at least 5 samples for leaf derivatives, got {n}")
    t = leaf.t_samples
    w = leaf.u_values
    out = []
    for i in range(1, n - 1):
        dp = t[i + 1] - t[i]
        dm = t[i] - t[i - 1]
        first = (w[i + 1] - w[i - 1]) / (dp + dm)
        second = 2.0 * ((w[i + 1] - w[i]) / dp - (w[i] - w[i - 1]) / dm) / (dp + dm)
        out.append(LieDerivativeSample(t=float(t[i]), first=float(first), second=float(second)))
    return out


def foliation_cover(u: GridFunction, seed_spacing: float) -> list[Leaf]:
    """Trace leaves seeded along the inflow part of the boundary.

    The left edge is always inflow (the first flow component has unit speed);
    bottom and top edge points are seeded where the field points into the
    rectangle.  Seeds where no step fits are skipped silently.
    """
    if seed_spacing <= 0.0:
        raise ValueError("seed spacing must be positive")
    g = u.grid
    (a1, b1), (a2, b2) = g.x1_range, g.x2_range
    span = b1 - a1
    leaves: list[Leaf] = []

    def try_seed(p1, p2):
        try:
            leaves.append(trace_leaf(u, (p1, p2), (0.0, span)))
        except LeafTraceError:
            pass

    for s2 in np.arange(a2, b2 + 1e-12 * span, seed_spacing):
        try_seed(a1, min(s2, b2))
    # horizontal edges: only where leaves enter the rectangle
    for s1 in np.arange(a1 + seed_spacing, b1 - 1e-12 * span, seed_spacing):
        if u.interp(s1, a2) > 0.0:
            try_seed(s1, a2)
        if u.interp(s1, b2) < 0.0:
            try_seed(s1, b2)
    return leaves


def coverage_fraction(u: GridFunction, leaves: list[Leaf], radius: float | None = None) -> float:
    """Fraction of interior grid nodes within ``radius`` of some leaf sample."""
    g = u.grid
    if radius is None:
        radius = max(g.h1, g.h2)
    if not leaves:
        return 0.0
    samples = np.concatenate([leaf.points for leaf in leaves])
    x1, x2 = g.nodes()
    nodes = np.column_stack([x1[1:-1, 1:-1].ravel(), x2[1:-1, 1:-1].ravel()])
    dist, _ = cKDTree(samples).query(nodes, k=1)
    return float(np.mean(dist <= radius))


def leaf_table(leaf: Leaf) -> np.ndarray:
    """Rows (t, x1, x2, u, first, second); derivative columns NaN at endpoints."""
    n = len(leaf)
    first = np.full(n, np.nan)
    second = np.full(n, np.nan)
    if n >= 5:
        for s in lie_derivatives(leaf):
            i = int(np.argmin(np.abs(leaf.t_samples - s.t)))
            first[i] = s.first
            second[i] = s.second
    return np.column_stack([leaf.t_samples, leaf.points, leaf.u_values, first, second])
