"""Graph frames, their lift to one extra dimension, and adapted geometry.

A scalar field ``u`` on a planar rectangle induces the frame

    X1 f = d1 f + u * d2 f        (graph direction)
    X2 f = eps * d2 f             (regularizing direction, eps > 0)

whose gradient ``(X1 u, X2 u)`` drives every operator in this package.  The
frame lifts to the slab ``Omega x (-1, 1)`` by

    X1~ = d1 + (u(x) + s^2) d2,   X2~ = eps d2,   X3~ = ds,

which satisfies the step-2 bracket-generating relations

    [X1~, X3~] = -2 s d2,   [X3~, [X1~, X3~]] = -2 d2,

so the missing planar direction d2 is recovered from two brackets and the
homogeneous dimension of the lifted structure is 5.

Around a base node the field is frozen to its first-order model (an affine
function written in adapted coordinates), giving computable exponential
coordinates, two distance surrogates, and a lattice shortest-path oracle
for the true control distance of the frozen frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .grid import Grid, GridFunction, require_same_grid

__all__ = [
    "Frame",
    "LiftedPoint",
    "LiftedFrame",
    "FrozenFrame",
    "PathExitsGridError",
    "UnreachableError",
    "apply_x1",
    "apply_x2",
    "lift_frame",
    "exp_coords_lifted",
    "taylor_p1",
    "eval_p1",
    "dist_surrogate_eps",
    "dist_surrogate_cc",
    "dist_oracle",
    "taylor_remainder_exponent",
]


class PathExitsGridError(RuntimeError):
    """A connecting flow path left the rectangle where u is defined."""


class UnreachableError(RuntimeError):
    """Lattice shortest-path query ended on an unreached node."""


@dataclass(frozen=True)
class Frame:
    """Graph frame: a field ``u`` on its grid together with eps > 0."""

    u: GridFunction
    epsilon: float

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")

    @property
    def grid(self) -> Grid:
        return self.u.grid


@dataclass(frozen=True)
class LiftedPoint:
    """Point of the lifted slab: planar position plus slab coordinate s."""

    x1: float
    x2: float
    s: float


def apply_x1(frame: Frame, f: GridFunction) -> GridFunction:
    """Apply ``X1 = d1 + u d2`` to ``f`` nodewise.

    Second-order stencils; boundary rows/columns use one-sided differences,
    so compositions degrade near the edge (callers shrink by the composition
    depth when taking sup norms).
    """
    require_same_grid(frame.u, f)
    vals = f.d1() + frame.u.values * f.d2()
    return GridFunction(f.grid, vals)


def apply_x2(frame: Frame, f: GridFunction) -> GridFunction:
    """Apply ``X2 = eps * d2`` to ``f`` nodewise."""
    require_same_grid(frame.u, f)
    return GridFunction(f.grid, frame.epsilon * f.d2())


# ---------------------------------------------------------------------------
# lifted frame
# ---------------------------------------------------------------------------


class LiftedFrame:
    """Evaluators for the lifted fields at points of ``Omega x (-1, 1)``.

    The ``apply_*`` methods differentiate a callable ``f(x1, x2, s)`` by a
    centered difference of length ``step`` along the field direction frozen
    at the evaluation point, exact for f polynomial of degree <= 2 along the
    line.  The commutator evaluators implement the closed forms
    ``[X1~, X3~] = -2 s d2`` and ``[X3~, [X1~, X3~]] = -2 d2``.
    """

    def __init__(self, frame: Frame, step: float = 1e-4):
        self.frame = frame
        self.step = float(step)

    def coefficient(self, p: LiftedPoint) -> float:
        """The d2-coefficient ``u(x) + s^2`` of X1~ at ``p``."""
        return float(self.frame.u.interp(p.x1, p.x2)) + p.s ** 2

    def _directional(self, f: Callable, p: LiftedPoint, v: tuple) -> float:
        h = self.step
        return (
            f(p.x1 + h * v[0], p.x2 + h * v[1], p.s + h * v[2])
            - f(p.x1 - h * v[0], p.x2 - h * v[1], p.s - h * v[2])
        ) / (2 * h)

    def apply_x1(self, f: Callable, p: LiftedPoint) -> float:
        return self._directional(f, p, (1.0, self.coefficient(p), 0.0))

    def apply_x2(self, f: Callable, p: LiftedPoint) -> float:
        return self._directional(f, p, (0.0, self.frame.epsilon, 0.0))

    def apply_x3(self, f: Callable, p: LiftedPoint) -> float:
        return self._directional(f, p, (0.0, 0.0, 1.0))

    def commutator_13(self, f: Callable, p: LiftedPoint) -> float:
        """Closed form ``[X1~, X3~] f = -2 s d2 f``."""
        return -2.0 * p.s * self._directional(f, p, (0.0, 1.0, 0.0))

    def commutator_313(self, f: Callable, p: LiftedPoint) -> float:
        """Closed form ``[X3~, [X1~, X3~]] f = -2 d2 f``."""
        return -2.0 * self._directional(f, p, (0.0, 1.0, 0.0))


def lift_frame(frame: Frame, step: float = 1e-4) -> LiftedFrame:
    """Lift the planar frame to the slab; see :class:`LiftedFrame`."""
    return LiftedFrame(frame, step=step)


# ---------------------------------------------------------------------------
# exponential coordinates along the lifted frame
# ---------------------------------------------------------------------------


def _flow_coords(
    u_eval: Callable,
    x0: tuple[float, float],
    x: tuple[float, float],
    s: float,
    eps: float,
    n_start: int = 32,
    rel_tol: float = 1e-9,
    max_doublings: int = 5,
):
    """Adapted coordinates (e1, e2, e3) of ``(x, s)`` seen from ``(x0, 0)``.

    The flow of ``e1 X1~ + e2 X2~ + e3 X3~`` from ``(x0, 0)`` reaches
    ``(x, s)`` at time one.  Its first and third components are affine in
    time, fixing ``e1 = (x - x0)_1`` and ``e3 = s``; the second component is
    recovered by shooting on the constant drive ``c = eps * e2`` of

        g2'(t) = e1 * (u(g1(t), g2(t)) + t^2 s^2) + c,

    integrated by the classical fourth-order scheme.  The reported e2 comes
    from the quadrature identity

        eps * e2 = (x - x0)_2 - e1 * (I + s^2 / 3),
        I = integral_0^1 u(gamma(t)) dt  (composite Simpson),

    which the converged path satisfies by construction.  Subinterval counts
    start at ``n_start`` (even) and double until e2 moves by less than
    ``rel_tol`` (relative), or ``max_doublings`` is hit.

    ``u_eval(x1, x2)`` must evaluate anywhere on the path and raise
    ``ValueError`` off its domain, which is converted to
    :class:`PathExitsGridError`.
    """
    e1 = x[0] - x0[0]
    dx2 = x[1] - x0[1]

    def shoot(n: int) -> tuple[float, np.ndarray]:
        tau = np.linspace(0.0, 1.0, n + 1)
        dt = 1.0 / n

        def rhs(t, y, c):
            return e1 * (u_eval(x0[0] + e1 * t, y) + (t * s) ** 2) + c

        c = dx2 - e1 * (u_eval(*x0) + s * s / 3.0)  # zeroth guess: flat path
        path = np.empty(n + 1)
        for _ in range(60):
            y = x0[1]
            path[0] = y
            try:
                for k in range(n):
                    t = tau[k]
                    k1 = rhs(t, y, c)
                    k2 = rhs(t + dt / 2, y + dt * k1 / 2, c)
                    k3 = rhs(t + dt / 2, y + dt * k2 / 2, c)
                    k4 = rhs(t + dt, y + dt * k3, c)
                    y = y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
                    path[k + 1] = y
            except ValueError as exc:
                raise PathExitsGridError(
                    f"flow path from {x0} to {x} leaves the field's domain"
                ) from exc
            miss = x[1] - y
            c += miss  # dG/dc ~ 1
            if abs(miss) <= 1e-13 * (1.0 + abs(dx2)):
                break
        return c, path

    def e2_at(n: int) -> float:
        c, path = shoot(n)
        tau = np.linspace(0.0, 1.0, n + 1)
        try:
            uvals = np.array([u_eval(x0[0] + e1 * t, y) for t, y in zip(tau, path)])
        except ValueError as exc:
            raise PathExitsGridError(
                f"flow path from {x0} to {x} leaves the field's domain"
            ) from exc
        integral = _simpson(uvals, 1.0 / n)
        return (dx2 - e1 * (integral + s * s / 3.0)) / eps

    n = n_start
    e2 = e2_at(n)
    for _ in range(max_doublings):
        n *= 2
        e2_next = e2_at(n)
        done = abs(e2_next - e2) <= rel_tol * max(1.0, abs(e2_next))
        e2 = e2_next
        if done:
            break
    return e1, e2, s


def _simpson(vals: np.ndarray, dt: float) -> float:
    n = len(vals) - 1
    if n % 2 != 0:
        raise ValueError("composite Simpson needs an even subinterval count")
    return float(dt / 3.0 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-2:2].sum()))


def exp_coords_lifted(frame: Frame, x0: tuple[float, float], p: LiftedPoint):
    """Exponential coordinates of lifted point ``p`` with base ``(x0, 0)``.

    ``u`` is evaluated along the connecting flow path by bilinear
    interpolation; a path escaping the rectangle raises
    :class:`PathExitsGridError`.
    """
    g = frame.grid
    if not g.contains(x0[0], x0[1]):
        raise ValueError("base point outside grid")

    def u_eval(a, b):
        return frame.u.interp(a, b)

    return _flow_coords(u_eval, (float(x0[0]), float(x0[1])), (p.x1, p.x2), p.s, frame.epsilon)


# ---------------------------------------------------------------------------
# first-order model at a node and frozen frame
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrozenFrame:
    """First-order data of a frame at a base node.

    ``x1u0`` and ``x2u0`` are the frame derivatives of u at ``x0`` (computed
    with the grid stencils), so the first-order model in adapted coordinates

        P1(x) = u0 + e1(x) * x1u0 + e2(x) * x2u0,
        e1 = (x - x0)_1,   e2 = ((x - x0)_2 - (x - x0)_1 * u0) / eps,

    reproduces affine fields exactly: the cross terms in e2 cancel against
    the u-dependence of the frame derivative.
    """

    x0: tuple[float, float]
    u0: float
    x1u0: float
    x2u0: float
    epsilon: float


def taylor_p1(frame: Frame, x0: tuple[float, float]) -> FrozenFrame:
    """Freeze the frame at an interior node ``x0``.

    The base point must coincide with a grid node strictly inside the
    rectangle so centered derivative stencils are available.
    """
    g = frame.grid
    i, j = g.node_index(float(x0[0]), float(x0[1]))
    if i == 0 or j == 0 or i == g.n1 - 1 or j == g.n2 - 1:
        raise ValueError("base point must be an interior node")
    u = frame.u.values
    d1 = (u[i + 1, j] - u[i - 1, j]) / (2 * g.h1)
    d2 = (u[i, j + 1] - u[i, j - 1]) / (2 * g.h2)
    u0 = float(u[i, j])
    return FrozenFrame(
        x0=(float(x0[0]), float(x0[1])),
        u0=u0,
        x1u0=float(d1 + u0 * d2),
        x2u0=float(frame.epsilon * d2),
        epsilon=frame.epsilon,
    )


def eval_p1(ff: FrozenFrame, x1, x2):
    """Evaluate the first-order model of :class:`FrozenFrame` at ``(x1, x2)``."""
    e1 = np.asarray(x1, dtype=float) - ff.x0[0]
    e2 = (np.asarray(x2, dtype=float) - ff.x0[1] - e1 * ff.u0) / ff.epsilon
    out = ff.u0 + e1 * ff.x1u0 + e2 * ff.x2u0
    return float(out) if np.ndim(out) == 0 else out


def _frozen_coords(ff: FrozenFrame, p: LiftedPoint):
    """Adapted coordinates of ``p`` for the frozen frame (P1 replaces u)."""
    # P1 is affine; expand it once into Euclidean coefficients for scalar speed
    g2 = ff.x2u0 / ff.epsilon
    g1 = ff.x1u0 - ff.u0 * g2
    x01, x02, u0 = ff.x0[0], ff.x0[1], ff.u0

    def u_eval(a, b):
        return u0 + (a - x01) * g1 + (b - x02) * g2

    return _flow_coords(u_eval, ff.x0, (p.x1, p.x2), p.s, ff.epsilon)


def dist_surrogate_eps(ff: FrozenFrame, p: LiftedPoint) -> float:
    """Anisotropic gauge equivalent to the frozen frame's control distance.

    ``sqrt(e1^2 + min(e2^2, (eps*e2)^(2/3)) + e3^2)`` in frozen adapted
    coordinates: Riemannian at scales where the eps-direction is cheap,
    step-2 homogeneous below them.
    """
    e1, e2, e3 = _frozen_coords(ff, p)
    mid = min(e2 * e2, abs(ff.epsilon * e2) ** (2.0 / 3.0))
    return math.sqrt(e1 * e1 + mid + e3 * e3)


def dist_surrogate_cc(ff: FrozenFrame, p: LiftedPoint) -> float:
    """Homogeneous gauge ``(e1^6 + (eps*e2)^2 + e3^6)^(1/6)`` (step-2 scaling)."""
    e1, e2, e3 = _frozen_coords(ff, p)
    return float((e1 ** 6 + (ff.epsilon * e2) ** 2 + e3 ** 6) ** (1.0 / 6.0))


# ---------------------------------------------------------------------------
# lattice shortest-path oracle for the frozen control distance
# ---------------------------------------------------------------------------


def _oracle_sweep(
    ff: FrozenFrame,
    mesh: float,
    box: tuple[float, float, float],
):
    """One Dijkstra sweep from the lattice center; see :func:`dist_oracle`."""
    if mesh <= 0:
        raise ValueError("mesh must be positive")
    eps = ff.epsilon
    a1 = mesh
    a2 = eps * mesh / 2.0
    a3 = mesh
    n1 = max(1, int(round(box[0] / a1)))
    n2 = max(1, int(round(box[1] / a2)))
    n3 = max(1, int(round(box[2] / a3)))
    N1, N2, N3 = 2 * n1 + 1, 2 * n2 + 1, 2 * n3 + 1
    if N1 * N2 * N3 > 4_000_000:
        raise ValueError(
            f"oracle lattice would hold {N1 * N2 * N3} nodes "
            "(the vertical spacing scales with eps*mesh); coarsen the mesh or shrink the box")

    # node (i, j, k) ~ (x0_1 + (i - n1) a1, x0_2 + (j - n2) a2, (k - n3) a3)
    I, J, K = np.meshgrid(np.arange(N1), np.arange(N2), np.arange(N3), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    X1 = ff.x0[0] + (I - n1) * a1
    X2 = ff.x0[1] + (J - n2) * a2
    S = (K - n3) * a3
    coeff = eval_p1(ff, X1, X2) + S ** 2  # d2-coefficient of frozen X1 field

    def flat(i, j, k):
        return (i * N2 + j) * N3 + k

    src_rows = []
    dst_rows = []
    for sign in (+1, -1):
        # X1 move: exact in x1, sheared in x2, snapped to the lattice
        ti = I + sign
        tj = J + np.rint(sign * mesh * coeff / a2).astype(np.int64)
        ok = (ti >= 0) & (ti < N1) & (tj >= 0) & (tj < N2)
        src_rows.append(flat(I[ok], J[ok], K[ok]))
        dst_rows.append(flat(ti[ok], tj[ok], K[ok]))
        # X2 move: exactly two lattice cells in x2
        tj = J + 2 * sign
        ok = (tj >= 0) & (tj < N2)
        src_rows.append(flat(I[ok], J[ok], K[ok]))
        dst_rows.append(flat(I[ok], tj[ok], K[ok]))
        # X3 move: one lattice cell in s
        tk = K + sign
        ok = (tk >= 0) & (tk < N3)
        src_rows.append(flat(I[ok], J[ok], K[ok]))
        dst_rows.append(flat(I[ok], J[ok], tk[ok]))

    src = np.concatenate(src_rows)
    dst = np.concatenate(dst_rows)
    w = np.full(src.shape, mesh)
    n_nodes = N1 * N2 * N3
    graph = coo_matrix((w, (src, dst)), shape=(n_nodes, n_nodes)).tocsr()

    center = flat(n1, n2, n3)
    dist = _csgraph_dijkstra(graph, directed=True, indices=center)

    def query(p: LiftedPoint) -> float:
        qi = n1 + int(round((p.x1 - ff.x0[0]) / a1))
        qj = n2 + int(round((p.x2 - ff.x0[1]) / a2))
        qk = n3 + int(round(p.s / a3))
        if not (0 <= qi < N1 and 0 <= qj < N2 and 0 <= qk < N3):
            raise UnreachableError("query point outside the oracle lattice box")
        d = float(dist[flat(qi, qj, qk)])
        if not np.isfinite(d):
            raise UnreachableError("query node not reached by the lattice sweep")
        return d

    return query


def _oracle_meshes(mesh: float, box: tuple[float, float, float]) -> list:
    """The query mesh plus its power-of-two coarsenings up to a fixed cap.

    Anchoring the chain at a cap depending only on the box makes the mesh
    sets nested under halving, which is what turns per-mesh estimates into a
    monotone family.
    """
    cap = min(box) / 3.0
    meshes = [mesh]
    while meshes[-1] * 2.0 <= cap:
        meshes.append(meshes[-1] * 2.0)
    return meshes


def dist_oracle(
    ff: FrozenFrame,
    p: LiftedPoint,
    mesh: float,
    box: tuple[float, float, float] = (0.2, 0.2, 0.2),
) -> float:
    """Control-distance estimate for the frozen frame by lattice Dijkstra.

    Nodes form a box-shaped lattice centered at ``(x0, 0)`` with spacings
    ``(mesh, eps*mesh/2, mesh)``; each node has six outgoing edges, the
    explicit Euler steps of parameter length ``mesh`` along the positive and
    negative frozen fields, snapped to the nearest lattice node.  Edge weight
    equals the parameter length, so a Dijkstra sweep from the center returns
    upper-biased control distances.

    Snap rounding means a single sweep is not monotone under mesh halving,
    so the reported value is the minimum over the sweep at ``mesh`` and its
    power-of-two coarsenings up to a box-dependent cap; the coarsening sets
    nest under halving, making refinement monotone non-increasing by
    construction while every contributing sweep remains an upper-bound
    estimate.

    ``box`` holds the lattice half-widths per coordinate.  Maneuvers are
    confined to the box, so it must enclose the paths that matter: in
    particular vertical displacements ride on lift-coordinate excursions of
    amplitude about the cube root of the displacement when the direct
    vertical field is expensive (small eps).  A query outside the box, or on
    a node the sweep never reached, raises :class:`UnreachableError`.
    """
    return dist_oracle_many(ff, [p], mesh, box)[0]


def dist_oracle_many(
    ff: FrozenFrame,
    points: Sequence[LiftedPoint],
    mesh: float,
    box: tuple[float, float, float] = (0.2, 0.2, 0.2),
) -> list:
    """Oracle distances for many points; each Dijkstra sweep is paid once.

    Same semantics as :func:`dist_oracle` (including the minimum over
    coarsened sweeps).
    """
    best = np.full(len(points), np.inf)
    for m in _oracle_meshes(mesh, box):
        query = _oracle_sweep(ff, m, box)
        for k, p in enumerate(points):
            try:
                best[k] = min(best[k], query(p))
            except UnreachableError:
                pass  # this coarsening cannot resolve the point; others may
    if not np.all(np.isfinite(best)):
        bad = points[int(np.argmax(~np.isfinite(best)))]
        raise UnreachableError(
            f"point ({bad.x1:g}, {bad.x2:g}, {bad.s:g}) unreachable at every lattice mesh")
    return [float(v) for v in best]


# ---------------------------------------------------------------------------
# first-order remainder exponent
# ---------------------------------------------------------------------------


def taylor_remainder_exponent(
    frame: Frame,
    x0: tuple[float, float],
    radii: Sequence[float],
    min_samples: int = 8,
    drop_below: float = 1e-14,
) -> float:
    """Log-log slope of ``|u - P1|`` against the frozen gauge around ``x0``.

    Grid nodes whose surrogate distance from the base falls inside
    ``[min(radii), max(radii)]`` contribute one sample each; samples with
    remainder below ``drop_below`` are discarded (exactly reproduced fields
    would otherwise poison the regression), and if everything is discarded
    the fit is reported as ``inf``.  Fewer than ``min_samples`` surviving
    samples raise ``ValueError``.
    """
    if len(radii) < 2:
        raise ValueError("need at least two radii to bracket a fit window")
    lo, hi = min(radii), max(radii)
    ff = taylor_p1(frame, x0)
    g = frame.grid
    X1g, X2g = g.nodes()
    d = np.sqrt((X1g - ff.x0[0]) ** 2 + (X2g - ff.x0[1]) ** 2)
    cand = np.argwhere((d <= 2.0 * hi) & (d > 0))
    logs_d, logs_r = [], []
    n_inside = 0
    for i, j in cand:
        p = LiftedPoint(float(X1g[i, j]), float(X2g[i, j]), 0.0)
        dist = dist_surrogate_eps(ff, p)
        if not (lo <= dist <= hi):
            continue
        n_inside += 1
        rem = abs(float(frame.u.values[i, j]) - eval_p1(ff, X1g[i, j], X2g[i, j]))
        if rem < drop_below:
            continue
        logs_d.append(math.log(dist))
        logs_r.append(math.log(rem))
    if n_inside >= min_samples and not logs_d:
        return math.inf  # model reproduces u on the whole window
    if len(logs_d) < min_samples:
        raise ValueError(
            f"only {len(logs_d)} usable samples in radius window [{lo}, {hi}]"
        )
    slope = np.polyfit(np.array(logs_d), np.array(logs_r), 1)[0]
    return float(slope)
