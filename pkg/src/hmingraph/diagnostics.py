"""Regularity monitors that are uniform in the regularization parameter.

Everything here is read-only over solved states: iterated graph-direction
derivatives, Holder seminorms on explicit separation windows, scaled Sobolev
norms built from derivative strings of the frame fields, residuals of the two
equations satisfied by derivatives of a solution, and a verdict object that
bundles the checks against configured budgets.

Interior bookkeeping: each derivative order is reliable one stencil width
further from the boundary, so measurement routines take an explicit margin
(in nodes) and the verdict uses a fixed fraction of the domain.  Seminorm
sampling is deterministic: pairs are enumerated by node offset, exhaustively
when the pair count is small and stratified by separation scale otherwise, so
repeated runs give bit-identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Frame, apply_x1, apply_x2
from .grid import Grid, GridFunction
from .operators import coefficients
from .solver import VanishingViscosityRun, m_bound

__all__ = [
    "intrinsic_derivative",
    "holder_seminorm",
    "holder_exponent_estimate",
    "sobolev_norm_eps",
    "derivative_equation_residuals",
    "NormLedger",
    "NormLedgerRow",
    "norm_ledger",
    "DiagnosticsBudgets",
    "RegularityVerdict",
    "verdict",
]

PAIR_CAP = 10 ** 6


def intrinsic_derivative(u: GridFunction, k: int) -> GridFunction:
    """k-fold graph-direction derivative of ``u`` along its own frame.

    Values within ``k`` nodes of the boundary carry one-sided stencil error;
    restrict accordingly before measuring.
    """
    if k < 1:
        raise ValueError("derivative order must be >= 1")
    frame = Frame(u, 1.0)  # the graph direction does not involve epsilon
    out = u
    for _ in range(k):
        out = apply_x1(frame, out)
    return out


def _offset_quotients(values: np.ndarray, grid: Grid, offsets, lo: float, hi: float):
    """Yield (separation, max |difference|) per admissible node offset."""
    n1, n2 = values.shape
    hi_tol = hi * (1.0 + 1e-12)
    for di, dj in offsets:
        if di == 0 and dj == 0:
            continue
        sep = np.hypot(di * grid.h1, dj * grid.h2)
        if sep < lo or sep > hi_tol:
            continue
        if dj >= 0:
            a = values[di:, dj:] if dj else values[di:, :]
            b = values[: n1 - di, : n2 - dj] if dj else values[: n1 - di, :]
        else:
            a = values[di:, :dj]
            b = values[: n1 - di, -dj:]
        if a.size == 0:
            continue
        yield sep, float(np.max(np.abs(a - b)))


def _offset_set(grid: Grid, lo: float, hi: float):
    """Deterministic offsets covering separations in [lo, hi].

    Exhaustive when the grid's pair count is at most PAIR_CAP; otherwise all
    short offsets plus offsets on log-spaced separation shells at a fan of
    directions (stratified by separation scale).
    """
    n1, n2 = grid.n1, grid.n2
    n_nodes = n1 * n2
    if n_nodes * (n_nodes - 1) // 2 <= PAIR_CAP:
        return [(di, dj) for di in range(n1) for dj in range(-(n2 - 1), n2)]
    offsets = {(di, dj) for di in range(5) for dj in range(-4, 5)}
    h_min = min(grid.h1, grid.h2)
    r_lo = max(lo, h_min)
    radii = np.geomspace(r_lo, hi, 48)
    angles = np.linspace(-np.pi / 2, np.pi / 2, 25)
    for r in radii:
        for th in angles:
            di = int(round(r * np.cos(th) / grid.h1))
            dj = int(round(r * np.sin(th) / grid.h2))
            if 0 <= di < n1 and -n2 < dj < n2:
                offsets.add((di, dj))
    return sorted(offsets)


def holder_seminorm(f: GridFunction, alpha: float, window: tuple[float, float]) -> float:
    """Max of |f(x)-f(y)| / |x-y|^alpha over node pairs separated within window.

    Euclidean separations.  Deterministic by construction; see module
    docstring for the sampling scheme.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 <= lo < hi:
        raise ValueError(f"bad separation window {window}")
    best = -1.0
    for sep, dmax in _offset_quotients(f.values, f.grid, _offset_set(f.grid, lo, hi), lo, hi):
        best = max(best, dmax / sep ** alpha)
    if best < 0.0:
        raise ValueError(f"no node pairs with separation in window {window}")
    return best


def holder_exponent_estimate(f: GridFunction, window: tuple[float, float], nbins: int = 8) -> float:
    """Slope of log(max |difference|) against log(separation), clipped to [0, 1].

    An estimate near 1 indicates Lipschitz-like behaviour on the window; a
    jump discontinuity drives it toward 0.
    """
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 < lo < hi:
        raise ValueError(f"bad separation window {window}")
    edges = np.geomspace(lo, hi, nbins + 1)
    bin_max = np.zeros(nbins)
    for sep, dmax in _offset_quotients(f.values, f.grid, _offset_set(f.grid, lo, hi), lo, hi):
        k = min(int(np.searchsorted(edges, sep, side="right")) - 1, nbins - 1)
        if k >= 0:
            bin_max[k] = max(bin_max[k], dmax)
    centers = np.sqrt(edges[:-1] * edges[1:])
    ok = bin_max > 0.0
    if int(ok.sum()) < 2:
        raise ValueError("not enough populated separation bins to fit an exponent")
    slope = np.polyfit(np.log(centers[ok]), np.log(bin_max[ok]), 1)[0]
    return float(np.clip(slope, 0.0, 1.0))


def sobolev_norm_eps(frame: Frame, m: int, p: float, of: GridFunction | None = None,
                     strings: str = "eps") -> float:
    """Sum of discrete L^p norms of all frame-derivative strings of order <= m.

    ``strings="eps"`` uses both frame fields (2^k strings at order k);
    ``strings="x1"`` uses only the graph direction, the scaling-robust family
    that survives the vanishing limit.  All strings are measured on the
    common margin-``m`` interior with a uniform-weight rule, so ``m = 0``
    reduces to the plain L^p norm of the field itself.
    """
    if m < 0:
        raise ValueError("order must be >= 0")
    if p < 1:
        raise ValueError("p must be >= 1")
    if strings not in ("eps", "x1"):
        raise ValueError("strings must be 'eps' or 'x1'")
    f0 = frame.u if of is None else of
    ops = [lambda g: apply_x1(frame, g)]
    if strings == "eps":
        ops.append(lambda g: apply_x2(frame, g))
    grid = f0.grid
    w = grid.h1 * grid.h2
    total = 0.0
    level = [f0]
    for k in range(m + 1):
        for g in level:
            vals = g.restrict(m)
            total += float((w * np.sum(np.abs(vals) ** p)) ** (1.0 / p))
        if k < m:
            level = [op(g) for g in level for op in ops]
    return total


def _nodal_ops(frame: Frame):
    grid = frame.u.grid
    gf = lambda arr: GridFunction(grid, arr)
    ax1 = lambda arr: apply_x1(frame, gf(arr)).values
    ax2 = lambda arr: apply_x2(frame, gf(arr)).values
    return gf, ax1, ax2


def derivative_equation_residuals(frame: Frame, margin: int = 3) -> tuple[float, float]:
    """Sup-norm defects of the two equations solved by derivatives of ``u``.

    For a solved state, ``v`` (the vertical Euclidean derivative) satisfies a
    divergence-form equation whose right-hand side is cubic in ``v``, and
    ``z`` (the graph-direction derivative) satisfies the flux-linearized
    equation with a commutator right-hand side.  Both sides are evaluated
    with nodal second-order stencils; the defects of a solved smooth state
    shrink at second order in mesh size, while a non-solution leaves an
    order-one defect.
    """
    gf, ax1, ax2 = _nodal_ops(frame)
    u = frame.u
    eps = frame.epsilon
    c = coefficients(frame)
    b11, b12, b22 = c.a11 / c.w, c.a12 / c.w, c.a22 / c.w

    v = u.d2()
    x1v, x2v = ax1(v), ax2(v)
    lhs_v = ax1(b11 * x1v + b12 * x2v) + ax2(b12 * x1v + b22 * x2v)
    rhs_v = -b11 * v ** 3 - (b11 * x1v + b12 * x2v) * v - (ax1(b11 * v * v) + ax2(b12 * v * v))
    v_res = float(np.max(np.abs((lhs_v - rhs_v)[margin:-margin, margin:-margin])))

    z = ax1(u.values)  # graph-direction derivative of u
    x1z, x2z = ax1(z), ax2(z)
    lhs_z = ax1(b11 * x1z + b12 * x2z) + ax2(b12 * x1z + b22 * x2z)
    p2 = eps * v
    rhs_z = v * ax2(p2 / c.w) + ax1(b12 * eps * v * v) + ax2(b22 * eps * v * v)
    z_res = float(np.max(np.abs((lhs_z - rhs_z)[margin:-margin, margin:-margin])))
    return v_res, z_res


@dataclass(frozen=True)
class NormLedgerRow:
    eps: float
    M: float
    norms: dict
    holder: tuple  # pairs (alpha, seminorm)

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "M": self.M,
            "norms": dict(self.norms),
            "holder": [{"alpha": a, "seminorm": s} for a, s in self.holder],
        }


@dataclass
class NormLedger:
    """Per-epsilon norm rows, strictly decreasing in epsilon."""

    rows: list

    def __post_init__(self):
        eps = [r.eps for r in self.rows]
        if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ValueError("ledger rows must have strictly decreasing eps")
        for r in self.rows:
            entries = [r.eps, r.M, *r.norms.values(), *(s for _, s in r.holder)]
            if not all(np.isfinite(x) and x >= 0 for x in entries):
                raise ValueError("ledger entries must be finite and non-negative")

    def as_dict(self) -> dict:
        return {"rows": [r.as_dict() for r in self.rows]}


DEFAULT_ALPHAS = (0.25, 0.5, 0.75, 0.9)


def _default_window(grid: Grid) -> tuple[float, float]:
    h = max(grid.h1, grid.h2)
    width = min(grid.x1_range[1] - grid.x1_range[0], grid.x2_range[1] - grid.x2_range[0])
    return (2 * h, 0.25 * width)


def norm_ledger(run: VanishingViscosityRun, alphas=DEFAULT_ALPHAS,
                window: tuple[float, float] | None = None,
                extra_orders: tuple = ()) -> NormLedger:
    """Assemble the per-epsilon norm rows monitored along a continuation run.

    Each row records the coarse size bound M, the order-2 scaled Sobolev norm
    of u, the order-1 norm of its vertical derivative, any extra (m, p)
    norms, and Holder seminorms of both gradient components at the requested
    exponents.
    """
    rows = []
    for eps, sol in zip(run.eps_values, run.solutions):
        frame = Frame(sol, eps)
        grid = sol.grid
        win = _default_window(grid) if window is None else window
        norms = {
            "u_W22_eps": sobolev_norm_eps(frame, 2, 2),
            "d2u_W12_eps": sobolev_norm_eps(frame, 1, 2, of=GridFunction(grid, sol.d2())),
        }
        for (mm, pp) in extra_orders:
            norms[f"u_W{mm}{pp}_eps"] = sobolev_norm_eps(frame, mm, pp)
        p1 = apply_x1(frame, sol)
        p2 = apply_x2(frame, sol)
        hold = tuple(
            (a, max(holder_seminorm(p1, a, win), holder_seminorm(p2, a, win)))
            for a in alphas
        )
        rows.append(NormLedgerRow(eps=eps, M=m_bound(frame), norms=norms, holder=hold))
    return NormLedger(rows)


@dataclass(frozen=True)
class DiagnosticsBudgets:
    """Pass/fail thresholds for the verdict; caps are sup-norm budgets."""

    alphas: tuple = DEFAULT_ALPHAS
    holder_cap: float = 50.0
    x2u_cap: float = 0.5
    residual_cap: float = 0.5
    margin_fraction: float = 0.1
    window: tuple[float, float] | None = None


@dataclass(frozen=True)
class RegularityVerdict:
    """Bundled regularity checks for a completed continuation run."""

    alpha_estimates: tuple  # triples (alpha, seminorm, passed)
    x2u_sup: float
    v_equation_residual: float
    z_equation_residual: float
    lip_ratio: float
    budgets: DiagnosticsBudgets

    @property
    def passed(self) -> bool:
        b = self.budgets
        return (
            all(p for _, _, p in self.alpha_estimates)
            and self.x2u_sup <= b.x2u_cap
            and self.v_equation_residual <= b.residual_cap
            and self.z_equation_residual <= b.residual_cap
        )

    def as_dict(self) -> dict:
        return {
            "alpha_estimates": [
                {"alpha": a, "seminorm": s, "pass": bool(p)} for a, s, p in self.alpha_estimates
            ],
            "x2u_sup": self.x2u_sup,
            "residuals": {"v": self.v_equation_residual, "z": self.z_equation_residual},
            "lip_ratio": self.lip_ratio,
            "pass": self.passed,
        }


def verdict(run: VanishingViscosityRun, budgets: DiagnosticsBudgets = DiagnosticsBudgets()) -> RegularityVerdict:
    """Evaluate the final state of a run against the configured budgets.

    The second graph-direction derivative is measured on a compact interior
    window (a fixed fraction of the domain trimmed on each side) at the final
    epsilon, alongside Holder seminorms of the gradient components and the
    derivative-equation defects.
    """
    sol = run.final
    frame = Frame(sol, run.final_eps)
    grid = sol.grid
    win = _default_window(grid) if budgets.window is None else budgets.window

    p1 = apply_x1(frame, sol)
    p2 = apply_x2(frame, sol)
    alpha_rows = []
    for a in budgets.alphas:
        s = max(holder_seminorm(p1, a, win), holder_seminorm(p2, a, win))
        alpha_rows.append((a, s, s <= budgets.holder_cap))

    margin = max(3, int(round(budgets.margin_fraction * (min(grid.n1, grid.n2) - 1))))
    x2u = intrinsic_derivative(sol, 2)
    x2u_sup = float(np.max(np.abs(x2u.restrict(margin))))

    v_res, z_res = derivative_equation_residuals(frame)
    lips = [s.lip_norm for s in run.solutions]
    lip_ratio = float(max(lips) / min(lips)) if min(lips) > 0 else float("inf")
    return RegularityVerdict(
        alpha_estimates=tuple(alpha_rows),
        x2u_sup=x2u_sup,
        v_equation_residual=v_res,
        z_equation_residual=z_res,
        lip_ratio=lip_ratio,
        budgets=budgets,
    )
