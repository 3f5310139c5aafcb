"""Damped Newton solver for the regularized graph equation and the
continuation driver that sends the regularization to zero.

For fixed ``eps`` the discrete problem is: find u matching the boundary ring
with ``residual_div(u) = 0`` at every interior node.  Newton iterates with
the exact sparse Jacobian and Armijo backtracking on the residual 2-norm;
when a step stagnates, a lagged-coefficient fixed point (Picard) is used to
re-enter Newton's basin.  The continuation driver walks a geometric eps
schedule, warm-starting each solve from the previous solution, and records
the uniform bounds whose stability is the whole point of the limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import spsolve

from .geometry import Frame, apply_x1, apply_x2
from .grid import Grid, GridFunction
from .operators import jacobian_assemble, linear_operator_matrix, residual_div

__all__ = [
    "BoundaryData",
    "SolverConfig",
    "EpsSchedule",
    "NewtonReport",
    "VanishingViscosityRun",
    "NonConvergenceError",
    "ContinuationError",
    "transfinite_interpolation",
    "solve_eps",
    "picard_solve",
    "continuation",
    "m_bound",
]


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet values on the boundary ring of a grid.

    Stored as a full nodal array whose interior entries are ignored; the
    class exists so call sites cannot confuse boundary data with an initial
    guess.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n1, self.grid.n2):
            raise ValueError("boundary array shape does not match grid")
        if not np.all(np.isfinite(v[0, :])) or not np.all(np.isfinite(v[-1, :])) \
                or not np.all(np.isfinite(v[:, 0])) or not np.all(np.isfinite(v[:, -1])):
            raise ValueError("boundary ring contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: Grid, f) -> "BoundaryData":
        return cls(grid, GridFunction.from_callable(grid, f).values)

    def impose(self, interior: np.ndarray) -> np.ndarray:
        """Full nodal array: given interior block framed by the stored ring."""
        out = self.values.copy()
        out[1:-1, 1:-1] = interior
        return out


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iter: int = 30
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    min_step: float = 2.0 ** -20
    linear_tol: float = 1e-8
    picard_fallback: bool = True
    max_picard_iter: int = 60


@dataclass
class NewtonReport:
    """Iteration record of one solve (no timings: reports are deterministic)."""

    converged: bool
    iterations: int
    final_residual: float
    residual_history: list = dc_field(default_factory=list)
    step_lengths: list = dc_field(default_factory=list)
    used_picard: bool = False
    message: str = ""


class NonConvergenceError(RuntimeError):
    """Solve failed; carries the best iterate seen and its report."""

    def __init__(self, message: str, best: GridFunction, report: NewtonReport):
        super().__init__(message)
        self.best = best
        self.report = report


class ContinuationError(RuntimeError):
    """A continuation step failed; carries the partial run and failing eps."""

    def __init__(self, message: str, partial_run: "VanishingViscosityRun", eps: float, best: GridFunction):
        super().__init__(message)
        self.partial_run = partial_run
        self.eps = eps
        self.best = best


def transfinite_interpolation(boundary: BoundaryData) -> GridFunction:
    """Bilinear blend of the boundary ring; reproduces bilinear fields.

    This is the default initial guess: for affine data it already is the
    exact discrete solution.
    """
    g = boundary.grid
    v = boundary.values
    xi = np.linspace(0.0, 1.0, g.n1)[:, None]
    eta = np.linspace(0.0, 1.0, g.n2)[None, :]
    left = v[0, :][None, :]
    right = v[-1, :][None, :]
    bottom = v[:, 0][:, None]
    top = v[:, -1][:, None]
    blend = (
        (1 - xi) * left + xi * right + (1 - eta) * bottom + eta * top
        - ((1 - xi) * (1 - eta) * v[0, 0] + xi * eta * v[-1, -1]
           + xi * (1 - eta) * v[-1, 0] + (1 - xi) * eta * v[0, -1])
    )
    return GridFunction(g, blend)


def _interior_residual(grid: Grid, values: np.ndarray, eps: float) -> np.ndarray:
    fr = Frame(GridFunction(grid, values), eps)
    return residual_div(fr).interior(1)


def solve_eps(
    grid: Grid,
    boundary: BoundaryData,
    eps: float,
    config: SolverConfig = SolverConfig(),
    initial_guess: GridFunction | None = None,
):
    """Solve the regularized equation at fixed ``eps``.

    Returns ``(solution, report)``; raises :class:`NonConvergenceError` with
    the best iterate attached when the tolerance cannot be reached.
    """
    if grid != boundary.grid:
        raise ValueError("boundary data lives on a different grid")
    if initial_guess is None:
        u = transfinite_interpolation(boundary).values
    else:
        if initial_guess.grid != grid:
            raise ValueError("initial guess lives on a different grid")
        u = boundary.impose(initial_guess.values[1:-1, 1:-1])

    report = NewtonReport(converged=False, iterations=0, final_residual=np.inf)
    best_vals, best_sup = u.copy(), np.inf

    def record_best(vals, sup):
        nonlocal best_vals, best_sup
        if sup < best_sup:
            best_vals, best_sup = vals.copy(), sup

    picard_budget = 1 if config.picard_fallback else 0
    it = 0
    while True:
        r = _interior_residual(grid, u, eps)
        sup = float(np.max(np.abs(r)))
        report.residual_history.append(sup)
        record_best(u, sup)
        if sup <= config.newton_tol:
            report.converged = True
            report.final_residual = sup
            report.iterations = it
            return GridFunction(grid, u), report
        if it >= config.max_newton_iter:
            break

        fr = Frame(GridFunction(grid, u), eps)
        J = jacobian_assemble(fr).tocsc()
        rhs = -r.ravel()
        delta = spsolve(J, rhs)
        lin_res = np.linalg.norm(J @ delta - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.all(np.isfinite(delta)) or lin_res > config.linear_tol:
            stagnated = True
        else:
            # Armijo on the residual 2-norm
            r2 = np.linalg.norm(r)
            lam = 1.0
            stagnated = False
            while True:
                trial = u.copy()
                trial[1:-1, 1:-1] += lam * delta.reshape(r.shape)
                tr = _interior_residual(grid, trial, eps)
                if np.linalg.norm(tr) <= (1.0 - config.armijo_c * lam) * r2:
                    u = trial
                    report.step_lengths.append(lam)
                    break
                lam *= config.armijo_shrink
                if lam < config.min_step:
                    stagnated = True
                    break

        if stagnated:
            if picard_budget > 0:
                picard_budget -= 1
                report.used_picard = True
                u = _picard_sweeps(grid, boundary, eps, u, config.max_picard_iter)
            else:
                break
        it += 1

    r = _interior_residual(grid, u, eps)
    sup = float(np.max(np.abs(r)))
    record_best(u, sup)
    report.final_residual = best_sup
    report.iterations = it
    report.message = "newton did not reach tolerance"
    raise NonConvergenceError(
        f"no convergence at eps={eps}: best residual {best_sup:.3e}",
        GridFunction(grid, best_vals),
        report,
    )


def _picard_sweeps(grid, boundary, eps, u, max_iter, tol=None):
    """Lagged fixed-point passes starting from u; returns the last iterate."""
    if tol is None:
        tol = 1e-12 * (1.0 + float(np.max(np.abs(u))))
    vals = u.copy()
    for _ in range(max_iter):
        fr = Frame(GridFunction(grid, vals), eps)
        A_int, A_bnd, bnd_of = linear_operator_matrix(fr, kind="picard")
        rhs = -A_bnd @ bnd_of(boundary.values)
        z = spsolve(A_int.tocsc(), rhs)
        new = boundary.impose(z.reshape(grid.n1 - 2, grid.n2 - 2))
        change = float(np.max(np.abs(new - vals)))
        vals = new
        if change <= tol:
            break
    return vals


def picard_solve(
    grid: Grid,
    boundary: BoundaryData,
    eps: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    initial_guess: GridFunction | None = None,
):
    """Pure lagged-coefficient fixed point, independent of the Newton path.

    Iterates the linear solves ``Xi( (1/W_k) Xi u_{k+1} ) = 0`` until the
    sup-update drops below ``tol``.  Returns ``(solution, sweeps, converged)``.
    """
    if initial_guess is None:
        vals = transfinite_interpolation(boundary).values
    else:
        vals = boundary.impose(initial_guess.values[1:-1, 1:-1])
    for k in range(max_iter):
        fr = Frame(GridFunction(grid, vals), eps)
        A_int, A_bnd, bnd_of = linear_operator_matrix(fr, kind="picard")
        rhs = -A_bnd @ bnd_of(boundary.values)
        z = spsolve(A_int.tocsc(), rhs)
        new = boundary.impose(z.reshape(grid.n1 - 2, grid.n2 - 2))
        change = float(np.max(np.abs(new - vals)))
        vals = new
        if change <= tol:
            return GridFunction(grid, vals), k + 1, True
    return GridFunction(grid, vals), max_iter, False


# ---------------------------------------------------------------------------
# continuation in eps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsSchedule:
    """Geometric regularization schedule clipped at ``eps_min``."""

    eps_start: float = 1.0
    factor: float = 0.5
    eps_min: float = 1e-3
    max_steps: int = 64

    def __post_init__(self):
        if not (self.eps_start > 0 and self.eps_min > 0):
            raise ValueError("eps bounds must be positive")
        if not (0 < self.factor < 1):
            raise ValueError("factor must lie in (0, 1)")
        if self.eps_min > self.eps_start:
            raise ValueError("eps_min exceeds eps_start")

    def values(self) -> list[float]:
        out = [self.eps_start]
        while len(out) < self.max_steps and out[-1] > self.eps_min:
            out.append(max(out[-1] * self.factor, self.eps_min))
        return out


def m_bound(frame: Frame) -> float:
    """Uniform bound ``sup|u| + sup|grad u| + sup|d2 u|`` (frame gradient)."""
    u = frame.u
    p1 = apply_x1(frame, u).values
    p2 = apply_x2(frame, u).values
    grad_sup = float(np.max(np.sqrt(p1 * p1 + p2 * p2)))
    return u.sup_norm + grad_sup + float(np.max(np.abs(u.d2())))


@dataclass
class VanishingViscosityRun:
    """Solutions and uniform bounds along a decreasing eps schedule."""

    grid: Grid
    boundary: BoundaryData
    eps_values: list
    solutions: list
    reports: list
    lip_norms: list
    m_bounds: list
    sup_diffs: list  # |u_{j+1} - u_j|_inf, one per consecutive pair

    @property
    def final(self) -> GridFunction:
        return self.solutions[-1]

    @property
    def final_eps(self) -> float:
        return self.eps_values[-1]

    def verify_residuals(self) -> list:
        """Re-evaluate every stored solution's residual sup (idempotence)."""
        out = []
        for eps, sol in zip(self.eps_values, self.solutions):
            out.append(residual_div(Frame(sol, eps)).sup)
        return out


def continuation(
    grid: Grid,
    boundary: BoundaryData,
    schedule: EpsSchedule = EpsSchedule(),
    config: SolverConfig = SolverConfig(),
) -> VanishingViscosityRun:
    """Walk the schedule with warm starts; returns the assembled run.

    The first solve starts from the transfinite blend of the boundary; each
    later solve starts from the previous solution.  A failed step raises
    :class:`ContinuationError` carrying the partial run.
    """
    run = VanishingViscosityRun(
        grid=grid, boundary=boundary, eps_values=[], solutions=[],
        reports=[], lip_norms=[], m_bounds=[], sup_diffs=[],
    )
    guess = None
    for eps in schedule.values():
        try:
            sol, report = solve_eps(grid, boundary, eps, config, initial_guess=guess)
        except NonConvergenceError as exc:
            raise ContinuationError(
                f"continuation stalled at eps={eps}: {exc}", run, eps, exc.best
            ) from exc
        if run.solutions:
            run.sup_diffs.append(float(np.max(np.abs(sol.values - run.solutions[-1].values))))
        run.eps_values.append(eps)
        run.solutions.append(sol)
        run.reports.append(report)
        run.lip_norms.append(sol.lip_norm)
        run.m_bounds.append(m_bound(Frame(sol, eps)))
        guess = sol
    return run
