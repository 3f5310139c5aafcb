"""Uniform tensor-product grids on rectangles and scalar fields living on them.

Conventions used throughout the package:

* a grid covers the closed rectangle ``x1_range x x2_range`` with ``n1 x n2``
  nodes, spacing ``h1 = (x1_hi - x1_lo)/(n1 - 1)`` and likewise ``h2``;
* arrays are indexed ``values[i, j]`` with ``i`` along ``x1`` and ``j`` along
  ``x2`` (``indexing='ij'``);
* first derivatives are second-order accurate: centered in the interior,
  one-sided three-point stencils on the boundary rows/columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "GridFunction",
    "GridMismatchError",
]


class GridMismatchError(ValueError):
    """Raised when an operation mixes fields that live on different grids."""


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid on a closed rectangle.

    Attributes
    ----------
    x1_range, x2_range : tuple of float
        Closed coordinate intervals ``(lo, hi)`` with ``lo < hi``.
    n1, n2 : int
        Node counts per axis, at least 3 so an interior exists.
    """

    x1_range: tuple[float, float]
    x2_range: tuple[float, float]
    n1: int
    n2: int

    def __post_init__(self):
        object.__setattr__(self, "x1_range", (float(self.x1_range[0]), float(self.x1_range[1])))
        object.__setattr__(self, "x2_range", (float(self.x2_range[0]), float(self.x2_range[1])))
        if not (self.x1_range[0] < self.x1_range[1] and self.x2_range[0] < self.x2_range[1]):
            raise ValueError("grid ranges must be non-degenerate intervals (lo < hi)")
        if self.n1 < 3 or self.n2 < 3:
            raise ValueError("need n1 >= 3 and n2 >= 3 for an interior node to exist")

    @property
    def h1(self) -> float:
        return (self.x1_range[1] - self.x1_range[0]) / (self.n1 - 1)

    @property
    def h2(self) -> float:
        return (self.x2_range[1] - self.x2_range[0]) / (self.n2 - 1)

    @property
    def x1_coords(self) -> np.ndarray:
        return np.linspace(self.x1_range[0], self.x1_range[1], self.n1)

    @property
    def x2_coords(self) -> np.ndarray:
        return np.linspace(self.x2_range[0], self.x2_range[1], self.n2)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays ``(X1, X2)`` of shape ``(n1, n2)``."""
        return np.meshgrid(self.x1_coords, self.x2_coords, indexing="ij")

    def contains(self, x1, x2, tol: float = 0.0) -> bool:
        lo1, hi1 = self.x1_range
        lo2, hi2 = self.x2_range
        return bool(
            (lo1 - tol <= x1 <= hi1 + tol) and (lo2 - tol <= x2 <= hi2 + tol)
        )

    def interior_slice(self, margin: int = 1) -> tuple[slice, slice]:
        """Index slices selecting nodes at least ``margin`` layers from the edge."""
        if margin < 0:
            raise ValueError("margin must be non-negative")
        if 2 * margin >= min(self.n1, self.n2):
            raise ValueError("margin leaves no nodes")
        return slice(margin, self.n1 - margin), slice(margin, self.n2 - margin)

    def node_index(self, x1: float, x2: float, tol: float = 1e-9) -> tuple[int, int]:
        """Indices of the node coinciding with ``(x1, x2)``.

        Raises ``ValueError`` when the point does not sit on a node to within
        ``tol`` grid spacings.
        """
        fi = (x1 - self.x1_range[0]) / self.h1
        fj = (x2 - self.x2_range[0]) / self.h2
        i, j = int(round(fi)), int(round(fj))
        if not (0 <= i < self.n1 and 0 <= j < self.n2):
            raise ValueError(f"point ({x1}, {x2}) outside grid")
        if abs(fi - i) > tol or abs(fj - j) > tol:
            raise ValueError(f"point ({x1}, {x2}) is not a grid node")
        return i, j


@dataclass
class GridFunction:
    """Scalar field sampled at the nodes of a :class:`Grid`.

    Values must be finite at every node; non-finite input is rejected at
    construction so downstream stencils never propagate NaNs silently.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n1, self.grid.n2):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.n1}, {self.grid.n2})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite at every node")

    @classmethod
    def from_callable(cls, grid: Grid, f: Callable) -> "GridFunction":
        """Sample ``f(x1, x2)`` (vectorized or scalar) at the grid nodes."""
        X1, X2 = grid.nodes()
        vals = np.asarray(f(X1, X2), dtype=float)
        if vals.shape != X1.shape:  # scalar-only callable
            vals = np.vectorize(lambda a, b: float(f(a, b)))(X1, X2)
        return cls(grid, vals)

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def lip_norm(self) -> float:
        """Max difference quotient over axis-adjacent node pairs."""
        d1 = np.abs(np.diff(self.values, axis=0)) / self.grid.h1
        d2 = np.abs(np.diff(self.values, axis=1)) / self.grid.h2
        return float(max(d1.max(initial=0.0), d2.max(initial=0.0)))

    def d1(self) -> np.ndarray:
        """Second-order partial along x1 (one-sided at the boundary)."""
        return np.gradient(self.values, self.grid.h1, axis=0, edge_order=2)

    def d2(self) -> np.ndarray:
        """Second-order partial along x2 (one-sided at the boundary)."""
        return np.gradient(self.values, self.grid.h2, axis=1, edge_order=2)

    def interp(self, x1, x2):
        """Bilinear interpolation at points inside the rectangle.

        Accepts scalars or arrays; a point outside the rectangle by more than
        ``1e-12`` spacings raises ``ValueError`` (exact edge points are fine).
        """
        g = self.grid
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        f1 = (x1 - g.x1_range[0]) / g.h1
        f2 = (x2 - g.x2_range[0]) / g.h2
        eps = 1e-12 * max(g.n1, g.n2)
        if np.any(f1 < -eps) or np.any(f1 > g.n1 - 1 + eps) or np.any(f2 < -eps) or np.any(f2 > g.n2 - 1 + eps):
            raise ValueError("interpolation point outside grid rectangle")
        f1 = np.clip(f1, 0.0, g.n1 - 1)
        f2 = np.clip(f2, 0.0, g.n2 - 1)
        i = np.minimum(f1.astype(int), g.n1 - 2)
        j = np.minimum(f2.astype(int), g.n2 - 2)
        t = f1 - i
        s = f2 - j
        v = self.values
        out = (
            v[i, j] * (1 - t) * (1 - s)
            + v[i + 1, j] * t * (1 - s)
            + v[i, j + 1] * (1 - t) * s
            + v[i + 1, j + 1] * t * s
        )
        return float(out) if out.ndim == 0 else out

    def restrict(self, margin: int) -> np.ndarray:
        """View of the values at least ``margin`` layers from the boundary."""
        if margin == 0:
            return self.values
        return self.values[margin:-margin, margin:-margin]


def require_same_grid(*fns) -> Grid:
    """Check all arguments share one grid; return it."""
    g0 = fns[0].grid
    for f in fns[1:]:
        if f.grid != g0:
            raise GridMismatchError("fields live on different grids")
    return g0
