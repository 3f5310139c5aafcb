"""Closed-form graph catalog: exact solutions and classical counter-examples.

Three families.  Affine graphs ``a*x1 + c`` are the manufactured exact
solutions (constant graph-direction derivative, discretely exact).  The
piecewise-rational graph ``x2 / (x1 - sign(x2))`` on ``x1 > 1`` has vanishing
graph-direction derivative off the line ``x2 = 0`` yet a jump in its vertical
Euclidean derivative across it, the standard witness that minimality alone
does not buy first-order smoothness.  Shear graphs solve ``x2 = x1*t - g(t)``
for ``t`` pointwise, recovering both previous families for affine or
absolute-value ``g``.

Entries carry flags used by tests and the CLI: ``minimal_H0`` (stationarity
of the limit functional), ``vanishing_viscosity_candidate`` (plausible limit
of the regularized solves), ``C1_smooth``, and ``leafwise_affine`` (the
restriction of u to each leaf of its own direction field is affine).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "CatalogEntry",
    "DomainError",
    "ShearRootError",
    "pauls_graph",
    "affine_graph",
    "shear_graph",
    "shear_entry",
    "catalog",
    "make_entry",
]


class DomainError(ValueError):
    """Evaluation requested outside an entry's validity region."""


class ShearRootError(ValueError):
    """The shear equation has no root, or several, in the bracket."""


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    eval: Callable
    domain: Callable
    minimal_H0: bool
    vanishing_viscosity_candidate: bool
    C1_smooth: bool
    leafwise_affine: bool


def pauls_graph(x1, x2):
    """``x2 / (x1 - sign(x2))`` with ``sign(0) := +1``, valid for ``x1 > 1``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any(x1 <= 1.0):
        raise DomainError("the piecewise-rational graph needs x1 > 1")
    s = np.where(x2 >= 0.0, 1.0, -1.0)
    out = x2 / (x1 - s)
    return float(out) if out.ndim == 0 else out


def affine_graph(a: float, c: float) -> CatalogEntry:
    """Exact solution family ``u = a*x1 + c`` (any epsilon, any rectangle)."""
    return CatalogEntry(
        name=f"affine(a={a:g}, c={c:g})",
        eval=lambda x1, x2: a * np.asarray(x1, dtype=float) + c + 0.0 * np.asarray(x2, dtype=float),
        domain=lambda x1, x2: True,
        minimal_H0=True,
        vanishing_viscosity_candidate=True,
        C1_smooth=True,
        leafwise_affine=True,
    )


def shear_graph(g: Callable, x1: float, x2: float, bracket: tuple[float, float] = (-50.0, 50.0)) -> float:
    """Solve ``x2 = x1*t - g(t)`` for ``t``; the root is the graph height.

    A scan over the bracket locates sign changes of the residual; exactly one
    must exist.  The bracketed root is polished to full precision and checked
    against the 1e-12 residual postcondition.
    """
    x1 = float(x1)
    x2 = float(x2)
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ShearRootError(f"empty bracket {bracket}")
    phi = lambda t: x1 * t - g(t) - x2
    ts = np.linspace(lo, hi, 401)
    vals = np.array([phi(t) for t in ts])
    exact = np.flatnonzero(vals == 0.0)
    sign_flips = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    n_roots = len(exact) + len(sign_flips)
    if n_roots == 0:
        raise ShearRootError(
            f"no root of the shear equation in bracket [{lo:g}, {hi:g}] at ({x1:g}, {x2:g})")
    if n_roots > 1:
        raise ShearRootError(
            f"{n_roots} roots of the shear equation in bracket [{lo:g}, {hi:g}] at ({x1:g}, {x2:g})")
    if len(exact):
        root = float(ts[exact[0]])
    else:
        k = sign_flips[0]
        root = brentq(phi, ts[k], ts[k + 1], xtol=1e-15, rtol=8.9e-16)
    if abs(x2 - x1 * root + g(root)) > 1e-12:
        raise ShearRootError(f"root polishing failed at ({x1:g}, {x2:g})")
    return float(root)


def shear_entry(g: Callable, name: str, bracket: tuple[float, float] = (-50.0, 50.0),
                domain: Callable | None = None, **flags) -> CatalogEntry:
    """Wrap a shear profile ``g`` as a grid-evaluable catalog entry."""
    ev = np.vectorize(lambda a, b: shear_graph(g, a, b, bracket=bracket), otypes=[float])

    def default_domain(x1, x2):
        try:
            shear_graph(g, x1, x2, bracket=bracket)
            return True
        except ShearRootError:
            return False

    defaults = dict(minimal_H0=True, vanishing_viscosity_candidate=True,
                    C1_smooth=True, leafwise_affine=True)
    defaults.update(flags)
    return CatalogEntry(
        name=name,
        eval=lambda x1, x2: ev(x1, x2) if np.ndim(x1) or np.ndim(x2) else float(ev(x1, x2)),
        domain=default_domain if domain is None else domain,
        **defaults,
    )


def _pauls_entry() -> CatalogEntry:
    return CatalogEntry(
        name="pauls",
        eval=pauls_graph,
        domain=lambda x1, x2: bool(np.all(np.asarray(x1) > 1.0)),
        minimal_H0=True,
        vanishing_viscosity_candidate=False,
        C1_smooth=False,
        leafwise_affine=True,
    )


def catalog() -> dict[str, CatalogEntry]:
    """All named entries, keyed for CLI enumeration."""
    return {
        "affine": affine_graph(0.5, 0.25),
        "pauls": _pauls_entry(),
        "shear-zero": shear_entry(lambda t: 0.0, "shear-zero",
                                  domain=lambda x1, x2: bool(np.all(np.asarray(x1) > 0.0))),
        "shear-neg": shear_entry(lambda t: -t, "shear-neg",
                                 domain=lambda x1, x2: bool(np.all(np.asarray(x1) > -1.0))),
        "shear-abs": shear_entry(lambda t: abs(t), "shear-abs",
                                 domain=lambda x1, x2: bool(np.all(np.asarray(x1) > 1.0)),
                                 vanishing_viscosity_candidate=False, C1_smooth=False),
    }


def make_entry(name: str, params: dict | None = None) -> CatalogEntry:
    """Entry by name; ``affine`` honors parameters ``a`` and ``c``."""
    params = params or {}
    if name == "affine":
        return affine_graph(float(params.get("a", 0.5)), float(params.get("c", 0.25)))
    entries = catalog()
    if name not in entries:
        raise KeyError(f"unknown catalog entry {name!r}; have {sorted(entries)}")
    return entries[name]
