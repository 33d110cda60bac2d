"""Error functionals and distribution summaries.

Sup-CDF error on a fixed grid, exact 1D Wasserstein distances through
inverse CDFs, a small-instance transport oracle, test functionals,
kernel density estimation and clipped planar Voronoi cell densities.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from shapely.geometry import Polygon, box as shapely_box

from .core import (
    DiscreteMeasure,
    InstanceTooLarge,
    MeasureLike,
    as_measure_view,
)

__all__ = [
    "CdfGrid",
    "ErrorReport",
    "empirical_cdf",
    "cdf_on_grid",
    "sup_cdf_error",
    "wasserstein_1d",
    "wasserstein_discrete_exact",
    "second_moment",
    "kde_density_2d",
    "voronoi_cell_density_2d",
    "clipped_voronoi_areas_2d",
]


# ---------------------------------------------------------------------------
# Evaluation grid and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CdfGrid:
    """Sorted abscissae on which simulated and true CDFs are compared."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 1 or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def default_burgers(cls, count: int = 601) -> "CdfGrid":
        """601 equispaced points on [-2.5, 3.5] (spacing 0.01)."""
        return cls(np.linspace(-2.5, 3.5, count))


@dataclass
class ErrorReport:
    """Per-run metrics with seed and configuration provenance."""

    scheme: str
    config_hash: str
    seed: int
    sup_cdf_error: Optional[float] = None
    wasserstein: Optional[float] = None
    functional_values: dict = field(default_factory=dict)
    wall_per_step: float = 0.0
    error: Optional[str] = None

    def __post_init__(self):
        for name, value in self.numeric_items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite metric {name!r} in report")

    def numeric_items(self):
        out = []
        if self.sup_cdf_error is not None:
            out.append(("sup_cdf_error", self.sup_cdf_error))
        if self.wasserstein is not None:
            out.append(("wasserstein", self.wasserstein))
        out.extend(self.functional_values.items())
        out.append(("wall_per_step", self.wall_per_step))
        return out

    def to_json(self) -> str:
        payload = {
            "scheme": self.scheme,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "sup_cdf_error": self.sup_cdf_error,
            "wasserstein": self.wasserstein,
            "functional_values": self.functional_values,
            "wall_per_step": self.wall_per_step,
            "error": self.error,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ErrorReport":
        raw = json.loads(text)
        return cls(**raw)


# ---------------------------------------------------------------------------
# CDF comparison
# ---------------------------------------------------------------------------

def _sorted_support(mu: MeasureLike) -> tuple[np.ndarray, np.ndarray]:
    view = as_measure_view(mu)
    if view.dim != 1:
        raise ValueError("CDF metrics require one-dimensional measures")
    atoms = view.atoms[:, 0]
    order = np.argsort(atoms, kind="stable")
    return atoms[order], view.weights[order]


def empirical_cdf(mu: MeasureLike, xi: float) -> float:
    """Right-continuous step CDF: total weight of atoms <= xi."""
    atoms, weights = _sorted_support(mu)
    idx = np.searchsorted(atoms, xi, side="right")
    return float(math.fsum(weights[:idx]))


def cdf_on_grid(mu: MeasureLike, points: np.ndarray) -> np.ndarray:
    atoms, weights = _sorted_support(mu)
    cum = np.concatenate(([0.0], np.cumsum(weights)))
    idx = np.searchsorted(atoms, points, side="right")
    return cum[idx]


def sup_cdf_error(
    mu: MeasureLike,
    true_cdf: Callable[[np.ndarray], np.ndarray],
    grid: CdfGrid,
) -> float:
    """max over the grid of |empirical CDF - reference CDF|."""
    simulated = cdf_on_grid(mu, grid.points)
    reference = np.asarray(true_cdf(grid.points), dtype=float)
    return float(np.max(np.abs(simulated - reference)))


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------

def wasserstein_1d(mu: MeasureLike, nu: MeasureLike, p: float = 1.0) -> float:
    """Exact L^p Wasserstein distance between two 1D discrete measures.

    Integrates |F^{-1}(u) - G^{-1}(u)|^p over the merged quantile
    decomposition of the two step CDFs; no sampling involved.
    """
    if p < 1:
        raise ValueError("order p must be >= 1")
    xs, xw = _sorted_support(mu)
    ys, yw = _sorted_support(nu)
    cx = np.cumsum(xw)
    cy = np.cumsum(yw)
    cx[-1] = 1.0
    cy[-1] = 1.0
    levels = np.union1d(cx, cy)
    du = np.diff(np.concatenate(([0.0], levels)))
    ix = np.searchsorted(cx, levels, side="left")
    iy = np.searchsorted(cy, levels, side="left")
    gaps = np.abs(xs[ix] - ys[iy])
    cost = math.fsum(du * gaps ** p)
    return cost ** (1.0 / p)


def wasserstein_discrete_exact(
    mu: Union[DiscreteMeasure, MeasureLike],
    nu: Union[DiscreteMeasure, MeasureLike],
    p: float = 2.0,
    atom_cap: int = 256,
) -> float:
    """Exact optimal-transport distance on the bipartite atom graph.

    Small-instance oracle (linear program on the transport polytope);
    refuses instances above ``atom_cap`` total atoms.
    """
    a = as_measure_view(mu)
    b = as_measure_view(nu)
    n, m = a.atoms.shape[0], b.atoms.shape[0]
    if n + m > atom_cap:
        raise InstanceTooLarge(
            f"{n + m} atoms exceed the {atom_cap}-atom oracle cap"
        )
    diff = a.atoms[:, None, :] - b.atoms[None, :, :]
    cost = np.sqrt(np.einsum("nmd,nmd->nm", diff, diff)) ** p

    rows = []
    cols = []
    for i in range(n):
        rows.append(np.full(m, i))
        cols.append(np.arange(m) + i * m)
    for j in range(m - 1):  # last column constraint is redundant
        rows.append(np.full(n, n + j))
        cols.append(np.arange(n) * m + j)
    data = np.ones(n * m + n * (m - 1))
    A = sparse.csr_matrix(
        (data, (np.concatenate(rows), np.concatenate(cols))),
        shape=(n + m - 1, n * m),
    )
    rhs = np.concatenate([a.weights, b.weights[: m - 1]])
    res = linprog(cost.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return max(res.fun, 0.0) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Test functionals and densities
# ---------------------------------------------------------------------------

def second_moment(mu: MeasureLike) -> float:
    """Weighted sum of squared Euclidean norms of the atoms."""
    view = as_measure_view(mu)
    sq = np.einsum("kd,kd->k", view.atoms, view.atoms)
    return float(math.fsum(view.weights * sq))


def kde_density_2d(
    mu: MeasureLike,
    bandwidth: Optional[float],
    grid_x: np.ndarray,
    grid_y: np.ndarray,
) -> np.ndarray:
    """Isotropic Gaussian KDE on a product grid.

    Returns a (len(grid_x), len(grid_y)) surface.  ``bandwidth=None``
    selects Scott's rule with the Kish effective sample size.
    """
    view = as_measure_view(mu)
    if view.dim != 2:
        raise ValueError("kde_density_2d requires two-dimensional atoms")
    gx = np.asarray(grid_x, dtype=float)
    gy = np.asarray(grid_y, dtype=float)
    w = view.weights
    if bandwidth is None:
        n_eff = 1.0 / float(np.sum(w ** 2))
        mean = w @ view.atoms
        var = w @ (view.atoms - mean) ** 2
        bandwidth = math.sqrt(float(np.mean(var))) * n_eff ** (-1.0 / 6.0)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    inv2b2 = 0.5 / bandwidth ** 2
    with np.errstate(under="ignore"):
        ex = np.exp(-inv2b2 * (gx[:, None] - view.atoms[None, :, 0]) ** 2)
        ey = np.exp(-inv2b2 * (gy[:, None] - view.atoms[None, :, 1]) ** 2)
    surface = (ex * w[None, :]) @ ey.T
    return surface / (2.0 * math.pi * bandwidth ** 2)


def _halfplane_polygon(keep: np.ndarray, other: np.ndarray, extent: float) -> Polygon:
    """Polygon covering {x : |x - keep| <= |x - other|} out to ``extent``."""
    mid = 0.5 * (keep + other)
    normal = other - keep
    normal = normal / np.linalg.norm(normal)
    tangent = np.array([-normal[1], normal[0]])
    a = mid + extent * tangent
    b = mid - extent * tangent
    return Polygon([a, b, b - extent * normal, a - extent * normal])


def clipped_voronoi_areas_2d(atoms: np.ndarray, bounds) -> np.ndarray:
    """Areas of the planar Voronoi cells clipped to a bounding box.

    Each cell is cut from the box by the bisector half-planes against all
    other atoms, which handles collinear and two-atom inputs exactly.
    """
    pts = np.asarray(atoms, dtype=float)
    xmin, xmax, ymin, ymax = map(float, bounds)
    if xmin >= xmax or ymin >= ymax:
        raise ValueError("empty bounding box")
    if np.any(pts[:, 0] < xmin) or np.any(pts[:, 0] > xmax) or np.any(
        pts[:, 1] < ymin
    ) or np.any(pts[:, 1] > ymax):
        raise ValueError("bounding box must contain all atoms")
    box_poly = shapely_box(xmin, ymin, xmax, ymax)
    extent = 4.0 * math.hypot(xmax - xmin, ymax - ymin) + 1.0
    areas = np.empty(pts.shape[0])
    for k in range(pts.shape[0]):
        cell = box_poly
        for j in range(pts.shape[0]):
            if j == k:
                continue
            cell = cell.intersection(_halfplane_polygon(pts[k], pts[j], extent))
        areas[k] = cell.area
    return areas


def voronoi_cell_density_2d(measure: DiscreteMeasure, bounds) -> np.ndarray:
    """Per-cell density: weight divided by clipped Voronoi cell area."""
    if measure.dim != 2:
        raise ValueError("voronoi_cell_density_2d requires d=2 atoms")
    areas = clipped_voronoi_areas_2d(measure.atoms, bounds)
    return measure.weights / areas
