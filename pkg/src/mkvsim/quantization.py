"""Quantizers, Voronoi projection and Lloyd's fixed-point algorithm.

Covers both empirical measures (K-means style, any dimension) and
one-dimensional Gaussian mixtures, for which cell integrals have closed
forms in terms of the normal CDF.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    DiscreteMeasure,
    MeasureLike,
    MeasureView,
    ParticleEnsemble,
    as_measure_view,
)

logger = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_EMPTY_CELL_MASS = 1e-300

__all__ = [
    "Quantizer",
    "Voronoi1D",
    "GaussianMixture1D",
    "project",
    "project_indices",
    "quantization_error",
    "quantization_error_mixture_1d",
    "voronoi_weights",
    "lloyd_step_empirical",
    "lloyd_step_mixture_1d",
    "lloyd_optimize",
    "LloydResult",
    "LloydQuantizer",
    "gaussian_cdf",
    "quantile_seed",
    "save_quantizer_csv",
    "load_quantizer_csv",
    "save_measure_csv",
    "load_measure_csv",
]


# ---------------------------------------------------------------------------
# Quantizer and 1D Voronoi geometry
# ---------------------------------------------------------------------------

def _as_point_array(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("quantizer needs a nonempty (K, d) point array")
    return pts


@dataclass(frozen=True)
class Quantizer:
    """K distinct points in R^d."""

    points: np.ndarray

    def __post_init__(self):
        pts = _as_point_array(self.points)
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("quantizer points must be pairwise distinct")
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class Voronoi1D:
    """Sorted 1D quantizer with midpoint cell boundaries.

    Cell k is delimited by c_{k-1} and c_k with c_0 = -inf, c_K = +inf and
    c_k the midpoint of consecutive points.  A query exactly on a boundary
    is assigned to the lower-index cell, consistently with the
    smallest-index tie rule of :func:`project`.
    """

    def __init__(self, quantizer: Quantizer):
        if quantizer.dim != 1:
            raise ValueError("Voronoi1D requires a one-dimensional quantizer")
        pts = quantizer.points[:, 0]
        self.order = np.argsort(pts, kind="stable")
        self.points = pts[self.order]
        inner = 0.5 * (self.points[:-1] + self.points[1:])
        self.boundaries = np.concatenate(([-np.inf], inner, [np.inf]))

    def locate(self, values) -> np.ndarray:
        """Sorted-order cell index for each query value."""
        return np.searchsorted(self.boundaries[1:-1], values, side="left")

    def locate_original(self, values) -> np.ndarray:
        """Cell index in the quantizer's original point order."""
        return self.order[self.locate(values)]


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def project(quantizer: Quantizer, xi) -> tuple[int, np.ndarray]:
    """Nearest quantizer point, ties broken by smallest index."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d2 = np.sum((quantizer.points - xi[None, :]) ** 2, axis=1)
    k = int(np.argmin(d2))
    return k, quantizer.points[k]


def project_indices(quantizer: Quantizer, x) -> np.ndarray:
    """Batch nearest-point indices (original point order).

    Uses boundary bisection in dimension one and a chunked distance
    computation otherwise.
    """
    pts = quantizer.points
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != quantizer.dim:
        raise ValueError("query dimension does not match quantizer")
    if quantizer.dim == 1:
        return Voronoi1D(quantizer).locate_original(x[:, 0])
    # |x - p|^2 up to the |x|^2 constant, blocked to bound memory
    p_sq = np.einsum("kd,kd->k", pts, pts)
    out = np.empty(x.shape[0], dtype=np.intp)
    block = max(1, (1 << 22) // max(1, pts.shape[0]))
    for start in range(0, x.shape[0], block):
        xb = x[start:start + block]
        scores = p_sq[None, :] - 2.0 * (xb @ pts.T)
        out[start:start + block] = np.argmin(scores, axis=1)
    return out


def quantization_error(mu: MeasureLike, quantizer: Quantizer, p: float = 2.0) -> float:
    """L^p quantization error [sum_atoms w * min_k |xi - x_k|^p]^(1/p)."""
    if p < 1:
        raise ValueError("order p must be >= 1")
    view = as_measure_view(mu)
    idx = project_indices(quantizer, view.atoms)
    diffs = view.atoms - quantizer.points[idx]
    dists = np.sqrt(np.einsum("nd,nd->n", diffs, diffs))
    total = math.fsum(view.weights * dists ** p)
    return total ** (1.0 / p)


def voronoi_weights(mu: MeasureLike, quantizer: Quantizer) -> DiscreteMeasure:
    """Project a sample measure onto the quantizer's cells.

    For an ensemble the weights are exact cell counts divided by N.
    """
    view = as_measure_view(mu)
    idx = project_indices(quantizer, view.atoms)
    if view.kind == "ensemble":
        counts = np.bincount(idx, minlength=quantizer.size)
        weights = counts / view.atoms.shape[0]
    else:
        weights = np.bincount(idx, weights=view.weights, minlength=quantizer.size)
    return DiscreteMeasure(atoms=quantizer.points, weights=weights)


# ---------------------------------------------------------------------------
# Lloyd's algorithm, empirical case
# ---------------------------------------------------------------------------

def _dedupe_points(pts: np.ndarray) -> np.ndarray:
    """Nudge colliding rows apart by the smallest representable offsets."""
    pts = pts + 0.0  # also folds -0.0 into +0.0
    seen = set()
    collisions = 0
    for i in range(pts.shape[0]):
        key = pts[i].tobytes()
        while key in seen:
            collisions += 1
            pts[i, 0] = np.nextafter(pts[i, 0], np.inf)
            key = pts[i].tobytes()
        seen.add(key)
    if collisions:
        logger.warning(
            "lloyd step produced colliding points; applied %d ulp nudges", collisions
        )
    return pts


def _build_quantizer(pts: np.ndarray) -> Quantizer:
    """Quantizer from possibly-colliding points, deduping only on demand."""
    try:
        return Quantizer(pts + 0.0)
    except ValueError:
        return Quantizer(_dedupe_points(pts))


def lloyd_step_empirical(mu: MeasureLike, quantizer: Quantizer) -> Quantizer:
    """One Lloyd iteration against a sample: nonempty cells move to their
    conditional mean, empty cells keep their point."""
    view = as_measure_view(mu)
    idx = project_indices(quantizer, view.atoms)
    K, d = quantizer.size, quantizer.dim
    mass = np.bincount(idx, weights=view.weights, minlength=K)
    new_pts = quantizer.points.copy()
    occupied = mass > 0
    for j in range(d):
        sums = np.bincount(idx, weights=view.weights * view.atoms[:, j], minlength=K)
        new_pts[occupied, j] = sums[occupied] / mass[occupied]
    return _build_quantizer(new_pts)


# ---------------------------------------------------------------------------
# Gaussian mixtures in dimension one
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianMixture1D:
    """Finite mixture sum_i p_i N(m_i, s_i^2) on the real line."""

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        stds = np.atleast_1d(np.asarray(self.stds, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if not (means.shape == stds.shape == weights.shape):
            raise ValueError("means, stds and weights must have equal length")
        if np.any(stds < 0):
            raise ValueError("standard deviations must be nonnegative")
        if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.means.shape[0]


def gaussian_cdf(m: float, sigma: float, xi) -> Union[float, np.ndarray]:
    """CDF of N(m, sigma^2); the degenerate sigma=0 case is a unit step."""
    xi = np.asarray(xi, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        out = np.where(xi >= m, 1.0, 0.0)
    else:
        out = ndtr((xi - m) / sigma)
    return float(out) if out.ndim == 0 else out


def _mixture_cell_tables(mix: GaussianMixture1D, boundaries: np.ndarray):
    """Per-cell mass and first-moment contributions for every component.

    Returns (mass, moment), each with shape (n_components, n_cells), using
    the closed form for int_a^b xi f(xi) dxi instead of quadrature.
    """
    m = mix.means[:, None]
    s = mix.stds[:, None]
    c = boundaries[None, :]

    cdf = np.empty((mix.size, boundaries.size))
    expo = np.zeros_like(cdf)
    pos = mix.stds > 0
    if np.any(pos):
        z = (c - m[pos]) / s[pos]
        cdf[pos] = ndtr(z)
        with np.errstate(under="ignore"):
            expo[pos] = np.exp(-0.5 * z * z)
    if np.any(~pos):
        cdf[~pos] = np.where(c >= m[~pos], 1.0, 0.0)
    cdf[:, 0] = 0.0
    cdf[:, -1] = 1.0
    expo[:, 0] = 0.0
    expo[:, -1] = 0.0

    mass = np.diff(cdf, axis=1)
    moment = np.empty_like(mass)
    if np.any(pos):
        sp = s[pos]
        moment[pos] = (
            -(sp / _SQRT_2PI) * np.diff(expo[pos], axis=1)
            + m[pos] * np.diff(cdf[pos], axis=1)
        )
    if np.any(~pos):
        moment[~pos] = m[~pos] * mass[~pos]
    return mass, moment


def lloyd_step_mixture_1d(mix: GaussianMixture1D, quantizer: Quantizer) -> Quantizer:
    """One Lloyd iteration against a 1D Gaussian mixture.

    The quantizer is sorted internally; cells whose mixture mass falls
    below the representable floor keep their point.  Points are returned
    in sorted order.
    """
    vor = Voronoi1D(quantizer)
    mass, moment = _mixture_cell_tables(mix, vor.boundaries)
    den = mix.weights @ mass
    num = mix.weights @ moment
    new_pts = vor.points.copy()
    occupied = den >= _EMPTY_CELL_MASS
    new_pts[occupied] = num[occupied] / den[occupied]
    return _build_quantizer(new_pts[:, None])


def quantization_error_mixture_1d(mix: GaussianMixture1D, quantizer: Quantizer) -> float:
    """Exact quadratic quantization error of a 1D Gaussian mixture."""
    vor = Voronoi1D(quantizer)
    c = vor.boundaries
    m = mix.means[:, None]
    s = mix.stds[:, None]
    mass, moment = _mixture_cell_tables(mix, c)

    # second moment over each cell: E[xi^2; xi in cell]
    second = np.empty_like(mass)
    pos = mix.stds > 0
    if np.any(pos):
        mp, sp = m[pos], s[pos]
        z = (c[None, :] - mp) / sp
        with np.errstate(under="ignore"):
            phi = np.exp(-0.5 * z * z) / _SQRT_2PI
        zphi = np.where(np.isfinite(z), z, 0.0) * phi
        dPhi = np.diff(ndtr(z), axis=1)
        second[pos] = (
            (mp ** 2 + sp ** 2) * dPhi
            - sp ** 2 * np.diff(zphi, axis=1)
            - 2.0 * mp * sp * np.diff(phi, axis=1)
        )
    if np.any(~pos):
        second[~pos] = (m[~pos] ** 2) * mass[~pos]

    x = vor.points[None, :]
    per_cell = second - 2.0 * x * moment + (x ** 2) * mass
    total = float(mix.weights @ per_cell.sum(axis=1))
    return math.sqrt(max(total, 0.0))


# ---------------------------------------------------------------------------
# Fixed-point driver
# ---------------------------------------------------------------------------

class LloydResult(NamedTuple):
    quantizer: Quantizer
    iterations: int
    final_error: float


LloydTarget = Union[MeasureLike, GaussianMixture1D, np.ndarray]


def _lloyd_step(target, quantizer: Quantizer) -> Quantizer:
    if isinstance(target, GaussianMixture1D):
        return lloyd_step_mixture_1d(target, quantizer)
    return lloyd_step_empirical(target, quantizer)


def _lloyd_error(target, quantizer: Quantizer) -> float:
    if isinstance(target, GaussianMixture1D):
        return quantization_error_mixture_1d(target, quantizer)
    return quantization_error(target, quantizer, p=2.0)


def lloyd_optimize(
    target: LloydTarget,
    x0: Quantizer,
    max_iters: int = 100,
    tol: float = 1e-9,
) -> LloydResult:
    """Iterate the applicable Lloyd step until the max-norm displacement
    drops below ``tol`` or ``max_iters`` is reached."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if not isinstance(
        target, (GaussianMixture1D, ParticleEnsemble, DiscreteMeasure, MeasureView)
    ):
        target = ParticleEnsemble(np.asarray(target, dtype=float))
    x = x0
    used = 0
    for _ in range(max_iters):
        nxt = _lloyd_step(target, x)
        used += 1
        a = np.sort(x.points, axis=0) if x.dim == 1 else x.points
        b = np.sort(nxt.points, axis=0) if nxt.dim == 1 else nxt.points
        disp = float(np.max(np.abs(a - b)))
        x = nxt
        if disp < tol:
            break
    return LloydResult(x, used, _lloyd_error(target, x))


def quantile_seed(sample: np.ndarray, n_points: int) -> Quantizer:
    """Deterministic warm start: sample points at evenly spaced ranks.

    Rows are ordered lexicographically by coordinates; in dimension one
    this picks the K sample quantiles.  Collisions are nudged apart so the
    result is a valid quantizer even for (near-)degenerate samples.
    """
    pts = np.asarray(sample, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n_points < 1 or n_points > n:
        raise ValueError("need 1 <= n_points <= sample size")
    order = np.lexsort(pts.T[::-1])
    ranks = ((np.arange(n_points) + 0.5) * n / n_points).astype(int)
    return _build_quantizer(pts[order[ranks]])


# ---------------------------------------------------------------------------
# Estimator interface
# ---------------------------------------------------------------------------

class LloydQuantizer(BaseEstimator, TransformerMixin):
    """K-point vector quantizer fitted by Lloyd's algorithm.

    Parameters
    ----------
    n_points : quantization level K.
    max_iter : Lloyd iteration cap.
    tol : max-norm displacement threshold for early stopping.
    init : "quantile" for deterministic rank seeding, or an explicit
        (K, d) array of starting points.

    Attributes
    ----------
    points_ : fitted (K, d) quantizer points.
    n_iter_ : Lloyd iterations actually used.
    quantization_error_ : quadratic quantization error on the fit sample.
    """

    def __init__(self, n_points=64, max_iter=100, tol=1e-9, init="quantile"):
        self.n_points = n_points
        self.max_iter = max_iter
        self.tol = tol
        self.init = init

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=True, dtype=float)
        if isinstance(self.init, str):
            if self.init != "quantile":
                raise ValueError(f"unknown init {self.init!r}")
            x0 = quantile_seed(X, self.n_points)
        else:
            x0 = Quantizer(np.asarray(self.init, dtype=float))
            if x0.size != self.n_points:
                raise ValueError("init array size must equal n_points")
        result = lloyd_optimize(
            ParticleEnsemble(X), x0, max_iters=self.max_iter, tol=self.tol
        )
        self.points_ = result.quantizer.points
        self.n_iter_ = result.iterations
        self.quantization_error_ = result.final_error
        return self

    def predict(self, X):
        check_is_fitted(self, "points_")
        X = check_array(X, ensure_2d=True, dtype=float)
        return project_indices(Quantizer(self.points_), X)

    def transform(self, X):
        """Replace each row by its nearest quantizer point."""
        return self.points_[self.predict(X)]

    def to_quantizer(self) -> Quantizer:
        check_is_fitted(self, "points_")
        return Quantizer(self.points_)


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------

def save_quantizer_csv(path, quantizer: Quantizer) -> None:
    np.savetxt(path, quantizer.points, delimiter=",")


def load_quantizer_csv(path) -> Quantizer:
    return Quantizer(np.loadtxt(path, delimiter=",", ndmin=2))


def save_measure_csv(path, measure: DiscreteMeasure) -> None:
    np.savetxt(
        path,
        np.column_stack([measure.atoms, measure.weights]),
        delimiter=",",
    )


def load_measure_csv(path) -> DiscreteMeasure:
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    return DiscreteMeasure(atoms=raw[:, :-1], weights=raw[:, -1])
