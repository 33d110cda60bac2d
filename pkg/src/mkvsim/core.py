"""Domain types shared by every simulation scheme.

Time grid, mean-field model abstraction, measure views, particle
ensembles, discrete measures and the reproducible-randomness contract.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

_MASK64 = (1 << 64) - 1

__all__ = [
    "BlowUp",
    "NonFiniteOutput",
    "QuadratureFailure",
    "InstanceTooLarge",
    "ConfigError",
    "DegenerateGeometry",
    "TimeGrid",
    "RngStream",
    "gaussian_increments",
    "DiscreteMeasure",
    "ParticleEnsemble",
    "MeasureView",
    "as_measure_view",
    "PointMassLaw",
    "GaussianLaw",
    "CustomLaw",
    "VlasovKernel",
    "MeanFieldModel",
    "evaluate_drift",
    "evaluate_diffusion",
    "kahan_sum",
    "weighted_average",
]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class NonFiniteOutput(RuntimeError):
    """A model coefficient returned NaN or Inf."""


class BlowUp(RuntimeError):
    """A particle state left the finite (or guarded) region during a step."""

    def __init__(self, step: int, particle: int, value: float):
        self.step = step
        self.particle = particle
        self.value = value
        super().__init__(
            f"particle {particle} blew up at step {step} (value={value!r})"
        )


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


class InstanceTooLarge(ValueError):
    """Exact transport solver invoked above its small-instance atom cap."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class DegenerateGeometry(ValueError):
    """Planar cell geometry could not be built from the given atoms."""


# ---------------------------------------------------------------------------
# Compensated summation helpers
# ---------------------------------------------------------------------------

def kahan_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Compensated (Kahan) summation along one axis.

    Keeps aggregation results order-independent to well below 1e-12 even
    for long atom lists.
    """
    values = np.asarray(values, dtype=float)
    values = np.moveaxis(values, axis, 0)
    total = np.zeros(values.shape[1:], dtype=float)
    comp = np.zeros_like(total)
    for row in values:
        y = row - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def weighted_average(values: np.ndarray, weights: np.ndarray, axis: int = 0) -> np.ndarray:
    """Compensated weighted sum ``sum_k w_k * values_k`` along ``axis``.

    Scalar reductions go through ``math.fsum`` (exactly rounded), which is
    both faster and tighter than the explicit Kahan loop.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.ndim == 1:
        return math.fsum(values * weights)
    shape = [1] * values.ndim
    shape[axis] = weights.shape[0]
    return kahan_sum(values * weights.reshape(shape), axis=axis)


# ---------------------------------------------------------------------------
# Time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform Euler grid t_m = m*h on [0, T] with h = T/steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

    @property
    def h(self) -> float:
        return self.horizon / self.steps if self.steps else 0.0

    def node(self, m: int) -> float:
        return m * self.h

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.h


# ---------------------------------------------------------------------------
# Reproducible randomness
# ---------------------------------------------------------------------------

class RngStream:
    """Counter-based Gaussian stream keyed by (seed, stream_id).

    Backed by numpy's Philox generator: the same key reproduces the same
    sequence on every platform, and distinct stream ids give independent
    streams.  A stream must not be shared across concurrent callers.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = self.seed | (self.stream_id << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_increments(rng: RngStream, count: int, q: int) -> np.ndarray:
    """Draw a (count, q) block of standard normals, advancing the stream.

    Rows are consumed in particle order so that sequential and parallel
    execution see identical values.
    """
    if count < 1 or q < 1:
        raise ValueError("count and q must be >= 1")
    return rng.standard_normal((count, q))


# ---------------------------------------------------------------------------
# Measures and ensembles
# ---------------------------------------------------------------------------

def _as_points(a, dim: Optional[int] = None) -> np.ndarray:
    pts = np.asarray(a, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("expected a (n, d) array of points")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"expected dimension {dim}, got {pts.shape[1]}")
    return pts


def _has_duplicate_rows(pts: np.ndarray) -> bool:
    return np.unique(pts, axis=0).shape[0] != pts.shape[0]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atom set sum_k w_k * delta_{x_k}."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _as_points(self.atoms)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] != weights.shape[0]:
            raise ValueError("atoms and weights length mismatch")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if _has_duplicate_rows(atoms):
            raise ValueError("atoms must be pairwise distinct")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


@dataclass
class ParticleEnsemble:
    """N particle states in R^d at one time step."""

    states: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.states = _as_points(self.states)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


class MeasureView:
    """Read-only view of a probability measure as (atoms, weights).

    One of: the empirical measure of a particle ensemble (uniform
    weights), a weighted discrete measure, or a single point mass.
    """

    __slots__ = ("atoms", "weights", "kind")

    def __init__(self, atoms: np.ndarray, weights: np.ndarray, kind: str):
        self.atoms = atoms
        self.weights = weights
        self.kind = kind

    @classmethod
    def ensemble(cls, e: ParticleEnsemble) -> "MeasureView":
        n = e.size
        return cls(e.states, np.full(n, 1.0 / n), "ensemble")

    @classmethod
    def discrete(cls, m: DiscreteMeasure) -> "MeasureView":
        return cls(m.atoms, m.weights, "discrete")

    @classmethod
    def point_mass(cls, x) -> "MeasureView":
        pt = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(pt[None, :], np.ones(1), "point_mass")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Weighted atom sum of f, compensated."""
        vals = np.asarray([f(a) for a in self.atoms], dtype=float)
        return weighted_average(vals, self.weights)


MeasureLike = Union[MeasureView, DiscreteMeasure, ParticleEnsemble]


def as_measure_view(mu: MeasureLike) -> MeasureView:
    if isinstance(mu, MeasureView):
        return mu
    if isinstance(mu, DiscreteMeasure):
        return MeasureView.discrete(mu)
    if isinstance(mu, ParticleEnsemble):
        return MeasureView.ensemble(mu)
    raise TypeError(f"not a measure-like object: {type(mu)!r}")


# ---------------------------------------------------------------------------
# Initial laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointMassLaw:
    """Deterministic start: all mass at one point."""

    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "point", np.atleast_1d(np.asarray(self.point, dtype=float))
        )

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        return np.tile(self.point, (n, 1))


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian start with diagonal covariance."""

    mean: np.ndarray
    cov_diag: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_1d(np.asarray(self.cov_diag, dtype=float))
        if mean.shape != cov.shape:
            raise ValueError("mean and cov_diag shape mismatch")
        if np.any(cov < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_diag", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + np.sqrt(self.cov_diag) * z


@dataclass(frozen=True)
class CustomLaw:
    """Sampler-only start (no exact descriptor available)."""

    sampler: Callable[[RngStream, int], np.ndarray]
    dim: int

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        out = _as_points(self.sampler(rng, n), self.dim)
        return out


InitialLaw = Union[PointMassLaw, GaussianLaw, CustomLaw]


# ---------------------------------------------------------------------------
# Mean-field model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VlasovKernel:
    """Kernel pair (beta, a) for linear measure dependence.

    ``beta(t, X, U)`` maps states X (n, d) and atoms U (k, d) to (n, k, d);
    ``a(t, X, U)`` maps to (n, k, d, q).  The model coefficients are the
    measure averages over the atom axis.
    """

    beta: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    a: Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MeanFieldModel:
    """Drift/diffusion pair with explicit measure argument.

    ``drift(t, X, mu)`` takes a batch of states X (n, d) and a MeasureView
    and returns (n, d).  ``diffusion`` returns an array broadcastable to
    (n, d, q).
    """

    dim: int
    noise_dim: int
    drift: Callable[[float, np.ndarray, MeasureView], np.ndarray]
    diffusion: Callable[[float, np.ndarray, MeasureView], np.ndarray]
    initial_law: InitialLaw
    vlasov: Optional[VlasovKernel] = None
    blowup_threshold: Optional[float] = None

    @classmethod
    def from_vlasov(
        cls,
        dim: int,
        noise_dim: int,
        kernel: VlasovKernel,
        initial_law: InitialLaw,
        drift: Optional[Callable] = None,
        diffusion: Optional[Callable] = None,
        blowup_threshold: Optional[float] = None,
    ) -> "MeanFieldModel":
        """Build a model whose coefficients are kernel averages.

        ``drift``/``diffusion`` may override the generic averaged
        evaluation with an equivalent faster path; the kernel stays
        available for schemes that need it.
        """
        drift = drift or _averaged_drift(kernel)
        diffusion = diffusion or _averaged_diffusion(kernel)
        return cls(
            dim=dim,
            noise_dim=noise_dim,
            drift=drift,
            diffusion=diffusion,
            initial_law=initial_law,
            vlasov=kernel,
            blowup_threshold=blowup_threshold,
        )


def _averaged_drift(kernel: VlasovKernel):
    def drift(t, x, mu: MeasureView):
        vals = kernel.beta(t, x, mu.atoms)  # (n, k, d)
        return weighted_average(vals, mu.weights, axis=1)

    return drift


def _averaged_diffusion(kernel: VlasovKernel):
    def diffusion(t, x, mu: MeasureView):
        vals = kernel.a(t, x, mu.atoms)  # (n, k, d, q)
        return weighted_average(vals, mu.weights, axis=1)

    return diffusion


def _state_batch(x, dim: int):
    """Promote a single state (scalar or (d,)) to a (n, d) batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar state given but model dimension is {dim}")
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if x.shape[0] == dim:
            return x[None, :], True
        if dim == 1:
            return x[:, None], False
        raise ValueError(f"state of length {x.shape[0]} does not match d={dim}")
    return _as_points(x, dim), False


def evaluate_drift(model: MeanFieldModel, t: float, x, mu: MeasureLike) -> np.ndarray:
    """Drift b(t, x, mu) at a single state x, validated finite."""
    view = as_measure_view(mu)
    xb, single = _state_batch(x, model.dim)
    out = np.asarray(model.drift(t, xb, view), dtype=float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput(f"drift returned non-finite values at t={t}")
    return out[0] if single else out


def evaluate_diffusion(model: MeanFieldModel, t: float, x, mu: MeasureLike) -> np.ndarray:
    """Diffusion sigma(t, x, mu) at a single state x as a (d, q) matrix."""
    view = as_measure_view(mu)
    xb, single = _state_batch(x, model.dim)
    out = np.asarray(model.diffusion(t, xb, view), dtype=float)
    out = np.broadcast_to(out, (xb.shape[0], model.dim, model.noise_dim))
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput(f"diffusion returned non-finite values at t={t}")
    return out[0] if single else out
