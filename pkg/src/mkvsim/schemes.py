"""The three simulation schemes.

Interacting-particle Euler method, deterministic recursive quantization
(dimension one, Vlasov form) and the hybrid particle-quantization
scheme.  Each produces a time-indexed sequence of measures.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .core import (
    BlowUp,
    CustomLaw,
    DiscreteMeasure,
    GaussianLaw,
    MeasureView,
    MeanFieldModel,
    ParticleEnsemble,
    PointMassLaw,
    RngStream,
    TimeGrid,
    gaussian_increments,
)
from .quantization import (
    GaussianMixture1D,
    Quantizer,
    Voronoi1D,
    lloyd_step_empirical,
    lloyd_step_mixture_1d,
    quantile_seed,
    voronoi_weights,
)

logger = logging.getLogger(__name__)

Observer = Callable[[int, MeasureView], None]

_WEIGHT_DRIFT_HARD = 1e-10

__all__ = [
    "ParticleRunConfig",
    "HybridRunConfig",
    "RecursiveQState",
    "TransitionMatrix",
    "ParticleRunResult",
    "RecursiveRunResult",
    "HybridRunResult",
    "particle_step",
    "simulate_particles",
    "recursive_transition_1d",
    "simulate_recursive_q",
    "hybrid_step",
    "simulate_hybrid",
]


# ---------------------------------------------------------------------------
# Configurations and states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParticleRunConfig:
    n_particles: int
    grid: TimeGrid
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")


@dataclass(frozen=True)
class HybridRunConfig:
    n_particles: int
    n_points: int
    grid: TimeGrid
    lloyd_iters_per_step: int
    seed: int
    stream_id: int = 0
    quantizer: Optional[Quantizer] = None

    def __post_init__(self):
        if self.n_particles < 1 or self.n_points < 1:
            raise ValueError("n_particles and n_points must be >= 1")
        if self.lloyd_iters_per_step < 0:
            raise ValueError("lloyd_iters_per_step must be >= 0")
        if self.n_points > self.n_particles:
            warnings.warn(
                "quantization level exceeds particle count; "
                "cells will be mostly empty",
                stacklevel=2,
            )


@dataclass
class RecursiveQState:
    """Quantizer and weight vector of the recursive scheme at one step."""

    quantizer: Quantizer
    weights: np.ndarray
    time_index: int

    def __post_init__(self):
        if self.quantizer.dim != 1:
            raise ValueError("recursive scheme state must be one-dimensional")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != self.quantizer.size:
            raise ValueError("weights length must match quantizer size")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > _WEIGHT_DRIFT_HARD:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-10")
        self.weights = w

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(atoms=self.quantizer.points, weights=self.weights)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix of cell-to-cell transition probabilities."""

    matrix: np.ndarray
    degenerate_rows: int = 0

    def __post_init__(self):
        pi = np.asarray(self.matrix, dtype=float)
        if pi.ndim != 2:
            raise ValueError("transition matrix must be 2-dimensional")
        if np.any(pi < -1e-15) or np.any(pi > 1 + 1e-12):
            raise ValueError("transition entries must lie in [0, 1]")
        if np.max(np.abs(pi.sum(axis=1) - 1.0)) > _WEIGHT_DRIFT_HARD:
            raise ValueError("transition rows must sum to 1 within 1e-10")
        object.__setattr__(self, "matrix", pi)


# ---------------------------------------------------------------------------
# Run results
# ---------------------------------------------------------------------------

@dataclass
class ParticleRunResult:
    final: ParticleEnsemble
    wall_per_step: float


@dataclass
class RecursiveRunResult:
    states: list
    renormalizations: int
    max_weight_drift: float
    degenerate_transitions: int
    wall_per_step: float

    @property
    def final(self) -> RecursiveQState:
        return self.states[-1]


@dataclass
class HybridRunResult:
    final_particles: ParticleEnsemble
    final_quantizer: Quantizer
    final_measure: DiscreteMeasure
    wall_per_step: float


# ---------------------------------------------------------------------------
# Particle method
# ---------------------------------------------------------------------------

def _advance(
    model: MeanFieldModel,
    ensemble: ParticleEnsemble,
    mu: MeasureView,
    grid: TimeGrid,
    rng: RngStream,
) -> ParticleEnsemble:
    """One Euler step of every particle against a frozen measure."""
    n = ensemble.size
    t = grid.node(ensemble.time_index)
    h = grid.h
    z = gaussian_increments(rng, n, model.noise_dim)
    drift = np.asarray(model.drift(t, ensemble.states, mu), dtype=float)
    diff = np.asarray(model.diffusion(t, ensemble.states, mu), dtype=float)
    diff = np.broadcast_to(diff, (n, model.dim, model.noise_dim))
    noise = np.einsum("ndq,nq->nd", diff, z)
    new_states = ensemble.states + h * drift + math.sqrt(h) * noise
    step = ensemble.time_index + 1
    bad = ~np.isfinite(new_states)
    if model.blowup_threshold is not None:
        with np.errstate(invalid="ignore"):
            bad |= np.abs(new_states) > model.blowup_threshold
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise BlowUp(step, int(i), float(new_states[i, j]))
    return ParticleEnsemble(new_states, step)


def particle_step(
    model: MeanFieldModel,
    ensemble: ParticleEnsemble,
    grid: TimeGrid,
    rng: RngStream,
) -> ParticleEnsemble:
    """Advance the ensemble one step with its own empirical measure,
    frozen at the input time."""
    if ensemble.time_index >= grid.steps:
        raise ValueError("ensemble is already at the final time step")
    return _advance(model, ensemble, MeasureView.ensemble(ensemble), grid, rng)


def _notify(observers: Sequence[Observer], m: int, view: MeasureView) -> None:
    for obs in observers:
        obs(m, view)


def simulate_particles(
    model: MeanFieldModel,
    config: ParticleRunConfig,
    observers: Sequence[Observer] = (),
) -> ParticleRunResult:
    """Run the interacting-particle Euler scheme over the full grid.

    Deterministic given the seed.  Observers receive each ensemble (as a
    measure view) exactly once, in time order, including time zero.
    """
    rng = RngStream(config.seed, config.stream_id)
    states = model.initial_law.sample(rng, config.n_particles)
    ens = ParticleEnsemble(states, 0)
    _notify(observers, 0, MeasureView.ensemble(ens))
    t0 = time.perf_counter()
    for m in range(config.grid.steps):
        ens = particle_step(model, ens, config.grid, rng)
        _notify(observers, m + 1, MeasureView.ensemble(ens))
    elapsed = time.perf_counter() - t0
    return ParticleRunResult(final=ens, wall_per_step=elapsed / max(config.grid.steps, 1))


# ---------------------------------------------------------------------------
# Recursive quantization scheme (dimension one, Vlasov form)
# ---------------------------------------------------------------------------

def _require_recursive_support(model: MeanFieldModel) -> None:
    if model.vlasov is None:
        raise ValueError("recursive quantization needs a model in Vlasov form")
    if model.dim != 1 or model.noise_dim != 1:
        raise ValueError(
            "recursive quantization is implemented for d=1 only: cell "
            "integration against multivariate Gaussians needs external "
            "cubature tools"
        )


def _conditional_moments(
    model: MeanFieldModel, state: RecursiveQState, grid: TimeGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Per-source Gaussian moments of the one-step-ahead conditional law:
    m_i = x_i + h sum_k p_k beta(t, x_i, x_k),
    s_i = sqrt(h) |sum_k p_k a(t, x_i, x_k)|.
    """
    t = grid.node(state.time_index)
    h = grid.h
    x = state.quantizer.points
    p = state.weights
    beta = np.asarray(model.vlasov.beta(t, x, x), dtype=float)[:, :, 0]
    a = np.asarray(model.vlasov.a(t, x, x), dtype=float)[:, :, 0, 0]
    m = x[:, 0] + h * (beta @ p)
    s = math.sqrt(h) * np.abs(a @ p)
    return m, s


def recursive_transition_1d(
    model: MeanFieldModel,
    state: RecursiveQState,
    next_x: Quantizer,
    grid: TimeGrid,
) -> tuple[TransitionMatrix, np.ndarray]:
    """Exact Gaussian transition onto the next quantizer's cells.

    Row i is the law N(m_i, s_i^2) integrated over the 1D Voronoi cells
    of ``next_x``; the returned weights follow ``next_x``'s point order.
    Degenerate rows (s_i = 0 with m_i exactly on a boundary) put their
    mass in the lower-index cell and are counted as a diagnostic.
    """
    _require_recursive_support(model)
    m, s = _conditional_moments(model, state, grid)
    vor = Voronoi1D(next_x)
    c = vor.boundaries
    K, Kn = state.quantizer.size, next_x.size

    pi = np.zeros((K, Kn))
    degenerate = 0
    pos = s > 0
    if np.any(pos):
        z = (c[None, :] - m[pos, None]) / s[pos, None]
        F = ndtr(z)
        F[:, 0] = 0.0
        F[:, -1] = 1.0
        rows = np.diff(F, axis=1)
        rows /= rows.sum(axis=1, keepdims=True)
        pi[np.ix_(pos, vor.order)] = rows
    if np.any(~pos):
        for i in np.flatnonzero(~pos):
            if np.any(m[i] == c[1:-1]):
                degenerate += 1
                logger.warning(
                    "degenerate transition: source %d sits on a cell boundary", i
                )
            pi[i, vor.locate_original(m[i])] = 1.0
    matrix = TransitionMatrix(pi, degenerate_rows=degenerate)
    next_weights = pi.T @ state.weights
    return matrix, next_weights


def _initial_weights_1d(
    law, vor: Voronoi1D, law_sample_seed: int, empirical_size: int
) -> np.ndarray:
    """Exact cell masses of the initial law, sorted-cell order."""
    if isinstance(law, PointMassLaw):
        w = np.zeros(vor.points.shape[0])
        w[vor.locate(law.point[0])] = 1.0
        return w
    if isinstance(law, GaussianLaw):
        mean, sd = law.mean[0], math.sqrt(law.cov_diag[0])
        if sd == 0:
            w = np.zeros(vor.points.shape[0])
            w[vor.locate(mean)] = 1.0
            return w
        F = ndtr((vor.boundaries - mean) / sd)
        F[0], F[-1] = 0.0, 1.0
        return np.diff(F)
    rng = RngStream(law_sample_seed, stream_id=0)
    draw = law.sample(rng, empirical_size)[:, 0]
    counts = np.bincount(vor.locate(draw), minlength=vor.points.shape[0])
    return counts / empirical_size


def _initial_lloyd_target(law, law_sample_seed: int, empirical_size: int):
    if isinstance(law, PointMassLaw):
        return DiscreteMeasure(atoms=law.point[None, :], weights=np.ones(1))
    if isinstance(law, GaussianLaw):
        return GaussianMixture1D(
            means=[law.mean[0]],
            stds=[math.sqrt(law.cov_diag[0])],
            weights=[1.0],
        )
    rng = RngStream(law_sample_seed, stream_id=0)
    return ParticleEnsemble(law.sample(rng, empirical_size))


def _sorted_1d(quantizer: Quantizer) -> Quantizer:
    return Quantizer(np.sort(quantizer.points[:, 0])[:, None])


def simulate_recursive_q(
    model: MeanFieldModel,
    grid: TimeGrid,
    quantizer_source: Union[Quantizer, Sequence[Quantizer]],
    lloyd_iters: int = 0,
    law_sample_seed: int = 0,
    law_sample_size: int = 1_000_000,
) -> RecursiveRunResult:
    """Deterministic recursive quantization over the full grid.

    With ``lloyd_iters`` = 0, ``quantizer_source`` is either one fixed
    quantizer reused at every step or a full schedule of ``steps + 1``
    quantizers.  With ``lloyd_iters`` >= 1, it seeds the quantizer, which
    is then re-optimized at each step against the predicted Gaussian
    mixture, warm-started from the previous step's quantizer.
    """
    _require_recursive_support(model)
    if lloyd_iters < 0:
        raise ValueError("lloyd_iters must be >= 0")
    if isinstance(quantizer_source, Quantizer):
        schedule = None
        x = _sorted_1d(quantizer_source)
    else:
        schedule = [_sorted_1d(q) for q in quantizer_source]
        if len(schedule) != grid.steps + 1:
            raise ValueError("quantizer schedule must have steps + 1 entries")
        x = schedule[0]

    if lloyd_iters >= 1:
        target = _initial_lloyd_target(model.initial_law, law_sample_seed, law_sample_size)
        for _ in range(lloyd_iters):
            x = lloyd_step_mixture_1d(target, x) if isinstance(
                target, GaussianMixture1D
            ) else lloyd_step_empirical(target, x)
        x = _sorted_1d(x)

    p = _initial_weights_1d(
        model.initial_law, Voronoi1D(x), law_sample_seed, law_sample_size
    )
    state = RecursiveQState(x, p, 0)
    states = [state]
    renormalizations = 0
    max_drift = 0.0
    degenerate = 0

    t0 = time.perf_counter()
    for m in range(grid.steps):
        if lloyd_iters >= 1:
            mom_m, mom_s = _conditional_moments(model, state, grid)
            active = state.weights > 0
            mix = GaussianMixture1D(
                means=mom_m[active],
                stds=mom_s[active],
                weights=state.weights[active],
            )
            next_x = state.quantizer
            for _ in range(lloyd_iters):
                next_x = lloyd_step_mixture_1d(mix, next_x)
        elif schedule is not None:
            next_x = schedule[m + 1]
        else:
            next_x = state.quantizer
        matrix, weights = recursive_transition_1d(model, state, next_x, grid)
        degenerate += matrix.degenerate_rows
        total = math.fsum(weights)
        drift = abs(total - 1.0)
        max_drift = max(max_drift, drift)
        if drift > _WEIGHT_DRIFT_HARD:
            raise ValueError(
                f"weight vector drifted by {drift:.3e} at step {m + 1}"
            )
        if drift > 0:
            weights = weights / total
            if drift > 1e-14:
                renormalizations += 1
        state = RecursiveQState(next_x, weights, m + 1)
        states.append(state)
    elapsed = time.perf_counter() - t0

    return RecursiveRunResult(
        states=states,
        renormalizations=renormalizations,
        max_weight_drift=max_drift,
        degenerate_transitions=degenerate,
        wall_per_step=elapsed / max(grid.steps, 1),
    )


# ---------------------------------------------------------------------------
# Hybrid particle-quantization scheme
# ---------------------------------------------------------------------------

def hybrid_step(
    model: MeanFieldModel,
    particles: ParticleEnsemble,
    x: Quantizer,
    lloyd_iters: int,
    grid: TimeGrid,
    rng: RngStream,
) -> tuple[ParticleEnsemble, Quantizer, DiscreteMeasure]:
    """One hybrid step: optionally re-optimize the quantizer against the
    current particles, project them onto its cells, then advance every
    particle against the projected measure."""
    if particles.time_index >= grid.steps:
        raise ValueError("ensemble is already at the final time step")
    for _ in range(lloyd_iters):
        x = lloyd_step_empirical(particles, x)
    mu_hat = voronoi_weights(particles, x)
    advanced = _advance(model, particles, MeasureView.discrete(mu_hat), grid, rng)
    return advanced, x, mu_hat


def simulate_hybrid(
    model: MeanFieldModel,
    config: HybridRunConfig,
    observers: Sequence[Observer] = (),
) -> HybridRunResult:
    """Run the hybrid particle-quantization scheme over the full grid.

    Without Lloyd iterations a fixed quantizer must be supplied (or the
    deterministic rank-quantile seed of the initial draw is kept).  With
    Lloyd iterations the quantizer is re-optimized each step, warm-started
    from the previous step (rank quantiles of the initial draw at t=0).
    """
    rng = RngStream(config.seed, config.stream_id)
    states = model.initial_law.sample(rng, config.n_particles)
    ens = ParticleEnsemble(states, 0)
    if config.quantizer is not None:
        if config.quantizer.size != config.n_points:
            raise ValueError("supplied quantizer size differs from n_points")
        x = config.quantizer
    else:
        x = quantile_seed(states, config.n_points)

    t0 = time.perf_counter()
    for m in range(config.grid.steps):
        ens, x, mu_hat = hybrid_step(
            model, ens, x, config.lloyd_iters_per_step, config.grid, rng
        )
        _notify(observers, m, MeasureView.discrete(mu_hat))
    for _ in range(config.lloyd_iters_per_step):
        x = lloyd_step_empirical(ens, x)
    mu_final = voronoi_weights(ens, x)
    elapsed = time.perf_counter() - t0
    _notify(observers, config.grid.steps, MeasureView.discrete(mu_final))

    return HybridRunResult(
        final_particles=ens,
        final_quantizer=x,
        final_measure=mu_final,
        wall_per_step=elapsed / max(config.grid.steps, 1),
    )
