"""Benchmark models, analytic references and toy oracles.

The 1D Burgers-type model comes with its closed-form terminal CDF; the
3D FitzHugh-Nagumo network carries the full parameter block.  Toy models
back oracle tests for the schemes.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .core import (
    GaussianLaw,
    MeanFieldModel,
    MeasureLike,
    PointMassLaw,
    QuadratureFailure,
    VlasovKernel,
    as_measure_view,
)

__all__ = [
    "burgers_model",
    "burgers_drift",
    "burgers_true_cdf",
    "burgers_true_cdf_grid",
    "FhnParams",
    "fhn_model",
    "fhn_drift",
    "fhn_diffusion",
    "zero_model",
    "constant_drift_model",
    "ou_model",
    "brownian_vlasov_model",
    "toy_models",
    "build_model",
    "MODEL_IDS",
]


# ---------------------------------------------------------------------------
# Burgers-type interaction model
# ---------------------------------------------------------------------------

def burgers_drift(x, mu: MeasureLike):
    """Measure mass of (-inf, x], inclusive at ties.

    Computed by sorting the atoms once and ranking the query points, so a
    whole ensemble is handled in O((n + k) log k) per call.
    """
    view = as_measure_view(mu)
    atoms = view.atoms[:, 0]
    order = np.argsort(atoms, kind="stable")
    cum = np.cumsum(view.weights[order])
    x = np.asarray(x, dtype=float)
    idx = np.searchsorted(atoms[order], x, side="right")
    out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    return out


def burgers_model(sigma2: float = 0.2) -> MeanFieldModel:
    """Drift = CDF of the current law at the particle, constant diffusion.

    Vlasov form: interaction kernel 1_{x >= u}, diffusion kernel constant
    sigma.  The drift override replaces the O(n*k) kernel average with the
    sort-rank path.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    sigma = math.sqrt(sigma2)

    def beta(t, x, u):
        return (x[:, None, :] >= u[None, :, :]).astype(float)

    def a(t, x, u):
        return np.broadcast_to(sigma, (x.shape[0], u.shape[0], 1, 1))

    def drift(t, x, mu):
        return burgers_drift(x[:, 0], mu)[:, None]

    def diffusion(t, x, mu):
        return np.array([[sigma]])

    return MeanFieldModel.from_vlasov(
        dim=1,
        noise_dim=1,
        kernel=VlasovKernel(beta, a),
        initial_law=PointMassLaw([0.0]),
        drift=drift,
        diffusion=diffusion,
    )


def _burgers_integrals(sigma2: float, x: float) -> tuple[float, float]:
    inv = 1.0 / sigma2
    sigma = math.sqrt(sigma2)

    def upper(y):
        z = inv * (0.5 * (x - y) ** 2 + y)
        return math.exp(-z) if z < 690.0 else 0.0  # truncate below 1e-300

    def lower(y):
        z = inv * 0.5 * (x - y) ** 2
        return math.exp(-z) if z < 690.0 else 0.0

    # the upper integrand peaks at y = max(x - 1, 0), the lower at y = min(x, 0)
    up_peak = max(x - 1.0, 0.0)
    lo_peak = min(x, 0.0)
    num, err_num = quad(
        upper, 0.0, up_peak + 45.0 * sigma, epsabs=0.0, epsrel=1e-12,
        limit=500, points=[up_peak],
    )
    low, err_low = quad(
        lower, lo_peak - 45.0 * sigma, 0.0, epsabs=0.0, epsrel=1e-12,
        limit=500, points=[lo_peak],
    )
    den = num + low
    err_ratio = 2.0 * (err_num + err_low) / max(den, 1e-300)
    if err_ratio > 1e-10:
        raise QuadratureFailure(
            f"true-CDF quadrature error {err_ratio:.2e} at x={x}"
        )
    return num, den


def burgers_true_cdf(sigma2: float, x: float) -> float:
    """Terminal (T=1) CDF of the model started at zero.

    Both integrals are evaluated by adaptive quadrature at absolute
    tolerance 1e-10; the tails are cut off automatically where the
    integrand underflows.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    num, den = _burgers_integrals(sigma2, float(x))
    return num / den


def _cache_dir() -> Path:
    root = os.environ.get("MKVSIM_CACHE")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "mkvsim"


def burgers_true_cdf_grid(
    sigma2: float, points: np.ndarray, cache: bool = True
) -> np.ndarray:
    """Vectorized true CDF with an on-disk cache per (sigma2, grid)."""
    points = np.asarray(points, dtype=float)
    key = hashlib.sha256(
        repr(float(sigma2)).encode() + points.tobytes()
    ).hexdigest()[:24]
    path = _cache_dir() / f"burgers_cdf_{key}.npy"
    if cache and path.exists():
        values = np.load(path)
        if values.shape == points.shape:
            return values
    values = np.array([burgers_true_cdf(sigma2, x) for x in points])
    if cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, values)
        os.replace(tmp, path)
    return values


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo neuron network (d = 3)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FhnParams:
    """Parameter block of the 3D neuron network benchmark.

    ``sigma_v0``, ``sigma_w0``, ``sigma_y0`` are the diagonal entries of
    the initial covariance matrix.
    """

    v0: float = 0.0
    sigma_v0: float = 0.4
    a: float = 0.7
    b: float = 0.8
    c: float = 0.08
    current: float = 0.5
    sigma_ext: float = 0.5
    w0: float = 0.5
    sigma_w0: float = 0.4
    v_rev: float = 1.0
    a_r: float = 1.0
    a_d: float = 1.0
    t_max: float = 1.0
    lam: float = 0.2
    y0: float = 0.3
    sigma_y0: float = 0.05
    j_strength: float = 1.0
    sigma_j: float = 0.2
    v_t: float = 2.0
    gamma: float = 0.1
    lam2: float = 0.5

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.a_r < 0 or self.a_d < 0:
            raise ValueError("a_r and a_d must be nonnegative")


def _fhn_mean_y(mu: MeasureLike) -> float:
    view = as_measure_view(mu)
    return math.fsum(view.weights * view.atoms[:, 2])


def _fhn_gate(p: FhnParams, x1: np.ndarray, x3: np.ndarray) -> np.ndarray:
    return p.a_r * p.t_max * (1.0 - x3) / (1.0 + np.exp(-p.lam * (x1 - p.v_t)))


def _fhn_sigma32(p: FhnParams, x1: np.ndarray, x3: np.ndarray) -> np.ndarray:
    inside = (x3 > 0.0) & (x3 < 1.0)
    out = np.zeros_like(x3)
    if np.any(inside):
        x1i, x3i = x1[inside], x3[inside]
        window = 1.0 - (2.0 * x3i - 1.0) ** 2
        with np.errstate(under="ignore"):
            bump = p.gamma * np.exp(-p.lam2 / window)
        out[inside] = np.sqrt(_fhn_gate(p, x1i, x3i) + p.a_d * x3i) * bump
    return out


def fhn_drift(t, x: np.ndarray, mu: MeasureLike, p: FhnParams = FhnParams()) -> np.ndarray:
    """Neuron drift; the measure enters only through the mean of the
    third coordinate, accumulated in one pass."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m3 = _fhn_mean_y(mu)
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    d1 = x1 - x1 ** 3 / 3.0 - x2 + p.current - p.j_strength * (x1 - p.v_rev) * m3
    d2 = p.c * (x1 + p.a - p.b * x2)
    d3 = _fhn_gate(p, x1, x3) - p.a_d * x3
    return np.stack([d1, d2, d3], axis=1)


def fhn_diffusion(t, x: np.ndarray, mu: MeasureLike, p: FhnParams = FhnParams()) -> np.ndarray:
    """Neuron diffusion matrix: row 2 vanishes, channel noise sits at
    entry (3, 2) and is cut off outside 0 < x3 < 1."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m3 = _fhn_mean_y(mu)
    n = x.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 0] = p.sigma_ext
    out[:, 0, 2] = -p.sigma_j * (x[:, 0] - p.v_rev) * m3
    out[:, 2, 1] = _fhn_sigma32(p, x[:, 0], x[:, 2])
    return out


def fhn_model(params: FhnParams = FhnParams()) -> MeanFieldModel:
    p = params

    def beta(t, x, u):
        n, k = x.shape[0], u.shape[0]
        out = np.empty((n, k, 3))
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        out[:, :, 0] = (
            x1 - x1 ** 3 / 3.0 - x2 + p.current
        )[:, None] - p.j_strength * (x1 - p.v_rev)[:, None] * u[None, :, 2]
        out[:, :, 1] = (p.c * (x1 + p.a - p.b * x2))[:, None]
        out[:, :, 2] = (_fhn_gate(p, x1, x3) - p.a_d * x3)[:, None]
        return out

    def a(t, x, u):
        n, k = x.shape[0], u.shape[0]
        out = np.zeros((n, k, 3, 3))
        out[:, :, 0, 0] = p.sigma_ext
        out[:, :, 0, 2] = -p.sigma_j * (x[:, 0] - p.v_rev)[:, None] * u[None, :, 2]
        out[:, :, 2, 1] = _fhn_sigma32(p, x[:, 0], x[:, 2])[:, None]
        return out

    return MeanFieldModel.from_vlasov(
        dim=3,
        noise_dim=3,
        kernel=VlasovKernel(beta, a),
        initial_law=GaussianLaw(
            mean=[p.v0, p.w0, p.y0],
            cov_diag=[p.sigma_v0, p.sigma_w0, p.sigma_y0],
        ),
        drift=lambda t, x, mu: fhn_drift(t, x, mu, p),
        diffusion=lambda t, x, mu: fhn_diffusion(t, x, mu, p),
        blowup_threshold=1e8,
    )


# ---------------------------------------------------------------------------
# Toy models for oracle tests
# ---------------------------------------------------------------------------

def zero_model(dim: int = 1, noise_dim: int = 1) -> MeanFieldModel:
    """b = 0, sigma = 0: every scheme must transport the start unchanged."""
    return MeanFieldModel(
        dim=dim,
        noise_dim=noise_dim,
        drift=lambda t, x, mu: np.zeros_like(x),
        diffusion=lambda t, x, mu: np.zeros((dim, noise_dim)),
        initial_law=PointMassLaw(np.zeros(dim)),
    )


def constant_drift_model(speed: float = 1.0) -> MeanFieldModel:
    """b = speed, sigma = 0: exact translation."""
    return MeanFieldModel(
        dim=1,
        noise_dim=1,
        drift=lambda t, x, mu: np.full_like(x, speed),
        diffusion=lambda t, x, mu: np.zeros((1, 1)),
        initial_law=PointMassLaw([0.0]),
    )


def ou_model(start: Optional[GaussianLaw] = None) -> MeanFieldModel:
    """b = -x, sigma = 1; the Euler recursion variance is known exactly."""
    return MeanFieldModel(
        dim=1,
        noise_dim=1,
        drift=lambda t, x, mu: -x,
        diffusion=lambda t, x, mu: np.ones((1, 1)),
        initial_law=start or PointMassLaw([0.0]),
    )


def ou_euler_variance(grid, m: int) -> float:
    """Exact variance of the Euler recursion for the OU toy model at
    step m, started from a point: sum_j h (1-h)^{2(m-1-j)}."""
    h = grid.h
    return math.fsum(h * (1.0 - h) ** (2 * (m - 1 - j)) for j in range(m))


def brownian_vlasov_model(sigma: float = 1.0) -> MeanFieldModel:
    """Vlasov form with beta = 0 and constant diffusion kernel: plain
    scaled Brownian motion, used to cross-check the recursive scheme."""

    def beta(t, x, u):
        return np.zeros((x.shape[0], u.shape[0], 1))

    def a(t, x, u):
        return np.broadcast_to(sigma, (x.shape[0], u.shape[0], 1, 1))

    return MeanFieldModel.from_vlasov(
        dim=1,
        noise_dim=1,
        kernel=VlasovKernel(beta, a),
        initial_law=PointMassLaw([0.0]),
    )


def toy_models() -> dict:
    return {
        "zero": zero_model,
        "constant": constant_drift_model,
        "ou": ou_model,
        "brownian": brownian_vlasov_model,
    }


# ---------------------------------------------------------------------------
# Registry for the CLI
# ---------------------------------------------------------------------------

MODEL_IDS = ("burgers", "fhn", "ou", "brownian", "zero", "constant")


def build_model(model_id: str, params: Optional[dict] = None) -> MeanFieldModel:
    params = dict(params or {})
    if model_id == "burgers":
        return burgers_model(**params)
    if model_id == "fhn":
        valid = {f.name for f in fields(FhnParams)}
        unknown = set(params) - valid
        if unknown:
            raise ValueError(f"unknown fhn parameters: {sorted(unknown)}")
        return fhn_model(FhnParams(**params))
    if model_id == "ou":
        return ou_model(**params)
    if model_id == "brownian":
        return brownian_vlasov_model(**params)
    if model_id == "zero":
        return zero_model(**params)
    if model_id == "constant":
        return constant_drift_model(**params)
    raise ValueError(f"unknown model id {model_id!r}")
