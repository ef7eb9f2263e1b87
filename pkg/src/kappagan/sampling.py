"""Wrapped normal distribution on the stereographic model.

A draw ``v ~ N(0, sigma^2 I)`` is read as a tangent vector at ``mu`` in
orthonormal coordinates (Euclidean coordinates divided by the conformal
factor) and pushed through ``exp_mu``. Its geodesic distance from ``mu`` is
therefore exactly ``|v|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import geometry


@dataclass
class WrappedNormalParams:
    mu: torch.Tensor
    sigma: torch.Tensor | float
    kappa: float

    def __post_init__(self):
        self.mu = geometry.check_point(self.mu, self.kappa)
        sigma = torch.as_tensor(self.sigma, dtype=geometry.DTYPE)
        if not torch.isfinite(sigma).all() or bool((sigma < 0).any()):
            raise ValueError("sigma must be finite and non-negative")


def standard_noise(rng: np.random.Generator, shape) -> torch.Tensor:
    """Standard normal draws from a numpy generator, so one rng stream drives a whole run."""
    return torch.from_numpy(rng.standard_normal(shape))


def reparameterize(mu: torch.Tensor, sigma, eps: torch.Tensor, kappa: float) -> torch.Tensor:
    """``exp_mu(sigma * eps / lambda_mu)``; differentiable in ``mu`` and ``sigma``."""
    v = sigma * eps
    lam = geometry.conformal_factor(mu, kappa, keepdim=True)
    return geometry.exp_map(mu, v / lam, kappa)


def wrapped_normal_sample(params: WrappedNormalParams, rng: np.random.Generator,
                          n: int | None = None) -> torch.Tensor:
    shape = params.mu.shape if n is None else (n, *params.mu.shape)
    eps = standard_noise(rng, shape)
    return reparameterize(params.mu, params.sigma, eps, params.kappa)


def _log_volume_ratio(r: torch.Tensor, kappa: float, dim: int) -> torch.Tensor:
    # log (sqrt|k| r / sinh(sqrt|k| r))^(d-1), sin for k > 0; -> 0 as r -> 0
    k = geometry._effective(kappa)
    if k == 0 or dim == 1:
        return torch.zeros_like(r)
    s = math.sqrt(abs(k)) * r
    small = s < 1e-6
    s_safe = torch.where(small, torch.ones_like(s), s)
    if k < 0:
        val = torch.log(s_safe / torch.sinh(s_safe))
        series = -s * s / 6
    else:
        val = torch.log(s_safe / torch.sin(s_safe))
        series = s * s / 6
    return (dim - 1) * torch.where(small, series, val)


def wrapped_normal_log_density(z, params: WrappedNormalParams) -> torch.Tensor:
    """Log density with respect to the Riemannian volume of the model."""
    k = params.kappa
    z = geometry.check_point(z, k)
    mu = params.mu
    dim = mu.shape[-1]
    sigma = torch.as_tensor(params.sigma, dtype=geometry.DTYPE)
    v = geometry.conformal_factor(mu, k, keepdim=True) * geometry.log_map(mu, z, k)
    log_gauss = (-0.5 * (v / sigma) ** 2 - torch.log(sigma) - 0.5 * math.log(2 * math.pi)).sum(-1)
    r = geometry.distance(mu, z, k)
    return log_gauss + _log_volume_ratio(r, k, dim)
