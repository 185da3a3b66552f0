"""Analytic conditional flows around a single demonstration.

Two constructions live here:

* the stabilizing flow, whose velocity tracks the demonstration with a
  proportional correction ``-k (a - xi(t))`` and whose marginals are a
  Gaussian tube of width ``sigma0 * exp(-k t)``;
* the latent-variable flow on the extended state ``(a, z)``, where the
  action starts (almost) deterministically and all randomness enters
  through ``z(0) ~ N(0, I)``.

Every function accepts either a :class:`~streamflow.core.Trajectory` or
anything exposing ``eval(t)`` / ``deriv(t)`` with the same semantics.
Actions may carry leading batch dimensions; the trailing axis is the
action dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlowConfig:
    k: float = 5.0
    sigma0: float = 0.05

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError(f"stabilizing gain k must be >= 0, got {self.k}")
        # sigma0 == 0 is legal for inference-time configs
        if not self.sigma0 >= 0:
            raise ValueError(f"sigma0 must be >= 0, got {self.sigma0}")


@dataclass(frozen=True)
class LatentFlowConfig:
    sigma0: float = 1e-3
    sigma1: float = 0.1
    k: float = 5.0

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError(f"stabilizing gain k must be >= 0, got {self.k}")
        if not (self.sigma0 >= 0 and self.sigma1 > 0):
            raise ValueError("need sigma0 >= 0 and sigma1 > 0")
        if self.sigma1 < self.sigma0 * math.exp(-self.k):
            raise ValueError("sigma1 must be >= sigma0 * exp(-k)")

    @property
    def sigma_r(self) -> float:
        return math.sqrt(max(self.sigma1**2 - self.sigma0**2 * math.exp(-2.0 * self.k), 0.0))


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be nonnegative")


@dataclass(frozen=True)
class Gaussian2:
    """Per-dimension 2x2 Gaussian over (a, z); ``mean`` is ``concat(a_mean, z_mean)``."""

    mean: np.ndarray
    cov11: float
    cov12: float
    cov22: float

    def __post_init__(self):
        if self.cov11 < 0 or self.cov22 < 0:
            raise ValueError("diagonal covariance entries must be nonnegative")
        if self.cov11 * self.cov22 - self.cov12**2 < -1e-12:
            raise ValueError("covariance is not positive semidefinite")

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.cov11, self.cov12], [self.cov12, self.cov22]])


def _check_dim(xi, a: np.ndarray) -> None:
    dim = getattr(xi, "dim", None)
    if dim is not None and a.shape[-1] != dim:
        raise ValueError(f"action has dimension {a.shape[-1]}, trajectory has {dim}")


def conditional_velocity(xi, a, t: float, cfg: FlowConfig) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    _check_dim(xi, a)
    return xi.deriv(t) - cfg.k * (a - xi.eval(t))


def conditional_marginal(xi, t: float, cfg: FlowConfig) -> Gaussian:
    return Gaussian(mean=np.asarray(xi.eval(t)), std=cfg.sigma0 * math.exp(-cfg.k * t))


def sample_conditional(xi, t: float, cfg: FlowConfig, rng: np.random.Generator, size=None) -> np.ndarray:
    g = conditional_marginal(xi, t, cfg)
    shape = g.mean.shape if size is None else (size, *g.mean.shape)
    return g.mean + g.std * rng.standard_normal(shape)


# --- latent-variable flow ------------------------------------------------


def _shrink(t, cfg: LatentFlowConfig):
    return 1.0 - (1.0 - cfg.sigma1) * t


def latent_flow_forward(xi, a0, z0, t: float, cfg: LatentFlowConfig):
    """Push an initial ``(a0, z0)`` to time ``t`` along the latent flow."""
    a0 = np.asarray(a0, dtype=np.float64)
    z0 = np.asarray(z0, dtype=np.float64)
    xt = xi.eval(t)
    a = xt + (a0 - xi.eval(0.0)) * math.exp(-cfg.k * t) + cfg.sigma_r * t * z0
    z = _shrink(t, cfg) * z0 + t * xt
    return a, z


def latent_flow_inverse(xi, a, z, t: float, cfg: LatentFlowConfig):
    a = np.asarray(a, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    xt = xi.eval(t)
    z0 = (z - t * xt) / _shrink(t, cfg)
    a0 = xi.eval(0.0) + (a - xt - cfg.sigma_r * t * z0) * math.exp(cfg.k * t)
    return a0, z0


def latent_conditional_velocity(xi, a, z, t: float, cfg: LatentFlowConfig):
    a = np.asarray(a, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_dim(xi, a)
    xt, dxt = xi.eval(t), xi.deriv(t)
    shrink = _shrink(t, cfg)
    z_err = z - t * xt
    va = dxt - cfg.k * (a - xt) + cfg.sigma_r * (1.0 + cfg.k * t) / shrink * z_err
    vz = xt + t * dxt - (1.0 - cfg.sigma1) / shrink * z_err
    return va, vz


def latent_joint(xi, t: float, cfg: LatentFlowConfig) -> Gaussian2:
    xt = np.asarray(xi.eval(t))
    shrink = _shrink(t, cfg)
    sr = cfg.sigma_r
    return Gaussian2(
        mean=np.concatenate([xt, t * xt]),
        cov11=cfg.sigma0**2 * math.exp(-2.0 * cfg.k * t) + sr**2 * t**2,
        cov12=sr * t * shrink,
        cov22=shrink**2,
    )


def sample_latent_joint(xi, t: float, cfg: LatentFlowConfig, rng: np.random.Generator, size=None):
    """Draw ``(a, z)`` from the per-timestep joint by factoring its 2x2 covariance."""
    g = latent_joint(xi, t, cfg)
    d = g.mean.shape[0] // 2
    shape = (d,) if size is None else (size, d)
    e1 = rng.standard_normal(shape)
    e2 = rng.standard_normal(shape)
    l11 = math.sqrt(g.cov11)
    if l11 > 0:
        l21 = g.cov12 / l11
        l22 = math.sqrt(max(g.cov22 - l21**2, 0.0))
    else:
        l21, l22 = 0.0, math.sqrt(g.cov22)
    a = g.mean[:d] + l11 * e1
    z = g.mean[d:] + l21 * e1 + l22 * e2
    return a, z
