"""Conditional flow-matching training for streaming policies."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from streamflow.core import Dataset, Demonstration, stack_eval
from streamflow.flows import (
    FlowConfig,
    LatentFlowConfig,
    conditional_velocity,
    latent_conditional_velocity,
    sample_conditional,
    sample_latent_joint,
)
from streamflow.net import NetDims, OptimizerState, adam_step, net_init, net_loss_grad
from streamflow.stream import LATENT, PLAIN, VelocityModel

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


LR_SCHEDULES = ("constant", "cosine")


def lr_at(step: int, num_steps: int, lr: float, schedule: str) -> float:
    """Learning rate for ``step``; cosine decays to 1% of ``lr`` at the last step."""
    if schedule == "constant":
        return lr
    frac = step / max(num_steps - 1, 1)
    return lr * (0.01 + 0.99 * 0.5 * (1.0 + math.cos(math.pi * frac)))


@dataclass(frozen=True)
class TrainConfig:
    flow: FlowConfig | LatentFlowConfig = FlowConfig()
    batch_size: int = 256
    num_steps: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    variant: str = PLAIN
    hidden: tuple[int, ...] = (128, 128, 128)
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.variant not in (PLAIN, LATENT):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == LATENT and not isinstance(self.flow, LatentFlowConfig):
            raise ValueError("latent variant needs a LatentFlowConfig")
        if self.variant == PLAIN and not isinstance(self.flow, FlowConfig):
            raise ValueError("plain variant needs a FlowConfig")
        if self.variant == PLAIN and not self.flow.sigma0 > 0:
            raise ValueError("sigma0 must be positive for training")


def sample_cfm_target(demo: Demonstration, cfg: FlowConfig, rng: np.random.Generator):
    """One flow-matching regression example ``(a, t, h, v_target)`` for ``demo``."""
    xi = demo.trajectory
    t = float(rng.random())
    a = sample_conditional(xi, t, cfg, rng)
    return a, t, demo.history.flat(), conditional_velocity(xi, a, t, cfg)


def sample_cfm_target_latent(demo: Demonstration, cfg: LatentFlowConfig, rng: np.random.Generator):
    """Latent-variant example ``(a, z, t, h, va_target, vz_target)``."""
    xi = demo.trajectory
    t = float(rng.random())
    a, z = sample_latent_joint(xi, t, cfg, rng)
    va, vz = latent_conditional_velocity(xi, a, z, t, cfg)
    return a, z, t, demo.history.flat(), va, vz


def cfm_batch(waypoints, histories, idx, t, noise, cfg: FlowConfig):
    """Vectorized targets for demos ``idx`` at times ``t`` given standard-normal ``noise``.

    Returns ``(a, h, v_target)`` with ``a = xi(t) + sigma0 e^{-kt} noise``.
    """
    pos, vel = stack_eval(waypoints, idx, t)
    std = (cfg.sigma0 * np.exp(-cfg.k * t))[:, None]
    a = pos + std * noise
    return a, histories[idx], vel - cfg.k * (a - pos)


def cfm_batch_latent(waypoints, histories, idx, t, noise_a0, noise_z0, cfg: LatentFlowConfig):
    """Latent targets built by pushing ``(a0, z0)`` through the closed-form flow.

    ``a0 = xi(0) + sigma0 noise_a0`` and ``z0 = noise_z0``; the pushed
    ``(a, z)`` is distributed as the per-timestep joint.
    """
    pos, vel = stack_eval(waypoints, idx, t)
    tc = t[:, None]
    sr = cfg.sigma_r
    shrink = 1.0 - (1.0 - cfg.sigma1) * tc
    a = pos + cfg.sigma0 * noise_a0 * np.exp(-cfg.k * tc) + sr * tc * noise_z0
    z = shrink * noise_z0 + tc * pos
    z_err = z - tc * pos
    va = vel - cfg.k * (a - pos) + sr * (1.0 + cfg.k * tc) / shrink * z_err
    vz = pos + tc * vel - (1.0 - cfg.sigma1) / shrink * z_err
    return np.concatenate([a, z], axis=1), histories[idx], np.concatenate([va, vz], axis=1)


def _make_model(ds: Dataset, cfg: TrainConfig) -> VelocityModel:
    width = ds.action_dim * (2 if cfg.variant == LATENT else 1)
    dims = NetDims(width, ds.history_len * ds.obs_dim, width, cfg.hidden)
    params = net_init(cfg.seed, dims)
    return VelocityModel(params, cfg.flow, ds.action_dim, ds.obs_dim, ds.history_len, cfg.variant)


def train_policy(ds: Dataset, cfg: TrainConfig, log_every: int = 0) -> VelocityModel:
    """Adam on the conditional flow-matching loss.

    Each batch element draws its own demo uniformly with replacement, its
    own ``t ~ U[0, 1]`` and its own point in the conditional tube. The
    per-step batch loss is kept in ``model.loss_curve``.
    """
    model = _make_model(ds, cfg)
    wp = ds.waypoint_array()
    hist = ds.history_array()
    rng = np.random.default_rng(cfg.seed)
    params = model.params
    opt = OptimizerState.zeros(params)
    curve = []
    n, d, b = len(ds), ds.action_dim, cfg.batch_size
    for step in range(cfg.num_steps):
        idx = rng.integers(n, size=b)
        t = rng.random(b)
        if cfg.variant == LATENT:
            x, h, target = cfm_batch_latent(
                wp, hist, idx, t, rng.standard_normal((b, d)), rng.standard_normal((b, d)), cfg.flow
            )
        else:
            x, h, target = cfm_batch(wp, hist, idx, t, rng.standard_normal((b, d)), cfg.flow)
        loss, grads = net_loss_grad(params, x, t, h, target)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {step}; lower lr or check the data")
        params, opt = adam_step(params, opt, grads, lr_at(step, cfg.num_steps, cfg.lr, cfg.lr_schedule), cfg.beta1, cfg.beta2, cfg.eps)
        curve.append(loss)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.6g", step, loss)
    model.params = params
    model.loss_curve = curve
    return model


def write_loss_csv(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, loss in enumerate(curve):
            w.writerow([i, repr(float(loss))])
