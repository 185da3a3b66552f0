"""Trajectory-space flow-matching policy used as the non-streaming contrast.

The field lives on whole flattened trajectories (H waypoints x d dims) and
is trained with the linear-interpolant objective: ``x_s = (1-s) x0 + s x1``
with ``x0 ~ N(0, I)`` and target ``x1 - x0``. No action exists until all
integration steps have finished.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from streamflow.core import Dataset, ObservationHistory, Trajectory
from streamflow.net import Checkpoint, NetDims, NetworkParams, OptimizerState, adam_step, net_forward, net_init, net_loss_grad
from streamflow.train import TrainingDivergedError

BASELINE = "baseline"


@dataclass(frozen=True)
class BaselineConfig:
    horizon: int = 16
    batch_size: int = 256
    num_steps: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128, 128)

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.num_steps < 1 or self.batch_size < 1:
            raise ValueError("num_steps and batch_size must be >= 1")


@dataclass
class BaselineModel:
    params: NetworkParams
    horizon: int
    action_dim: int
    obs_dim: int
    history_len: int
    loss_curve: list[float] = field(default_factory=list, repr=False)
    n_evals: int = field(default=0, compare=False)

    def velocity(self, x, s, h) -> np.ndarray:
        self.n_evals += 1
        return net_forward(self.params, x, s, h)

    def to_checkpoint(self) -> Checkpoint:
        cfg = {
            "horizon": self.horizon,
            "action_dim": self.action_dim,
            "obs_dim": self.obs_dim,
            "history_len": self.history_len,
        }
        return Checkpoint(BASELINE, self.params, cfg)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "BaselineModel":
        if ckpt.variant != BASELINE:
            raise ValueError(f"checkpoint variant {ckpt.variant!r} is not a baseline")
        c = ckpt.config
        return cls(ckpt.params, c["horizon"], c["action_dim"], c["obs_dim"], c["history_len"])


def flatten_trajectories(ds: Dataset, horizon: int) -> np.ndarray:
    """Resample every demo to ``horizon`` waypoints and flatten to (N, horizon*d)."""
    return np.stack([d.trajectory.resample(horizon).waypoints.reshape(-1) for d in ds.demos])


def unflatten(vec: np.ndarray, horizon: int, dim: int) -> np.ndarray:
    return np.asarray(vec).reshape(*np.shape(vec)[:-1], horizon, dim)


def baseline_train(ds: Dataset, cfg: BaselineConfig = BaselineConfig()) -> BaselineModel:
    x1_all = flatten_trajectories(ds, cfg.horizon)
    hist = ds.history_array()
    width = x1_all.shape[1]
    dims = NetDims(width, ds.history_len * ds.obs_dim, width, cfg.hidden)
    params = net_init(cfg.seed, dims)
    opt = OptimizerState.zeros(params)
    rng = np.random.default_rng(cfg.seed)
    curve = []
    n, b = len(ds), cfg.batch_size
    for step in range(cfg.num_steps):
        idx = rng.integers(n, size=b)
        s = rng.random(b)
        x0 = rng.standard_normal((b, width))
        x1 = x1_all[idx]
        xs = (1.0 - s[:, None]) * x0 + s[:, None] * x1
        loss, grads = net_loss_grad(params, xs, s, hist[idx], x1 - x0)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {step}")
        params, opt = adam_step(params, opt, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        curve.append(loss)
    return BaselineModel(params, cfg.horizon, ds.action_dim, ds.obs_dim, ds.history_len, curve)


def baseline_sample_batch(model: BaselineModel, h, num_steps: int, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Euler-integrate ``n`` noise vectors over s in [0, 1]; returns (n, H, d)."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if isinstance(h, ObservationHistory):
        h = h.flat()
    width = model.horizon * model.action_dim
    x = rng.standard_normal((n, width))
    ds = 1.0 / num_steps
    for i in range(num_steps):
        x = x + model.velocity(x, i * ds, h) * ds
    return unflatten(x, model.horizon, model.action_dim)


def baseline_sample(model: BaselineModel, h, num_steps: int, rng: np.random.Generator) -> Trajectory:
    """One trajectory; only the final integration state is a valid output."""
    return Trajectory(baseline_sample_batch(model, h, num_steps, rng, 1)[0])
