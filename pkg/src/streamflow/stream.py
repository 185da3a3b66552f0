"""Streaming execution: chunk integration and receding-horizon rollouts.

Each integration step evaluates the learned field once and hands the new
action to a sink before the next evaluation starts, so a controller can
execute actions while the flow is still being integrated.
"""

from __future__ import annotations

import csv
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from streamflow.core import ChunkParams, ObservationHistory
from streamflow.flows import FlowConfig, LatentFlowConfig
from streamflow.net import Checkpoint, NetworkParams, net_forward

log = logging.getLogger(__name__)

PLAIN, LATENT = "plain", "latent"


class NonFiniteVelocityError(RuntimeError):
    pass


@dataclass
class VelocityModel:
    """A trained field ``v(a, t | h)`` together with the metadata it was trained under.

    For the latent variant the network state is ``concat(a, z)`` and the
    output is ``concat(v_a, v_z)``.
    """

    params: NetworkParams
    flow: FlowConfig | LatentFlowConfig
    action_dim: int
    obs_dim: int
    history_len: int
    variant: str = PLAIN
    loss_curve: list[float] = field(default_factory=list, repr=False)
    n_evals: int = field(default=0, compare=False)

    def __post_init__(self):
        want = self.action_dim * (2 if self.variant == LATENT else 1)
        dims = self.params.dims
        if dims.state_dim != want or dims.out_dim != want:
            raise ValueError(f"network state/out dims {dims.state_dim}/{dims.out_dim} != {want}")
        if dims.cond_dim != self.history_len * self.obs_dim:
            raise ValueError("network conditioning width does not match history_len * obs_dim")

    @property
    def state_dim(self) -> int:
        return self.params.dims.state_dim

    def velocity(self, state, t, h) -> np.ndarray:
        """One network evaluation (counted), batched over leading axis of ``state``."""
        self.n_evals += 1
        return net_forward(self.params, state, t, h)

    def to_checkpoint(self) -> Checkpoint:
        flow = {"k": self.flow.k, "sigma0": self.flow.sigma0}
        if isinstance(self.flow, LatentFlowConfig):
            flow["sigma1"] = self.flow.sigma1
        cfg = {
            "flow": flow,
            "action_dim": self.action_dim,
            "obs_dim": self.obs_dim,
            "history_len": self.history_len,
        }
        return Checkpoint(self.variant, self.params, cfg)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "VelocityModel":
        c = ckpt.config
        if ckpt.variant == LATENT:
            flow = LatentFlowConfig(**c["flow"])
        elif ckpt.variant == PLAIN:
            flow = FlowConfig(**c["flow"])
        else:
            raise ValueError(f"checkpoint variant {ckpt.variant!r} is not a streaming policy")
        return cls(ckpt.params, flow, c["action_dim"], c["obs_dim"], c["history_len"], ckpt.variant)


def _as_flat_history(h) -> np.ndarray:
    if isinstance(h, ObservationHistory):
        return h.flat()
    return np.asarray(h, dtype=np.float64).reshape(-1)


def stream_chunk(model: VelocityModel, h_chunk, a_init, chunk: ChunkParams, z_init=None):
    """Generator over one chunk: yields ``(i, t_i, action_i)``.

    ``action_i`` is the Euler state after step ``i``, at flow time
    ``(i + 1) * dt``. The history is frozen for the whole chunk. For the
    latent variant ``z_init`` seeds the latent coordinate (zeros if omitted).
    """
    h = _as_flat_history(h_chunk)
    a = np.array(a_init, dtype=np.float64)
    if a.shape[-1] != model.action_dim:
        raise ValueError(f"a_init has dimension {a.shape[-1]}, model expects {model.action_dim}")
    d = model.action_dim
    state = a
    if model.variant == LATENT:
        z = np.zeros_like(a) if z_init is None else np.asarray(z_init, dtype=np.float64)
        state = np.concatenate([a, z], axis=-1)
    dt = chunk.dt
    for i in range(chunk.n_steps):
        t = i * dt
        v = model.velocity(state, t, h)
        if not np.all(np.isfinite(v)):
            raise NonFiniteVelocityError(f"non-finite velocity at step {i} (t={t:.6g})")
        state = state + v * dt
        yield i, (i + 1) * dt, state[..., :d].copy()


def integrate_chunk(model: VelocityModel, h_chunk, a_init, chunk: ChunkParams, sink=None, z_init=None) -> list[np.ndarray]:
    """Integrate one chunk, calling ``sink(i, action)`` as soon as each action exists."""
    actions = []
    for i, _, a in stream_chunk(model, h_chunk, a_init, chunk, z_init=z_init):
        if sink is not None:
            sink(i, a)
        actions.append(a)
    return actions


def sample_trajectories(
    model: VelocityModel,
    h,
    a_init,
    sigma0_test: float,
    n: int,
    dt: float,
    rng: np.random.Generator | None = None,
    return_latent: bool = False,
):
    """Integrate the full horizon t in [0, 1] for ``n`` samples at once.

    ``a_init`` is either one action (shared start) or an (n, d) array of
    per-sample starts. Returns an array (n, round(1/dt) + 1, d) of actions
    on the grid ``t = 0, dt, ..., 1``; with ``return_latent`` the latent
    path is returned too.

    The plain variant draws ``a0 ~ N(a_init, sigma0_test^2)``. The latent
    variant starts ``a`` exactly at ``a_init`` and draws ``z0 ~ N(0, I)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    steps = int(round(1.0 / dt))
    if abs(steps * dt - 1.0) > 1e-9:
        raise ValueError("1/dt must be an integer")
    rng = np.random.default_rng(0) if rng is None else rng
    d = model.action_dim
    a0 = np.broadcast_to(np.asarray(a_init, dtype=np.float64), (n, d)).copy()
    hflat = _as_flat_history(h)
    if model.variant == LATENT:
        z0 = rng.standard_normal((n, d))
        state = np.concatenate([a0, z0], axis=1)
    else:
        if sigma0_test > 0:
            a0 = a0 + sigma0_test * rng.standard_normal((n, d))
        state = a0
    path = np.empty((n, steps + 1, state.shape[1]))
    path[:, 0] = state
    for i in range(steps):
        state = state + model.velocity(state, i * dt, hflat) * dt
        path[:, i + 1] = state
    if return_latent:
        return path[:, :, :d], path[:, :, d:]
    return path[:, :, :d]


# --- receding-horizon execution -----------------------------------------


class Env(Protocol):
    action_dim: int
    obs_dim: int

    def reset(self) -> np.ndarray: ...

    def execute(self, action: np.ndarray) -> np.ndarray: ...

    def measured_state(self) -> np.ndarray: ...

    @property
    def done(self) -> bool: ...


class EnvFault(RuntimeError):
    """Raised by an environment when it cannot continue (e.g. left the workspace)."""


@dataclass
class StepRecord:
    step: int
    chunk: int
    t: float
    action: np.ndarray
    obs: np.ndarray
    wall_ns: int


@dataclass
class RolloutRecord:
    steps: list[StepRecord] = field(default_factory=list)
    chunk_starts: list[int] = field(default_factory=list)
    chunk_inits: list[np.ndarray] = field(default_factory=list)
    failed: bool = False
    failure: str = ""
    score: float | None = None

    @property
    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps])

    @property
    def observations(self) -> np.ndarray:
        return np.array([s.obs for s in self.steps])


def run_receding_horizon(
    model: VelocityModel,
    env: Env,
    chunk: ChunkParams,
    init_mode: str = "action_imitation",
    max_steps: int = 200,
    threaded: bool = False,
    rng: np.random.Generator | None = None,
) -> RolloutRecord:
    """Run chunks until the env is done or ``max_steps`` actions were executed.

    ``init_mode`` chooses where each chunk's integration starts:
    ``"action_imitation"`` continues from the last emitted action,
    ``"state_imitation"`` restarts from the env's measured state. The latent
    variant draws a fresh ``z0 ~ N(0, I)`` per chunk from ``rng``.

    With ``threaded=True`` the integrator runs in a producer thread that
    feeds a queue bounded at one chunk; the executor consumes in order.
    """
    if init_mode not in ("action_imitation", "state_imitation"):
        raise ValueError(f"unknown init_mode {init_mode!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    rec = RolloutRecord()
    obs = np.atleast_1d(env.reset())
    recent = [obs]
    a = np.atleast_1d(np.asarray(env.measured_state(), dtype=np.float64)).copy()
    step = 0
    chunk_idx = 0
    try:
        while step < max_steps and not env.done:
            h_chunk = ObservationHistory.from_recent(recent, model.history_len)
            if init_mode == "state_imitation":
                a = np.atleast_1d(np.asarray(env.measured_state(), dtype=np.float64)).copy()
            z0 = rng.standard_normal(model.action_dim) if model.variant == LATENT else None
            rec.chunk_starts.append(step)
            rec.chunk_inits.append(a.copy())
            actions = _chunk_actions(model, h_chunk, a, chunk, z0, threaded)
            for i, t, act in actions:
                obs = np.atleast_1d(env.execute(act))
                recent.append(obs)
                rec.steps.append(StepRecord(step, chunk_idx, t, act, obs, time.perf_counter_ns()))
                a = act
                step += 1
                if step >= max_steps or env.done:
                    break
            chunk_idx += 1
    except (EnvFault, NonFiniteVelocityError) as exc:
        rec.failed = True
        rec.failure = str(exc)
        log.warning("rollout aborted after %d steps: %s", step, exc)
    return rec


def _chunk_actions(model, h_chunk, a, chunk, z0, threaded):
    if not threaded:
        yield from stream_chunk(model, h_chunk, a, chunk, z_init=z0)
        return
    q: queue.Queue = queue.Queue(maxsize=chunk.n_steps)
    stop = threading.Event()
    done = object()

    def produce():
        try:
            for item in stream_chunk(model, h_chunk, a, chunk, z_init=z0):
                if stop.is_set():
                    break
                q.put(item)
            q.put(done)
        except Exception as exc:  # surfaced in the consumer
            q.put(exc)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    try:
        while True:
            item = q.get()
            if item is done:
                break
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()
        # drain so a blocked producer can exit
        while worker.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.01)


def write_rollout_csv(rec: RolloutRecord, path) -> None:
    """Columns: step, chunk, t, a0..a{d-1}, obs0..obs{m-1}, wall_ns."""
    if not rec.steps:
        header = ["step", "chunk", "t", "wall_ns"]
        rows = []
    else:
        d = len(rec.steps[0].action)
        m = len(rec.steps[0].obs)
        header = ["step", "chunk", "t"] + [f"a{i}" for i in range(d)] + [f"obs{i}" for i in range(m)] + ["wall_ns"]
        rows = [
            [s.step, s.chunk, repr(float(s.t))]
            + [repr(float(x)) for x in s.action]
            + [repr(float(x)) for x in s.obs]
            + [s.wall_ns]
            for s in rec.steps
        ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

