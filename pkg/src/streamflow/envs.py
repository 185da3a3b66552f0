"""Toy demonstration generators and a PD-tracked point-mass task.

All generators are pure functions of the passed ``rng``. Toy observations
are the current position in action space, with a history of K=2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from streamflow.core import Dataset, Demonstration, ObservationHistory, Trajectory
from streamflow.stream import EnvFault

HISTORY_LEN = 2


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _balanced_signs(n: int, rng: np.random.Generator) -> np.ndarray:
    # each demo is +/- with probability 1/2, and the split is exactly even
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return rng.permutation(signs)


def _clipped_normal(rng, std, size=None):
    return np.clip(rng.normal(0.0, std, size), -3.0 * std, 3.0 * std) if std > 0 else np.zeros(size or ())


def _toy_dataset(paths, name: str, t_pred: float = 1.0, **meta) -> Dataset:
    demos = []
    for wp in paths:
        wp = np.asarray(wp, dtype=np.float64).reshape(len(wp), -1)
        hist = np.repeat(wp[:1], HISTORY_LEN, axis=0)
        demos.append(Demonstration(ObservationHistory(hist), Trajectory(wp)))
    d = demos[0].trajectory.dim
    return Dataset(tuple(demos), d, d, HISTORY_LEN, t_pred, meta={"generator": name, **meta})


def gen_bimodal_1d(n: int, rng: np.random.Generator, noise_std: float = 0.02, num_points: int = 33) -> Dataset:
    """Paths from 0 to +/-0.8 along a smoothstep, half of them in each direction.

    Each demo gets an endpoint jitter and a mid-path bump, both clipped at
    three standard deviations so endpoints stay within 0.8 +/- 3 noise_std.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    t = np.linspace(0.0, 1.0, num_points)
    paths = []
    for sign in _balanced_signs(n, rng):
        amp = 0.8 + _clipped_normal(rng, noise_std)
        bump = _clipped_normal(rng, noise_std)
        paths.append(sign * (amp * smoothstep(t) + bump * np.sin(math.pi * t)))
    return _toy_dataset(paths, "bimodal", noise_std=noise_std)


def gen_intersecting_s(
    n: int, rng: np.random.Generator, amplitude: float = 0.6, noise_std: float = 0.01, num_points: int = 65
) -> Dataset:
    """Equal mix of ``A sin(2 pi t)`` and its mirror image; both cross a=0 at t=0.5.

    Jitter scales the amplitude only, so every demo passes exactly through
    zero at t = 0 and t = 0.5.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    t = np.linspace(0.0, 1.0, num_points)
    base = np.sin(2.0 * math.pi * t)
    paths = [sign * (amplitude + _clipped_normal(rng, noise_std)) * base for sign in _balanced_signs(n, rng)]
    return _toy_dataset(paths, "intersecting_s", amplitude=amplitude, noise_std=noise_std)


def gen_velocity_bounded(n: int, rng: np.random.Generator, vmax: float = 1.0, num_points: int = 33) -> Dataset:
    """Paths ``b t + c sin(2 pi t) / (2 pi)`` with ``|b| + |c| <= vmax``, so ``|xi'| <= vmax``."""
    t = np.linspace(0.0, 1.0, num_points)
    paths = []
    for _ in range(n):
        b = rng.uniform(-vmax, vmax)
        rest = vmax - abs(b)
        c = rng.uniform(-rest, rest)
        paths.append(b * t + c * np.sin(2.0 * math.pi * t) / (2.0 * math.pi))
    return _toy_dataset(paths, "velocity_bounded", vmax=vmax)


def gen_position_bounded(n: int, rng: np.random.Generator, bound: float = 0.5, num_points: int = 33) -> Dataset:
    """Paths that run from 0 into the wall at +/-bound and then rest against it."""
    t = np.linspace(0.0, 1.0, num_points)
    paths = []
    for sign in _balanced_signs(n, rng):
        reach = rng.uniform(0.3, 0.7)
        paths.append(sign * bound * smoothstep(t / reach))
    return _toy_dataset(paths, "position_bounded", bound=bound)


def gen_line(n: int = 1, slope: float = 1.0, num_points: int = 33) -> Dataset:
    """``n`` copies of the straight line ``xi(t) = slope * t``."""
    t = np.linspace(0.0, 1.0, num_points)
    return _toy_dataset([slope * t] * n, "line", slope=slope)


# --- perfect-tracking toy env -------------------------------------------


class TrackingEnv:
    """Setpoint env whose state jumps exactly to each commanded action.

    ``obs_noise`` perturbs both observations and the measured state, which
    is what breaks ties at an unstable split under deterministic inference.
    """

    def __init__(self, start, max_steps: int, obs_noise: float = 0.0, rng: np.random.Generator | None = None):
        self.start = np.atleast_1d(np.asarray(start, dtype=np.float64))
        self.action_dim = self.obs_dim = len(self.start)
        self.max_steps = max_steps
        self.obs_noise = obs_noise
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.reset()

    def _noisy(self, x):
        if self.obs_noise > 0:
            return x + self.obs_noise * self.rng.standard_normal(x.shape)
        return x.copy()

    def reset(self) -> np.ndarray:
        self.state = self.start.copy()
        self.n_steps = 0
        self.executed: list[np.ndarray] = []
        self._measured = self._noisy(self.state)
        return self._measured

    def execute(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise EnvFault("non-finite action")
        self.state = a.copy()
        self.executed.append(self.state.copy())
        self.n_steps += 1
        self._measured = self._noisy(self.state)
        return self._measured

    def measured_state(self) -> np.ndarray:
        return self._measured

    @property
    def done(self) -> bool:
        return self.n_steps >= self.max_steps


# --- point mass ----------------------------------------------------------


@dataclass(frozen=True)
class PointMassConfig:
    start: tuple[float, float] = (0.0, 0.0)
    goals: tuple[tuple[float, float], ...] = ((-0.6, 0.6), (0.6, 0.6))
    goal_radius: float = 0.08
    diag: float = 2.0 * math.sqrt(2.0)  # diagonal of the [-1, 1]^2 workspace
    kp: float = 40.0
    kd: float = 8.0
    sim_hz: int = 100
    substeps: int = 5  # physics steps per action
    episode_steps: int = 60
    move_seconds: float = 2.5
    obs_noise: float = 0.0
    push_std: float = 0.0  # std of a random force held for one action period
    workspace: float = 2.0  # |position| beyond this is a fault

    @property
    def action_period(self) -> float:
        return self.substeps / self.sim_hz


@dataclass
class PointMassState:
    position: np.ndarray
    velocity: np.ndarray
    setpoint: np.ndarray
    goals: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))


class PointMassEnv:
    """Unit point mass in the plane, PD-tracking streamed position setpoints.

    Between two actions the setpoint ramps linearly from the previous action
    to the new one over one action period, with the ramp slope used as the
    velocity reference.
    """

    action_dim = 2
    obs_dim = 2

    def __init__(self, cfg: PointMassConfig = PointMassConfig(), rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.reset()

    def reset(self) -> np.ndarray:
        start = np.array(self.cfg.start, dtype=np.float64)
        self.state = PointMassState(start.copy(), np.zeros(2), start.copy(), np.array(self.cfg.goals, dtype=np.float64))
        self.n_steps = 0
        self.positions = [start.copy()]
        self._measured = self._noisy(start)
        return self._measured

    def _noisy(self, x):
        if self.cfg.obs_noise > 0:
            return x + self.cfg.obs_noise * self.rng.standard_normal(2)
        return x.copy()

    def execute(self, action) -> np.ndarray:
        target = np.asarray(action, dtype=np.float64)
        if target.shape != (2,) or not np.all(np.isfinite(target)):
            raise EnvFault(f"bad action {action!r}")
        cfg = self.cfg
        h = 1.0 / cfg.sim_hz
        s = self.state
        prev = s.setpoint
        v_ref = (target - prev) / cfg.action_period
        push = cfg.push_std * self.rng.standard_normal(2) if cfg.push_std > 0 else 0.0
        for j in range(1, cfg.substeps + 1):
            ref = prev + (target - prev) * (j / cfg.substeps)
            acc = cfg.kp * (ref - s.position) + cfg.kd * (v_ref - s.velocity) + push
            s.velocity = s.velocity + h * acc
            s.position = s.position + h * s.velocity
        s.setpoint = target.copy()
        self.n_steps += 1
        self.positions.append(s.position.copy())
        if np.max(np.abs(s.position)) > cfg.workspace:
            raise EnvFault(f"left the workspace at {s.position}")
        self._measured = self._noisy(s.position)
        return self._measured

    def measured_state(self) -> np.ndarray:
        return self._measured

    @property
    def done(self) -> bool:
        return self.n_steps >= self.cfg.episode_steps

    def score(self) -> float:
        return pointmass_rollout_score(self.state.position, self.cfg)


def pointmass_rollout_score(final_position, cfg: PointMassConfig = PointMassConfig()) -> float:
    """1 inside either goal disc, else ``1 - clamp(dist_to_nearest_goal / diag, 0, 1)``."""
    p = np.asarray(final_position, dtype=np.float64)
    if p.ndim == 2:  # executed positions; score the last one
        p = p[-1]
    dists = [float(np.linalg.norm(p - np.asarray(g))) for g in cfg.goals]
    dist = min(dists)
    if dist <= cfg.goal_radius:
        return 1.0
    return 1.0 - min(max(dist / cfg.diag, 0.0), 1.0)


def pointmass_demo_path(goal, cfg: PointMassConfig, start=None) -> np.ndarray:
    """Demo setpoints at every action boundary, shape (episode_steps + 1, 2)."""
    start = np.asarray(cfg.start if start is None else start, dtype=np.float64)
    tau = np.arange(cfg.episode_steps + 1) * cfg.action_period
    s = smoothstep(tau / cfg.move_seconds)[:, None]
    return start + (np.asarray(goal) - start) * s


def track_path(path: np.ndarray, cfg: PointMassConfig = PointMassConfig()) -> float:
    """Execute ``path[1:]`` open loop and return the max position error at action boundaries."""
    env = PointMassEnv(PointMassConfig(**{**cfg.__dict__, "obs_noise": 0.0, "push_std": 0.0}))
    env.state.position = path[0].copy()
    env.state.setpoint = path[0].copy()
    err = 0.0
    for target in path[1:]:
        env.execute(target)
        err = max(err, float(np.linalg.norm(env.state.position - target)))
    return err


def gen_pointmass(
    n: int,
    rng: np.random.Generator,
    cfg: PointMassConfig = PointMassConfig(),
    steps_per_pred: int = 16,
    goal_jitter: float = 0.02,
) -> Dataset:
    """Sliding-window demonstrations from ``n`` goal-reaching episodes.

    Every action boundary of every episode yields one (history, future)
    pair; the future covers ``steps_per_pred`` action periods (the
    prediction horizon) and holds the last setpoint past the episode end.
    """
    goals = np.array(cfg.goals, dtype=np.float64)
    demos = []
    choice = (np.arange(n) % len(goals))[rng.permutation(n)]
    for g_idx in choice:
        goal = goals[g_idx] + _clipped_normal(rng, goal_jitter, 2)
        path = pointmass_demo_path(goal, cfg)
        ext = np.concatenate([path, np.repeat(path[-1:], steps_per_pred, axis=0)])
        for j in range(cfg.episode_steps):
            hist = ext[[max(j - 1, 0), j]]
            demos.append(Demonstration(ObservationHistory(hist), Trajectory(ext[j : j + steps_per_pred + 1])))
    t_pred = steps_per_pred * cfg.action_period
    return Dataset(tuple(demos), 2, 2, HISTORY_LEN, t_pred, meta={"generator": "pointmass", "episodes": n})


GENERATORS = {
    "bimodal": gen_bimodal_1d,
    "intersecting": gen_intersecting_s,
    "velocity-bounded": gen_velocity_bounded,
    "position-bounded": gen_position_bounded,
    "pointmass": gen_pointmass,
}
