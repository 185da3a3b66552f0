"""Metrics and experiment harnesses.

Sampled trajectories are passed around as arrays of shape (n, S+1, d) on
the uniform flow-time grid ``0, 1/S, ..., 1`` (what
:func:`~streamflow.stream.sample_trajectories` returns); a list of
:class:`~streamflow.core.Trajectory` is accepted too.
"""

from __future__ import annotations

import csv
import gc
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from streamflow.baseline import BaselineModel, baseline_sample_batch
from streamflow.core import ChunkParams, Dataset, Trajectory
from streamflow.flows import FlowConfig, conditional_velocity
from streamflow.ode import rk4_path
from streamflow.stream import VelocityModel, run_receding_horizon, sample_trajectories, stream_chunk

# published Push-T latencies (state input): streaming policy vs a 100-step DDPM diffusion policy
REPORTED_LATENCY_MS = {"streaming": 3.5, "diffusion_ddpm100": 40.2}


def as_paths(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        arr = samples.astype(np.float64, copy=False)
    else:
        samples = list(samples)
        if samples and isinstance(samples[0], Trajectory):
            arr = np.stack([s.waypoints for s in samples])
        else:
            arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] == 0 or arr.shape[1] < 2:
        raise ValueError(f"expected samples of shape (n>=1, M>=2, d), got {arr.shape}")
    return arr


def paths_at(paths: np.ndarray, grid) -> np.ndarray:
    """Linearly interpolate uniform-grid paths at times ``grid``; returns (n, G, d)."""
    grid = np.asarray(grid, dtype=np.float64)
    m_last = paths.shape[1] - 1
    u = grid * m_last
    i = np.clip(np.floor(u).astype(np.int64), 0, m_last - 1)
    frac = (u - i)[None, :, None]
    out = paths[:, i] * (1.0 - frac) + paths[:, i + 1] * frac
    exact = np.abs(u - np.rint(u)) < 1e-9
    out[:, exact] = paths[:, np.rint(u[exact]).astype(np.int64)]
    return out


def w1_1d(x, y) -> float:
    """Wasserstein-1 distance between two 1-D empirical distributions.

    Integrates ``|F^-1(q) - G^-1(q)|`` over the merged quantile breakpoints;
    for equal sizes this is the mean absolute difference of sorted samples.
    """
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    y = np.sort(np.asarray(y, dtype=np.float64).ravel())
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample set")
    if x.size == y.size:
        return float(np.mean(np.abs(x - y)))
    qs = np.union1d(np.arange(1, x.size + 1) / x.size, np.arange(1, y.size + 1) / y.size)
    qs[-1] = 1.0
    widths = np.diff(np.concatenate([[0.0], qs]))
    mids = qs - 0.5 * widths
    xi = np.minimum((mids * x.size).astype(np.int64), x.size - 1)
    yi = np.minimum((mids * y.size).astype(np.int64), y.size - 1)
    return float(np.sum(widths * np.abs(x[xi] - y[yi])))


@dataclass
class MarginalReport:
    grid: np.ndarray
    w1: np.ndarray  # (G, d)
    sample_mean: np.ndarray
    sample_std: np.ndarray
    ref_mean: np.ndarray
    ref_std: np.ndarray
    samples: np.ndarray | None = field(default=None, repr=False)  # (n, S+1, d)
    reference: np.ndarray | None = field(default=None, repr=False)  # (N, G, d)

    @property
    def mean_w1(self) -> float:
        return float(np.mean(self.w1))

    @property
    def max_w1(self) -> float:
        return float(np.max(self.w1))

    def to_csv(self, path) -> None:
        d = self.w1.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["t"]
            for j in range(d):
                head += [f"w1_{j}", f"sample_mean_{j}", f"sample_std_{j}", f"ref_mean_{j}", f"ref_std_{j}"]
            w.writerow(head)
            for g, t in enumerate(self.grid):
                row = [repr(float(t))]
                for j in range(d):
                    row += [
                        repr(float(v))
                        for v in (self.w1[g, j], self.sample_mean[g, j], self.sample_std[g, j], self.ref_mean[g, j], self.ref_std[g, j])
                    ]
                w.writerow(row)


def reference_paths(reference, grid) -> np.ndarray:
    if isinstance(reference, Dataset):
        return np.stack([d.trajectory.eval(np.asarray(grid)) for d in reference.demos])
    return paths_at(as_paths(reference), grid)


def w1_per_timestep(samples, reference, grid=None) -> MarginalReport:
    """Per-time, per-dimension W1 between sampled actions and reference marginals.

    ``reference`` is a Dataset (its demos evaluated on the grid) or another
    set of paths. Default grid: 17 uniform points.
    """
    grid = np.linspace(0.0, 1.0, 17) if grid is None else np.asarray(grid, dtype=np.float64)
    paths = as_paths(samples)
    at = paths_at(paths, grid)
    ref = reference_paths(reference, grid)
    if ref.shape[0] == 0:
        raise ValueError("empty reference")
    g, d = len(grid), at.shape[2]
    w1 = np.empty((g, d))
    for i in range(g):
        for j in range(d):
            w1[i, j] = w1_1d(at[:, i, j], ref[:, i, j])
    return MarginalReport(grid, w1, at.mean(0), at.std(0), ref.mean(0), ref.std(0), paths, ref)


def sign_mode(path: np.ndarray) -> int:
    """Default mode label: 0 if the first action coordinate ends >= 0, else 1."""
    return 0 if path[-1, 0] >= 0 else 1


def mode_coverage(samples, split_fn: Callable[[np.ndarray], int] = sign_mode, n_modes: int = 2) -> np.ndarray:
    paths = as_paths(samples)
    labels = np.array([split_fn(p) for p in paths])
    counts = np.bincount(labels, minlength=n_modes).astype(np.float64)
    return counts / counts.sum()


def sign_consistency(samples, t_range=(0.1, 1.0), deadband: float = 0.02) -> float:
    """Fraction of samples whose first coordinate never changes sign on ``t_range``.

    Values within ``deadband`` of zero carry no sign: every sample of the
    crossing datasets is within numerical noise of zero at the crossing.
    """
    paths = as_paths(samples)
    t = np.linspace(0.0, 1.0, paths.shape[1])
    sel = (t >= t_range[0] - 1e-12) & (t <= t_range[1] + 1e-12)
    a = paths[:, sel, 0]
    pos = np.any(a > deadband, axis=1)
    neg = np.any(a < -deadband, axis=1)
    return float(np.mean(~(pos & neg)))


SHAPES = ("S", "mirrored-S", "3", "mirrored-3")


def shape_classes(samples, probe_times=(0.25, 0.75)) -> dict[str, int]:
    """Classify 1-D paths by the sign of a(t) at two probe times.

    For the intersecting-S data the demos are (+, -) and (-, +); the two
    compositions that never cross are (+, +) and (-, -).
    """
    paths = as_paths(samples)
    at = paths_at(paths, probe_times)[:, :, 0]
    first, second = at[:, 0] >= 0, at[:, 1] >= 0
    return {
        "S": int(np.sum(first & ~second)),
        "mirrored-S": int(np.sum(~first & second)),
        "3": int(np.sum(first & second)),
        "mirrored-3": int(np.sum(~first & ~second)),
    }


# --- stabilization -------------------------------------------------------


@dataclass
class AblationResult:
    err_k: float
    err_k0: float

    @property
    def ratio(self) -> float:
        return self.err_k / self.err_k0 if self.err_k0 > 0 else math.inf


def stabilization_ablation(model_k: VelocityModel, model_k0: VelocityModel, ds: Dataset, perturb: float, dt: float = 1 / 64) -> AblationResult:
    """Terminal error of both models started ``perturb`` off the first demo's start."""
    demo = ds.demos[0]
    xi = demo.trajectory
    a0 = xi.eval(0.0) + perturb
    errs = []
    for m in (model_k, model_k0):
        path = sample_trajectories(m, demo.history, a0, 0.0, 1, dt)
        errs.append(float(np.linalg.norm(path[0, -1] - xi.eval(1.0))))
    return AblationResult(*errs)


def analytic_ablation(xi, k: float, perturb: float, n_steps: int = 1000) -> AblationResult:
    """Same experiment with the exact conditional fields, integrated by RK4."""
    a0 = xi.eval(0.0) + perturb
    errs = []
    for gain in (k, 0.0):
        cfg = FlowConfig(k=gain, sigma0=0.0)
        end = rk4_path(lambda a, t: conditional_velocity(xi, a, min(t, 1.0), cfg), a0, 0.0, 1.0, n_steps, record_at=[n_steps])
        errs.append(float(np.linalg.norm(end[n_steps] - xi.eval(1.0))))
    return AblationResult(*errs)


# --- constraints ---------------------------------------------------------


@dataclass
class ConvexityReport:
    n_probes: int
    n_in_tube: int
    frac_outside_hull: float
    frac_outside_bound: float | None
    max_excess: float


def convexity_check(
    model: VelocityModel,
    ds: Dataset,
    eps: float = 0.1,
    bound: tuple[float, float] | None = None,
    n_probes: int = 512,
    tube_sigmas: float = 3.0,
    dt: float = 1 / 64,
    seed: int = 0,
) -> ConvexityReport:
    """Check learned velocities against the per-time hull of demo velocities.

    Probe points come from the model's own samples started at the demos'
    initial actions with the training ``sigma0``. Probes farther than
    ``tube_sigmas`` tube widths from every demo are dropped: the property
    only holds on the data support. The hull at time t is
    ``[min xi'(t) - eps, max xi'(t) + eps]``; ``bound`` optionally adds a
    fixed interval ``[lo - eps, hi + eps]``.
    """
    if model.flow.k > 0.5:
        raise ValueError("convexity only holds for small k (<= 0.5)")
    rng = np.random.default_rng(seed)
    demo0 = ds.demos[0]
    hist = demo0.history
    starts = np.stack([d.trajectory.eval(0.0) for d in ds.demos])
    pick = rng.integers(len(ds), size=n_probes)
    paths = sample_trajectories(model, hist, starts[pick], model.flow.sigma0, n_probes, dt, rng)
    steps = paths.shape[1] - 1
    ti = rng.integers(0, steps, size=n_probes)
    t = ti / steps
    a = paths[np.arange(n_probes), ti]
    outside_hull = []
    outside_bound = []
    excess = []
    keep_a, keep_t = [], []
    for p in range(n_probes):
        pos = np.stack([d.trajectory.eval(t[p]) for d in ds.demos])
        radius = tube_sigmas * model.flow.sigma0 * math.exp(-model.flow.k * t[p])
        if np.min(np.linalg.norm(pos - a[p], axis=1)) <= radius:
            keep_a.append(a[p])
            keep_t.append(t[p])
    if not keep_a:
        return ConvexityReport(n_probes, 0, 0.0, None if bound is None else 0.0, 0.0)
    for ap, tp in zip(keep_a, keep_t):
        v = model.velocity(ap, tp, hist)
        vel = np.stack([d.trajectory.deriv(tp) for d in ds.demos])
        lo, hi = vel.min(0) - eps, vel.max(0) + eps
        over = np.maximum(np.maximum(lo - v, v - hi), 0.0)
        outside_hull.append(bool(np.any(over > 0)))
        excess.append(float(np.max(over)))
        if bound is not None:
            outside_bound.append(bool(np.any((v < bound[0] - eps) | (v > bound[1] + eps))))
    return ConvexityReport(
        n_probes=n_probes,
        n_in_tube=len(keep_a),
        frac_outside_hull=float(np.mean(outside_hull)),
        frac_outside_bound=None if bound is None else float(np.mean(outside_bound)),
        max_excess=float(np.max(excess)),
    )


def position_violation(samples, lo: float, hi: float, margin: float) -> float:
    """Fraction of all sampled actions outside ``[lo - margin, hi + margin]``."""
    a = as_paths(samples)
    return float(np.mean((a < lo - margin) | (a > hi + margin)))


# --- latency -------------------------------------------------------------


@dataclass
class LatencyReport:
    stream_ttfa_evals: int
    baseline_ttfa_evals: int
    stream_ttfa_ns: int
    baseline_ttfa_ns: int
    stream_per_action_ns: float
    baseline_per_action_ns: float
    stream_chunk_ns: float
    baseline_chunk_ns: float
    actions_per_chunk: int
    n_actions: int
    reported_ms: dict = field(default_factory=lambda: dict(REPORTED_LATENCY_MS))

    @property
    def eval_ratio(self) -> float:
        return self.baseline_ttfa_evals / self.stream_ttfa_evals

    @property
    def ttfa_wall_ratio(self) -> float:
        return self.baseline_ttfa_ns / max(self.stream_ttfa_ns, 1)

    def rows(self) -> list[tuple[str, str, str]]:
        return [
            ("ttfa_evals", str(self.stream_ttfa_evals), str(self.baseline_ttfa_evals)),
            ("actions_per_chunk", str(self.actions_per_chunk), str(self.actions_per_chunk)),
            ("ttfa_wall_ns", str(self.stream_ttfa_ns), str(self.baseline_ttfa_ns)),
            ("per_action_wall_ns", f"{self.stream_per_action_ns:.1f}", f"{self.baseline_per_action_ns:.1f}"),
            ("chunk_wall_ns", f"{self.stream_chunk_ns:.1f}", f"{self.baseline_chunk_ns:.1f}"),
            ("reported_latency_ms", str(self.reported_ms["streaming"]), str(self.reported_ms["diffusion_ddpm100"])),
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "streaming", "baseline"])
            w.writerows(self.rows())


TTFA_SAMPLES = 20


def latency_bench(
    stream_model: VelocityModel,
    baseline_model: BaselineModel,
    chunk: ChunkParams,
    m_baseline: int = 10,
    h=None,
    a_init=None,
    n_actions: int = 1000,
    repeats: int = 5,
    seed: int = 0,
) -> LatencyReport:
    """Time-to-first-action (network evaluations and wall time) and per-action cost.

    The baseline executes the same fraction of its horizon per chunk as the
    streaming policy, so its per-action cost is one full sampling run
    amortized over that many actions. Wall times are the best of
    ``repeats`` runs (``TTFA_SAMPLES`` single calls each for time to first action), with the garbage collector paused.
    """
    if h is None:
        h = np.zeros(stream_model.history_len * stream_model.obs_dim)
    if a_init is None:
        a_init = np.zeros(stream_model.action_dim)
    rng = np.random.default_rng(seed)
    per_chunk = chunk.n_steps
    base_exec = max(1, int(round(baseline_model.horizon * chunk.t_chunk / chunk.t_pred)))

    # evaluation counts
    before = stream_model.n_evals
    next(stream_chunk(stream_model, h, a_init, chunk))
    stream_evals = stream_model.n_evals - before
    before = baseline_model.n_evals
    baseline_sample_batch(baseline_model, h, m_baseline, rng)
    base_evals = baseline_model.n_evals - before

    s_ttfa, b_ttfa, s_act, b_act, s_chunk, b_chunk = [], [], [], [], [], []
    n_chunks_s = math.ceil(n_actions / per_chunk)
    n_chunks_b = math.ceil(n_actions / base_exec)
    # collector pauses would land on arbitrary single-call timings
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            for _ in range(TTFA_SAMPLES):
                t0 = time.perf_counter_ns()
                next(stream_chunk(stream_model, h, a_init, chunk))
                s_ttfa.append(time.perf_counter_ns() - t0)

                t0 = time.perf_counter_ns()
                baseline_sample_batch(baseline_model, h, m_baseline, rng)
                b_ttfa.append(time.perf_counter_ns() - t0)

            count = 0
            a = np.asarray(a_init, dtype=np.float64)
            t0 = time.perf_counter_ns()
            for _ in range(n_chunks_s):
                for _, _, a in stream_chunk(stream_model, h, a, chunk):
                    count += 1
            elapsed = time.perf_counter_ns() - t0
            s_act.append(elapsed / count)
            s_chunk.append(elapsed / n_chunks_s)

            t0 = time.perf_counter_ns()
            for _ in range(n_chunks_b):
                baseline_sample_batch(baseline_model, h, m_baseline, rng)
            elapsed = time.perf_counter_ns() - t0
            b_act.append(elapsed / (n_chunks_b * base_exec))
            b_chunk.append(elapsed / n_chunks_b)
    finally:
        if gc_was_enabled:
            gc.enable()
    return LatencyReport(
        stream_ttfa_evals=stream_evals,
        baseline_ttfa_evals=base_evals,
        stream_ttfa_ns=int(min(s_ttfa)),
        baseline_ttfa_ns=int(min(b_ttfa)),
        stream_per_action_ns=float(min(s_act)),
        baseline_per_action_ns=float(min(b_act)),
        stream_chunk_ns=float(min(s_chunk)),
        baseline_chunk_ns=float(min(b_chunk)),
        actions_per_chunk=per_chunk,
        n_actions=n_chunks_s * per_chunk,
    )


# --- chunk sweep ---------------------------------------------------------


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SFP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SweepRow:
    chunk_size: int
    mean_score: float
    std_score: float
    n_rollouts: int
    n_failed: int
    relative: float = 0.0


def chunk_sweep(
    model: VelocityModel,
    env_factory: Callable[[np.random.Generator], object],
    chunk_sizes: Sequence[int] = (1, 2, 4, 8, 16),
    n_rollouts: int = 20,
    steps_per_pred: int = 16,
    t_pred: float = 0.8,
    init_mode: str = "state_imitation",
    max_steps: int = 10_000,
    seed: int = 0,
) -> list[SweepRow]:
    """Mean rollout score per chunk size, plus score relative to the best size.

    Rollout ``r`` of every chunk size uses the same env seed, so sizes are
    compared on identical disturbance sequences. Up to ``SFP_THREADS``
    rollouts run in parallel; results are reduced in rollout order.
    """
    rows = []
    for size in chunk_sizes:
        chunk = ChunkParams.from_counts(t_pred, steps_per_pred, size)

        def one(r, chunk=chunk):
            env = env_factory(np.random.default_rng([seed, r]))
            rec = run_receding_horizon(model, env, chunk, init_mode, max_steps, rng=np.random.default_rng([seed, r, 1]))
            return (0.0 if rec.failed else env.score()), rec.failed

        workers = _threads()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, range(n_rollouts)))
        else:
            results = [one(r) for r in range(n_rollouts)]
        scores = np.array([s for s, _ in results])
        rows.append(SweepRow(size, float(scores.mean()), float(scores.std()), n_rollouts, sum(f for _, f in results)))
    best = max(r.mean_score for r in rows)
    for r in rows:
        r.relative = r.mean_score - best
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chunk_size", "mean_score", "std_score", "relative_score", "n_rollouts", "n_failed"])
        for r in rows:
            w.writerow([r.chunk_size, repr(r.mean_score), repr(r.std_score), repr(r.relative), r.n_rollouts, r.n_failed])


def peak_chunk_size(rows: Sequence[SweepRow]) -> int:
    return next(r.chunk_size for r in rows if r.relative == 0.0)
