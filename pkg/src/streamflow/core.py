"""Domain types: trajectories, observation histories, datasets, chunking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

# |t*(M-1) - m| below this counts as sitting on grid point m
GRID_TOL = 1e-9


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


def _as_times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"trajectory time outside [0, 1]: {t!r}")
    return arr, scalar


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Action path on normalized time [0, 1], stored as uniform waypoints.

    ``waypoints`` has shape (M, d) with M >= 2; waypoint m sits at t = m/(M-1).
    """

    waypoints: np.ndarray

    def __post_init__(self):
        w = np.array(self.waypoints, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2 or w.shape[0] < 2 or w.shape[1] < 1:
            raise ValueError(f"waypoints must have shape (M>=2, d>=1), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("waypoints must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "waypoints", w)

    @property
    def num_points(self) -> int:
        return self.waypoints.shape[0]

    @property
    def dim(self) -> int:
        return self.waypoints.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_points)

    def eval(self, t):
        return traj_eval(self, t)

    def deriv(self, t):
        return traj_deriv(self, t)

    def resample(self, num_points: int) -> "Trajectory":
        return Trajectory(traj_eval(self, np.linspace(0.0, 1.0, num_points)))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.waypoints, other.waypoints)

    def __hash__(self):
        return hash(self.waypoints.tobytes())


class AnalyticTrajectory:
    """Closed-form path with a known derivative, used as a test oracle.

    Quacks like :class:`Trajectory` for the flow constructions.
    """

    def __init__(self, fn, dfn, dim: int = 1):
        self._fn = fn
        self._dfn = dfn
        self.dim = dim

    def _call(self, f, t):
        arr, scalar = _as_times(t)
        out = np.asarray(f(arr), dtype=np.float64).reshape(len(arr), self.dim)
        return out[0] if scalar else out

    def eval(self, t):
        return self._call(self._fn, t)

    def deriv(self, t):
        return self._call(self._dfn, t)

    def discretize(self, num_points: int) -> Trajectory:
        return Trajectory(self.eval(np.linspace(0.0, 1.0, num_points)))


def traj_eval(traj: Trajectory, t):
    """Piecewise-linear interpolation; exact at the waypoint times.

    Scalar ``t`` gives a (d,) vector, an array of times gives (n, d).
    """
    ts, scalar = _as_times(t)
    w = traj.waypoints
    u = ts * (w.shape[0] - 1)
    i = np.minimum(np.floor(u).astype(np.int64), w.shape[0] - 2)
    frac = (u - i)[:, None]
    out = w[i] * (1.0 - frac) + w[i + 1] * frac
    # exact at grid points, no rounding from the blend
    on_grid = np.abs(u - np.rint(u)) < GRID_TOL
    if np.any(on_grid):
        out[on_grid] = w[np.rint(u[on_grid]).astype(np.int64)]
    return out[0] if scalar else out


def _slopes(w: np.ndarray) -> np.ndarray:
    return np.diff(w, axis=-2) * (w.shape[-2] - 1)


def traj_deriv(traj: Trajectory, t):
    """Derivative of the interpolant.

    Segment slope inside a segment; central difference at interior grid
    points, one-sided at the two ends.
    """
    ts, scalar = _as_times(t)
    out = _deriv_from_waypoints(traj.waypoints[None], np.zeros(len(ts), dtype=np.int64), ts)
    return out[0] if scalar else out


def _deriv_from_waypoints(w: np.ndarray, idx: np.ndarray, ts: np.ndarray) -> np.ndarray:
    m_last = w.shape[1] - 1
    s = _slopes(w)  # (N, M-1, d)
    u = ts * m_last
    m = np.rint(u).astype(np.int64)
    seg = np.minimum(np.floor(u).astype(np.int64), m_last - 1)
    out = s[idx, seg].copy()
    on_grid = np.abs(u - m) < GRID_TOL
    interior = on_grid & (m > 0) & (m < m_last)
    if np.any(interior):
        ii, mm = idx[interior], m[interior]
        out[interior] = 0.5 * (s[ii, mm - 1] + s[ii, mm])
    left = on_grid & (m == 0)
    out[left] = s[idx[left], 0]
    right = on_grid & (m == m_last)
    out[right] = s[idx[right], m_last - 1]
    return out


def stack_eval(waypoints: np.ndarray, idx: np.ndarray, ts: np.ndarray):
    """Evaluate many stored trajectories at once.

    ``waypoints`` is (N, M, d); returns position and derivative of
    trajectory ``idx[b]`` at time ``ts[b]``, each of shape (B, d).
    """
    m_last = waypoints.shape[1] - 1
    u = ts * m_last
    i = np.minimum(np.floor(u).astype(np.int64), m_last - 1)
    frac = (u - i)[:, None]
    pos = waypoints[idx, i] * (1.0 - frac) + waypoints[idx, i + 1] * frac
    return pos, _deriv_from_waypoints(waypoints, idx, ts)


@dataclass(frozen=True, eq=False)
class ObservationHistory:
    """The last K observations, oldest first, shape (K, obs_dim)."""

    observations: np.ndarray

    def __post_init__(self):
        o = np.array(self.observations, dtype=np.float64)
        if o.ndim == 1:
            o = o[:, None]
        if o.ndim != 2 or o.shape[0] < 1:
            raise ValueError(f"observations must have shape (K, obs_dim), got {o.shape}")
        if not np.all(np.isfinite(o)):
            raise ValueError("observations must be finite")
        o.flags.writeable = False
        object.__setattr__(self, "observations", o)

    @classmethod
    def from_recent(cls, recent: Sequence[np.ndarray], history_len: int) -> "ObservationHistory":
        """Build from the most recent observations, padding by repeating the oldest."""
        recent = [np.atleast_1d(np.asarray(o, dtype=np.float64)) for o in recent]
        if not recent:
            raise ValueError("need at least one observation")
        recent = recent[-history_len:]
        pad = [recent[0]] * (history_len - len(recent))
        return cls(np.stack(pad + recent))

    @property
    def history_len(self) -> int:
        return self.observations.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    def flat(self) -> np.ndarray:
        return self.observations.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ObservationHistory):
            return NotImplemented
        return np.array_equal(self.observations, other.observations)


@dataclass(frozen=True)
class Demonstration:
    history: ObservationHistory
    trajectory: Trajectory


@dataclass(frozen=True)
class Dataset:
    demos: tuple[Demonstration, ...]
    action_dim: int
    obs_dim: int
    history_len: int = 2
    t_pred_seconds: float = 1.0
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "demos", tuple(self.demos))
        if not self.demos:
            raise ValueError("dataset must contain at least one demonstration")
        if self.action_dim < 1 or self.obs_dim < 1 or self.history_len < 1:
            raise ValueError("action_dim, obs_dim and history_len must be positive")
        if not (self.t_pred_seconds > 0 and math.isfinite(self.t_pred_seconds)):
            raise ValueError("t_pred_seconds must be positive")
        n_points = self.demos[0].trajectory.num_points
        for i, d in enumerate(self.demos):
            if d.trajectory.dim != self.action_dim:
                raise ValueError(f"demo {i}: action dim {d.trajectory.dim} != {self.action_dim}")
            if d.history.observations.shape != (self.history_len, self.obs_dim):
                raise ValueError(
                    f"demo {i}: history shape {d.history.observations.shape} "
                    f"!= ({self.history_len}, {self.obs_dim})"
                )
            if d.trajectory.num_points != n_points:
                raise ValueError(f"demo {i}: {d.trajectory.num_points} waypoints, expected {n_points}")

    def __len__(self):
        return len(self.demos)

    @property
    def num_points(self) -> int:
        return self.demos[0].trajectory.num_points

    def waypoint_array(self) -> np.ndarray:
        """All demo waypoints stacked, shape (N, M, d)."""
        return np.stack([d.trajectory.waypoints for d in self.demos])

    def history_array(self) -> np.ndarray:
        """Flattened histories, shape (N, K*obs_dim)."""
        return np.stack([d.history.flat() for d in self.demos])


@dataclass(frozen=True)
class ChunkParams:
    """Receding-horizon execution settings.

    ``t_pred`` and ``t_chunk`` are in seconds; ``dt`` is the normalized flow
    time step, so a chunk streams ``(t_chunk / t_pred) / dt`` actions.
    """

    t_pred: float
    t_chunk: float
    dt: float

    def __post_init__(self):
        if not (self.t_pred > 0 and self.t_chunk > 0 and self.dt > 0):
            raise ValueError("t_pred, t_chunk and dt must be positive")
        if self.t_chunk > self.t_pred * (1.0 + GRID_TOL):
            raise ValueError("t_chunk must not exceed t_pred")
        if self.dt > 1:
            raise ValueError("dt must be at most 1")
        ratio = (self.t_chunk / self.t_pred) / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"(t_chunk/t_pred)/dt = {ratio} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_chunk / self.t_pred) / self.dt))

    @classmethod
    def from_counts(cls, t_pred: float, steps_per_pred: int, chunk_steps: int) -> "ChunkParams":
        return cls(t_pred=t_pred, t_chunk=t_pred * chunk_steps / steps_per_pred, dt=1.0 / steps_per_pred)


# --- persistence ---------------------------------------------------------

_HEADER_KEYS = ("action_dim", "obs_dim", "history_len", "t_pred_seconds", "num_demos")


def dataset_save(ds: Dataset, path) -> None:
    """Write one JSON header line followed by one line per demonstration."""
    if len(ds.demos) == 0:
        raise ValueError("refusing to save an empty dataset")
    header = {
        "action_dim": ds.action_dim,
        "obs_dim": ds.obs_dim,
        "history_len": ds.history_len,
        "t_pred_seconds": ds.t_pred_seconds,
        "num_demos": len(ds.demos),
    }
    if ds.meta:
        header["meta"] = ds.meta
    lines = [json.dumps(header, sort_keys=True)]
    for d in ds.demos:
        rec = {
            "history": d.history.observations.tolist(),
            "waypoints": d.trajectory.waypoints.tolist(),
        }
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_matrix(value, lineno: int, name: str, cols: int) -> np.ndarray:
    where = f"line {lineno}: field '{name}'"
    if not isinstance(value, list) or not value:
        raise DatasetFormatError(f"{where}: expected a non-empty list of rows")
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{where}: {exc}") from None
    if arr.ndim != 2:
        raise DatasetFormatError(f"{where}: rows have inconsistent lengths")
    if arr.shape[1] != cols:
        raise DatasetFormatError(f"{where}: row length {arr.shape[1]} does not match header ({cols})")
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError(f"{where}: non-finite value")
    return arr


def dataset_load(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError("line 1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: header is not valid JSON ({exc.msg})") from None
    if not isinstance(header, dict):
        raise DatasetFormatError("line 1: header must be an object")
    for key in _HEADER_KEYS:
        if key not in header:
            raise DatasetFormatError(f"line 1: field '{key}' missing from header")
    for key in ("action_dim", "obs_dim", "history_len", "num_demos"):
        if not isinstance(header[key], int) or header[key] < 1:
            raise DatasetFormatError(f"line 1: field '{key}' must be a positive integer")
    demos = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DatasetFormatError(f"line {lineno}: record must be an object")
        for key in ("history", "waypoints"):
            if key not in rec:
                raise DatasetFormatError(f"line {lineno}: field '{key}' missing")
        hist = _parse_matrix(rec["history"], lineno, "history", header["obs_dim"])
        if hist.shape[0] != header["history_len"]:
            raise DatasetFormatError(
                f"line {lineno}: field 'history' has {hist.shape[0]} rows, header says {header['history_len']}"
            )
        wp = _parse_matrix(rec["waypoints"], lineno, "waypoints", header["action_dim"])
        if wp.shape[0] < 2:
            raise DatasetFormatError(f"line {lineno}: field 'waypoints' needs at least 2 rows")
        demos.append(Demonstration(ObservationHistory(hist), Trajectory(wp)))
    if len(demos) != header["num_demos"]:
        raise DatasetFormatError(
            f"line 1: field 'num_demos' is {header['num_demos']} but file has {len(demos)} records"
        )
    try:
        return Dataset(
            demos=tuple(demos),
            action_dim=header["action_dim"],
            obs_dim=header["obs_dim"],
            history_len=header["history_len"],
            t_pred_seconds=float(header["t_pred_seconds"]),
            meta=header.get("meta", {}),
        )
    except ValueError as exc:
        raise DatasetFormatError(f"line 1: {exc}") from None
