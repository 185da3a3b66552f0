"""Fully-connected velocity network with hand-written reverse-mode gradients.

Inputs are laid out as ``[state, time features, conditioning]`` where the
time features are the raw flow time plus sin/cos at two frequencies. Hidden
layers use tanh, the head is linear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from streamflow.core import ObservationHistory

N_TIME_FEATURES = 5


def time_features(t) -> np.ndarray:
    w1, w2 = math.pi, 2.0 * math.pi
    if isinstance(t, (float, int)):
        t = float(t)
        return np.array([[t, math.sin(w1 * t), math.cos(w1 * t), math.sin(w2 * t), math.cos(w2 * t)]])
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    return np.stack([t, np.sin(w1 * t), np.cos(w1 * t), np.sin(w2 * t), np.cos(w2 * t)], axis=-1)


@dataclass(frozen=True)
class NetDims:
    state_dim: int
    cond_dim: int
    out_dim: int
    hidden: tuple[int, ...] = (128, 128, 128)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.state_dim < 1 or self.out_dim < 1 or self.cond_dim < 0:
            raise ValueError("state_dim and out_dim must be positive, cond_dim nonnegative")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"zero-width layer in {self.hidden}")

    @property
    def input_dim(self) -> int:
        return self.state_dim + N_TIME_FEATURES + self.cond_dim

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.out_dim]


@dataclass
class NetworkParams:
    dims: NetDims
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.dims.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("layer count does not match dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: shapes {w.shape}, {b.shape} break the chain {sizes}")

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "NetworkParams":
        return NetworkParams(self.dims, list(arrays[0::2]), list(arrays[1::2]))

    def zeros_like(self) -> "NetworkParams":
        return self.with_arrays([np.zeros_like(x) for x in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.arrays()])

    def from_flat(self, vec: np.ndarray) -> "NetworkParams":
        out, pos = [], 0
        for x in self.arrays():
            out.append(np.array(vec[pos : pos + x.size], dtype=np.float64).reshape(x.shape))
            pos += x.size
        return self.with_arrays(out)

    @property
    def num_params(self) -> int:
        return sum(x.size for x in self.arrays())


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: NetworkParams) -> "OptimizerState":
        return cls([np.zeros_like(x) for x in params.arrays()], [np.zeros_like(x) for x in params.arrays()], 0)


def net_init(seed: int, dims: NetDims) -> NetworkParams:
    """Fan-in scaled uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases."""
    rng = np.random.default_rng(seed)
    sizes = dims.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(dims, weights, biases)


def build_inputs(dims: NetDims, state, t, cond) -> np.ndarray:
    if (
        isinstance(state, np.ndarray)
        and isinstance(cond, np.ndarray)
        and state.shape == (dims.state_dim,)
        and cond.shape == (dims.cond_dim,)
        and isinstance(t, (float, int))
    ):
        # single-state fast path used by the streaming loop
        return np.concatenate([state, time_features(t)[0], cond])[None, :]
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    n = state.shape[0]
    if state.shape[1] != dims.state_dim:
        raise ValueError(f"state has dimension {state.shape[1]}, network expects {dims.state_dim}")
    tf = time_features(t)
    if tf.shape[0] == 1 and n > 1:
        tf = np.broadcast_to(tf, (n, N_TIME_FEATURES))
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 1:
        cond = np.broadcast_to(cond, (n, cond.shape[0]))
    if cond.shape[-1] != dims.cond_dim:
        raise ValueError(f"conditioning has dimension {cond.shape[-1]}, network expects {dims.cond_dim}")
    return np.concatenate([state, tf, cond], axis=1)


def _forward(p: NetworkParams, x: np.ndarray):
    acts = [x]
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def net_forward(p: NetworkParams, a, t, h) -> np.ndarray:
    """Velocity for one state (returns shape (out,)) or a batch (returns (B, out)).

    ``h`` is the flattened observation history, or an ObservationHistory.
    """
    if isinstance(h, ObservationHistory):
        h = h.flat()
    single = np.ndim(a) == 1
    out, _ = _forward(p, build_inputs(p.dims, a, t, h))
    return out[0] if single else out


def net_loss_grad(p: NetworkParams, a, t, h, v_target) -> tuple[float, NetworkParams]:
    """Mean squared velocity error over the batch and its exact gradient."""
    x = build_inputs(p.dims, a, t, h)
    v_target = np.atleast_2d(np.asarray(v_target, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    out, acts = _forward(p, x)
    if v_target.shape != out.shape:
        raise ValueError(f"target shape {v_target.shape} does not match output {out.shape}")
    err = out - v_target
    loss = float(np.sum(err * err) / n)
    delta = (2.0 / n) * err
    gw: list[np.ndarray] = [None] * len(p.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(p.weights)  # type: ignore[list-item]
    for i in range(len(p.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            # acts[i] is tanh output of layer i-1
            delta = (delta @ p.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, NetworkParams(p.dims, gw, gb)


def adam_step(
    p: NetworkParams,
    state: OptimizerState,
    grads: NetworkParams,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[NetworkParams, OptimizerState]:
    params, g = p.arrays(), grads.arrays()
    if len(params) != len(g) or len(state.m) != len(params):
        raise ValueError("parameter, gradient and moment lists differ in length")
    step = state.step + 1
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    new_p, new_m, new_v = [], [], []
    for x, gx, m, v in zip(params, g, state.m, state.v):
        if gx.shape != x.shape or m.shape != x.shape:
            raise ValueError(f"shape mismatch: param {x.shape}, grad {gx.shape}")
        m = beta1 * m + (1.0 - beta1) * gx
        v = beta2 * v + (1.0 - beta2) * gx * gx
        new_p.append(x - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return p.with_arrays(new_p), OptimizerState(new_m, new_v, step)


# --- checkpoints ---------------------------------------------------------


@dataclass
class Checkpoint:
    """Network parameters plus whatever config the producer wants echoed."""

    variant: str
    params: NetworkParams
    config: dict[str, Any] = field(default_factory=dict)


def checkpoint_dumps(ckpt: Checkpoint) -> str:
    d = ckpt.params.dims
    doc = {
        "format": "streamflow-checkpoint/1",
        "variant": ckpt.variant,
        "config": ckpt.config,
        "dims": {"state_dim": d.state_dim, "cond_dim": d.cond_dim, "out_dim": d.out_dim, "hidden": list(d.hidden)},
        "layers": [
            {"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(ckpt.params.weights, ckpt.params.biases)
        ],
    }
    # repr-based float printing round-trips every float64 exactly
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def checkpoint_loads(text: str) -> Checkpoint:
    doc = json.loads(text)
    if doc.get("format") != "streamflow-checkpoint/1":
        raise ValueError("not a streamflow checkpoint")
    dd = doc["dims"]
    dims = NetDims(dd["state_dim"], dd["cond_dim"], dd["out_dim"], tuple(dd["hidden"]))
    weights, biases = [], []
    for layer in doc["layers"]:
        weights.append(np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"]))
        biases.append(np.array(layer["bias"], dtype=np.float64))
    return Checkpoint(doc["variant"], NetworkParams(dims, weights, biases), doc.get("config", {}))


def checkpoint_save(ckpt: Checkpoint, path) -> None:
    Path(path).write_text(checkpoint_dumps(ckpt), encoding="utf-8")


def checkpoint_load(path) -> Checkpoint:
    return checkpoint_loads(Path(path).read_text(encoding="utf-8"))
