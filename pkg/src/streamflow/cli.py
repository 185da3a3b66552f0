"""Command-line front end: ``sfp <subcommand> [--config FILE] [--flags]``.

Every subcommand resolves its settings from built-in defaults, then an
optional JSON config file, then explicit flags. The resolved settings are
written next to the outputs and a one-line JSON summary is printed on
success.

Exit codes: 0 ok, 2 usage, 3 config, 4 runtime.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from streamflow.baseline import BASELINE, BaselineConfig, BaselineModel, baseline_sample_batch, baseline_train
from streamflow.core import ChunkParams, Dataset, dataset_load, dataset_save
from streamflow.envs import GENERATORS, PointMassConfig, PointMassEnv, TrackingEnv, gen_line
from streamflow.evaluation import (
    analytic_ablation,
    chunk_sweep,
    convexity_check,
    latency_bench,
    mode_coverage,
    peak_chunk_size,
    position_violation,
    shape_classes,
    sign_consistency,
    stabilization_ablation,
    w1_per_timestep,
    write_sweep_csv,
    SweepRow,
)
from streamflow.flows import FlowConfig, LatentFlowConfig
from streamflow.net import checkpoint_load, checkpoint_save
from streamflow.plotting import write_figure
from streamflow.stream import LATENT, PLAIN, VelocityModel, run_receding_horizon, sample_trajectories, write_rollout_csv
from streamflow.train import LR_SCHEDULES, TrainConfig, train_policy, write_loss_csv

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4
ENVS = (*GENERATORS, "line")
INIT_MODES = ("action_imitation", "state_imitation")

log = logging.getLogger("streamflow")


class ConfigError(Exception):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


# --- settings schema ----------------------------------------------------


@dataclass(frozen=True)
class Opt:
    """One setting: dotted key in the config file, its flag, type and check."""

    key: str
    kind: str  # int, float, str, file, path, ints, floats, flag
    default: Any = None
    choices: tuple | None = None
    check: Callable[[Any], str | None] | None = None
    required: bool = False
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.key.split(".")[-1].replace("_", "-")


def positive(x):
    return None if x > 0 else "must be > 0"


def nonneg(x):
    return None if x >= 0 else "must be >= 0"


def at_least(n):
    return lambda x: None if x >= n else f"must be >= {n}"


def pair(x):
    return None if len(x) == 2 and x[0] <= x[1] else "must be two numbers lo,hi with lo <= hi"


def _coerce(opt: Opt, value):
    kind = opt.kind
    try:
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "flag":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind in ("ints", "floats"):
            if isinstance(value, str):
                value = [p for p in value.split(",") if p.strip()]
            conv = int if kind == "ints" else float
            return [conv(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(opt.key, f"expected {kind}, got {value!r}") from None


def resolve(schema: list[Opt], config: dict, flags: dict) -> dict:
    """Merge defaults, config-file values and flags; validate every field."""
    out = {}
    known = {o.key for o in schema}
    for key in _flatten(config):
        if key not in known:
            raise ConfigError(key, "unknown setting")
    flat_cfg = _flatten(config)
    for opt in schema:
        value = opt.default
        if opt.key in flat_cfg:
            value = flat_cfg[opt.key]
        if flags.get(opt.key) is not None:
            value = flags[opt.key]
        if value is None:
            if opt.required:
                raise ConfigError(opt.key, f"required (set {opt.flag} or '{opt.key}' in the config)")
            out[opt.key] = None
            continue
        value = _coerce(opt, value)
        if opt.choices is not None and value not in opt.choices:
            raise ConfigError(opt.key, f"must be one of {list(opt.choices)}, got {value!r}")
        if opt.kind == "file" and not Path(value).is_file():
            raise ConfigError(opt.key, f"file not found: {value}")
        if opt.check is not None:
            problem = opt.check(value)
            if problem:
                raise ConfigError(opt.key, problem)
        out[opt.key] = value
    return out


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _nest(flat: dict) -> dict:
    out: dict = {}
    for key, v in flat.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return out


OUT_DIR = Opt("out_dir", "path", required=True, help="directory for every output file")
SEED = Opt("seed", "int", 0, check=nonneg)
MODEL = Opt("model", "file", required=True, help="checkpoint JSON")
DATA = Opt("data", "file", required=True, help="dataset JSONL")
N_SAMPLES = Opt("n", "int", 500, check=at_least(1), help="number of sampled trajectories")
STEPS = Opt("steps", "int", 64, check=at_least(1), help="Euler steps over t in [0, 1]")
CHUNK_SIZE = Opt("chunk_size", "int", 8, check=at_least(1), help="actions per chunk")
STEPS_PER_PRED = Opt("steps_per_pred", "int", 16, check=at_least(1), help="actions per prediction horizon")
T_PRED = Opt("t_pred", "float", 0.8, check=positive, help="prediction horizon in seconds")
OBS_NOISE = Opt("obs_noise", "float", 0.0, check=nonneg)
PUSH_STD = Opt("push_std", "float", 0.0, check=nonneg)

SCHEMAS: dict[str, list[Opt]] = {
    "gen-data": [
        Opt("env", "str", required=True, choices=ENVS),
        Opt("n", "int", 200, check=at_least(1), help="number of demos (episodes for pointmass)"),
        SEED,
        Opt("out", "path", required=True, help="dataset JSONL to write"),
        Opt("steps_per_pred", "int", 16, check=at_least(1), help="pointmass only"),
    ],
    "train": [
        DATA,
        Opt("variant", "str", PLAIN, choices=(PLAIN, LATENT, BASELINE)),
        SEED,
        Opt("train.num_steps", "int", 5000, check=at_least(1)),
        Opt("train.batch_size", "int", 256, check=at_least(1)),
        Opt("train.lr", "float", 1e-3, check=positive),
        Opt("train.lr_schedule", "str", "constant", choices=LR_SCHEDULES),
        Opt("train.hidden", "ints", [128, 128, 128], check=lambda h: None if h and min(h) >= 1 else "widths must be >= 1"),
        Opt("flow.k", "float", 5.0, check=nonneg),
        Opt("flow.sigma0", "float", None, check=positive, help="default 0.05 plain, 1e-3 latent"),
        Opt("flow.sigma1", "float", 1.0, check=positive, help="latent only"),
        Opt("baseline.horizon", "int", 16, check=at_least(2)),
        OUT_DIR,
    ],
    "sample": [
        MODEL, DATA, N_SAMPLES,
        Opt("sigma0", "float", 0.0, check=nonneg, help="test-time start noise"),
        STEPS, SEED,
        Opt("demo", "int", 0, check=nonneg, help="demo whose history and start condition sampling"),
        OUT_DIR,
    ],
    "rollout": [
        MODEL,
        Opt("env", "str", "pointmass", choices=("pointmass", "tracking")),
        CHUNK_SIZE, STEPS_PER_PRED, T_PRED,
        Opt("init_mode", "str", "action_imitation", choices=INIT_MODES),
        Opt("max_steps", "int", 60, check=at_least(1)),
        Opt("threaded", "flag", False),
        OBS_NOISE, PUSH_STD, SEED, OUT_DIR,
    ],
    "eval-marginals": [MODEL, DATA, N_SAMPLES, Opt("sigma0", "float", 0.05, check=nonneg), STEPS, SEED, OUT_DIR],
    "eval-modes": [MODEL, DATA, N_SAMPLES, Opt("sigma0", "float", 0.05, check=nonneg), STEPS, SEED, OUT_DIR],
    "eval-ablation": [
        MODEL,
        Opt("model_k0", "file", required=True, help="same data, trained with k=0"),
        DATA,
        Opt("perturb", "float", 0.2),
        STEPS,
        OUT_DIR,
    ],
    "eval-convexity": [
        MODEL, DATA,
        Opt("eps", "float", 0.1, check=nonneg),
        Opt("bound", "floats", None, check=pair, help="velocity bound lo,hi"),
        Opt("position_bound", "floats", None, check=pair, help="position bound lo,hi for the sampled-action check"),
        Opt("n_probes", "int", 512, check=at_least(1)),
        N_SAMPLES, SEED, OUT_DIR,
    ],
    "bench": [
        MODEL,
        Opt("baseline", "file", required=True, help="baseline checkpoint"),
        CHUNK_SIZE, STEPS_PER_PRED, T_PRED,
        Opt("m_baseline", "int", 10, check=at_least(1)),
        Opt("n_actions", "int", 1000, check=at_least(1)),
        Opt("repeats", "int", 5, check=at_least(1)),
        SEED, OUT_DIR,
    ],
    "sweep-chunk": [
        MODEL,
        Opt("env", "str", "pointmass", choices=("pointmass",)),
        Opt("sizes", "ints", [1, 2, 4, 8, 16], check=lambda s: None if s and min(s) >= 1 else "sizes must be >= 1"),
        Opt("n_rollouts", "int", 20, check=at_least(1)),
        STEPS_PER_PRED, T_PRED,
        Opt("init_mode", "str", "state_imitation", choices=INIT_MODES),
        OBS_NOISE, PUSH_STD, SEED, OUT_DIR,
    ],
    "plot": [
        Opt("input", "file", required=True, help="loss.csv, sweep.csv or samples.csv"),
        Opt("kind", "str", required=True, choices=("loss", "sweep", "marginals")),
        Opt("data", "file", help="dataset for marginals"),
        Opt("out", "path", required=True, help="SVG to write"),
    ],
}


# --- helpers -------------------------------------------------------------


def _out_dir(s: dict) -> Path:
    path = Path(s["out_dir"] if "out_dir" in s else Path(s["out"]).parent)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_resolved(cmd: str, s: dict, out: Path) -> None:
    (out / f"resolved_config.{cmd}.json").write_text(json.dumps(_nest(s), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    ckpt = checkpoint_load(path)
    if ckpt.variant == BASELINE:
        return BaselineModel.from_checkpoint(ckpt)
    return VelocityModel.from_checkpoint(ckpt)


def _stream_model(path) -> VelocityModel:
    m = load_model(path)
    if not isinstance(m, VelocityModel):
        raise ConfigError("model", "needs a streaming (plain or latent) checkpoint")
    return m


def _check_match(model, ds: Dataset) -> None:
    if model.action_dim != ds.action_dim or model.obs_dim != ds.obs_dim or model.history_len != ds.history_len:
        raise ValueError(
            f"model dims (action {model.action_dim}, obs {model.obs_dim}, K {model.history_len}) "
            f"do not match data (action {ds.action_dim}, obs {ds.obs_dim}, K {ds.history_len})"
        )


def _draw(model: VelocityModel, ds: Dataset, s: dict, demo: int = 0) -> np.ndarray:
    _check_match(model, ds)
    d = ds.demos[demo]
    rng = np.random.default_rng(s["seed"])
    return sample_trajectories(model, d.history, d.trajectory.eval(0.0), s["sigma0"], s["n"], 1.0 / s["steps"], rng)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _f(x) -> str:
    return repr(float(x))


def write_samples_csv(paths: np.ndarray, path: Path) -> None:
    n, m, d = paths.shape
    t = np.linspace(0.0, 1.0, m)
    rows = ([i, _f(t[j])] + [_f(x) for x in paths[i, j]] for i in range(n) for j in range(m))
    _write_rows(path, ["sample", "t"] + [f"a{k}" for k in range(d)], rows)


def read_samples_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    if head[:2] != ["sample", "t"] or not body:
        raise ValueError(f"{path}: not a samples CSV")
    arr = np.array([[float(x) for x in r[2:]] for r in body])
    ids = np.array([int(r[0]) for r in body])
    n = ids.max() + 1
    return arr.reshape(n, len(body) // n, len(head) - 2)


def _pointmass_factory(s: dict):
    cfg = PointMassConfig(obs_noise=s["obs_noise"], push_std=s["push_std"])
    return lambda rng: PointMassEnv(cfg, rng)


# --- subcommands ---------------------------------------------------------


def cmd_gen_data(s: dict) -> dict:
    rng = np.random.default_rng(s["seed"])
    env = s["env"]
    if env == "line":
        ds = gen_line(s["n"])
    elif env == "pointmass":
        ds = GENERATORS[env](s["n"], rng, steps_per_pred=s["steps_per_pred"])
    else:
        if s["n"] < 2:
            raise ConfigError("n", f"{env} needs at least 2 demos")
        ds = GENERATORS[env](s["n"], rng)
    _out_dir(s)
    dataset_save(ds, s["out"])
    return {"out": s["out"], "num_demos": len(ds)}


def cmd_train(s: dict) -> dict:
    ds = dataset_load(s["data"])
    out = _out_dir(s)
    variant = s["variant"]
    if variant == BASELINE:
        cfg = BaselineConfig(
            horizon=s["baseline.horizon"],
            batch_size=s["train.batch_size"],
            num_steps=s["train.num_steps"],
            lr=s["train.lr"],
            seed=s["seed"],
            hidden=tuple(s["train.hidden"]),
        )
        model = baseline_train(ds, cfg)
        ckpt = model.to_checkpoint()
    else:
        if variant == LATENT:
            sigma0 = 1e-3 if s["flow.sigma0"] is None else s["flow.sigma0"]
            try:
                flow = LatentFlowConfig(sigma0=sigma0, sigma1=s["flow.sigma1"], k=s["flow.k"])
            except ValueError as exc:
                raise ConfigError("flow.sigma1", str(exc)) from None
        else:
            flow = FlowConfig(k=s["flow.k"], sigma0=0.05 if s["flow.sigma0"] is None else s["flow.sigma0"])
        cfg = TrainConfig(
            flow=flow,
            batch_size=s["train.batch_size"],
            num_steps=s["train.num_steps"],
            lr=s["train.lr"],
            seed=s["seed"],
            variant=variant,
            hidden=tuple(s["train.hidden"]),
            lr_schedule=s["train.lr_schedule"],
        )
        model = train_policy(ds, cfg)
        ckpt = model.to_checkpoint()
    checkpoint_save(ckpt, out / "model.json")
    write_loss_csv(model.loss_curve, out / "loss.csv")
    write_figure(model.loss_curve, out / "loss.svg", "loss")
    tail = model.loss_curve[-100:]
    return {"model": str(out / "model.json"), "final_loss": float(np.mean(tail))}


def cmd_sample(s: dict) -> dict:
    ds = dataset_load(s["data"])
    if not 0 <= s["demo"] < len(ds):
        raise ConfigError("demo", f"index out of range for {len(ds)} demos")
    model = load_model(s["model"])
    out = _out_dir(s)
    demo = ds.demos[s["demo"]]
    if isinstance(model, BaselineModel):
        _check_match(model, ds)
        paths = baseline_sample_batch(model, demo.history, s["steps"], np.random.default_rng(s["seed"]), s["n"])
    else:
        paths = _draw(model, ds, s, s["demo"])
    write_samples_csv(paths, out / "samples.csv")
    return {"samples": str(out / "samples.csv"), "n": int(paths.shape[0]), "points": int(paths.shape[1])}


def cmd_rollout(s: dict) -> dict:
    model = _stream_model(s["model"])
    out = _out_dir(s)
    rng = np.random.default_rng(s["seed"])
    chunk = ChunkParams.from_counts(s["t_pred"], s["steps_per_pred"], s["chunk_size"])
    if s["env"] == "pointmass":
        if model.action_dim != 2 or model.obs_dim != 2:
            raise ValueError("pointmass needs a model with 2-D actions and observations")
        env = _pointmass_factory(s)(np.random.default_rng([s["seed"], 0]))
    else:
        if model.obs_dim != model.action_dim:
            raise ValueError("tracking env observes the action, so obs_dim must equal action_dim")
        env = TrackingEnv(np.zeros(model.action_dim), s["max_steps"], s["obs_noise"], np.random.default_rng([s["seed"], 0]))
    rec = run_receding_horizon(model, env, chunk, s["init_mode"], s["max_steps"], s["threaded"], rng)
    write_rollout_csv(rec, out / "rollout.csv")
    score = env.score() if hasattr(env, "score") and not rec.failed else None
    return {"rollout": str(out / "rollout.csv"), "steps": len(rec.steps), "failed": rec.failed, "score": score}


def cmd_eval_marginals(s: dict) -> dict:
    ds = dataset_load(s["data"])
    model = _stream_model(s["model"])
    out = _out_dir(s)
    rep = w1_per_timestep(_draw(model, ds, s), ds)
    rep.to_csv(out / "marginals.csv")
    write_figure(rep, out / "marginals.svg", "marginals")
    return {"csv": str(out / "marginals.csv"), "svg": str(out / "marginals.svg"), "mean_w1": rep.mean_w1, "max_w1": rep.max_w1}


def cmd_eval_modes(s: dict) -> dict:
    ds = dataset_load(s["data"])
    model = _stream_model(s["model"])
    out = _out_dir(s)
    paths = _draw(model, ds, s)
    cov = mode_coverage(paths)
    cons = sign_consistency(paths)
    shapes = shape_classes(paths)
    rows = [["mode_0_fraction", _f(cov[0])], ["mode_1_fraction", _f(cov[1])], ["sign_consistency", _f(cons)]]
    rows += [[f"shape_{k}", v] for k, v in shapes.items()]
    _write_rows(out / "modes.csv", ["metric", "value"], rows)
    return {"csv": str(out / "modes.csv"), "modes": cov.tolist(), "sign_consistency": cons, "shapes": shapes}


def cmd_eval_ablation(s: dict) -> dict:
    ds = dataset_load(s["data"])
    mk, m0 = _stream_model(s["model"]), _stream_model(s["model_k0"])
    _check_match(mk, ds)
    _check_match(m0, ds)
    out = _out_dir(s)
    learned = stabilization_ablation(mk, m0, ds, s["perturb"], 1.0 / s["steps"])
    exact = analytic_ablation(ds.demos[0].trajectory, mk.flow.k, s["perturb"])
    rows = [
        ["learned", _f(mk.flow.k), _f(learned.err_k), _f(learned.err_k0), _f(learned.ratio)],
        ["analytic", _f(mk.flow.k), _f(exact.err_k), _f(exact.err_k0), _f(exact.ratio)],
    ]
    _write_rows(out / "ablation.csv", ["source", "k", "err_k", "err_k0", "ratio"], rows)
    return {
        "csv": str(out / "ablation.csv"),
        "ratio": learned.ratio,
        "analytic_ratio": exact.ratio,
        "exp_minus_k": math.exp(-mk.flow.k),
    }


def cmd_eval_convexity(s: dict) -> dict:
    ds = dataset_load(s["data"])
    model = _stream_model(s["model"])
    _check_match(model, ds)
    if model.flow.k > 0.5:
        raise ConfigError("model", f"convexity check needs a model trained with k <= 0.5, got k={model.flow.k}")
    out = _out_dir(s)
    bound = None if s["bound"] is None else tuple(s["bound"])
    rep = convexity_check(model, ds, s["eps"], bound, s["n_probes"], seed=s["seed"])
    rows = [
        ["n_probes", rep.n_probes],
        ["n_in_tube", rep.n_in_tube],
        ["frac_outside_hull", _f(rep.frac_outside_hull)],
        ["max_excess", _f(rep.max_excess)],
    ]
    summary = {"csv": str(out / "convexity.csv"), "frac_outside_hull": rep.frac_outside_hull, "n_in_tube": rep.n_in_tube}
    if rep.frac_outside_bound is not None:
        rows.append(["frac_outside_bound", _f(rep.frac_outside_bound)])
        summary["frac_outside_bound"] = rep.frac_outside_bound
    if s["position_bound"] is not None:
        lo, hi = s["position_bound"]
        paths = _draw(model, ds, {"seed": s["seed"], "sigma0": model.flow.sigma0, "n": s["n"], "steps": 64})
        frac = position_violation(paths, lo, hi, 3.0 * model.flow.sigma0)
        rows.append(["frac_position_violation", _f(frac)])
        summary["frac_position_violation"] = frac
    _write_rows(out / "convexity.csv", ["metric", "value"], rows)
    return summary


def cmd_bench(s: dict) -> dict:
    model = _stream_model(s["model"])
    base = load_model(s["baseline"])
    if not isinstance(base, BaselineModel):
        raise ConfigError("baseline", "needs a baseline checkpoint")
    out = _out_dir(s)
    chunk = ChunkParams.from_counts(s["t_pred"], s["steps_per_pred"], s["chunk_size"])
    rep = latency_bench(model, base, chunk, s["m_baseline"], n_actions=s["n_actions"], repeats=s["repeats"], seed=s["seed"])
    rep.to_csv(out / "latency.csv")
    write_figure(rep, out / "latency.svg", "latency")
    return {
        "csv": str(out / "latency.csv"),
        "ttfa_evals": [rep.stream_ttfa_evals, rep.baseline_ttfa_evals],
        "ttfa_wall_ratio": rep.ttfa_wall_ratio,
    }


def cmd_sweep_chunk(s: dict) -> dict:
    model = _stream_model(s["model"])
    out = _out_dir(s)
    for size in s["sizes"]:
        try:
            ChunkParams.from_counts(s["t_pred"], s["steps_per_pred"], size)
        except ValueError as exc:
            raise ConfigError("sizes", str(exc)) from None
    rows = chunk_sweep(
        model,
        _pointmass_factory(s),
        s["sizes"],
        s["n_rollouts"],
        s["steps_per_pred"],
        s["t_pred"],
        s["init_mode"],
        seed=s["seed"],
    )
    write_sweep_csv(rows, out / "sweep.csv")
    write_figure(rows, out / "sweep.svg", "sweep")
    return {"csv": str(out / "sweep.csv"), "peak_chunk_size": peak_chunk_size(rows)}


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        SweepRow(int(r["chunk_size"]), float(r["mean_score"]), float(r["std_score"]), int(r["n_rollouts"]), int(r["n_failed"]), float(r["relative_score"]))
        for r in rows
    ]


def cmd_plot(s: dict) -> dict:
    kind = s["kind"]
    _out_dir(s)
    if kind == "loss":
        with open(s["input"], encoding="utf-8") as fh:
            report = [float(r["loss"]) for r in csv.DictReader(fh)]
    elif kind == "sweep":
        report = read_sweep_csv(s["input"])
    else:
        if s["data"] is None:
            raise ConfigError("data", "marginals plot needs --data")
        report = w1_per_timestep(read_samples_csv(s["input"]), dataset_load(s["data"]))
    write_figure(report, s["out"], kind)
    return {"svg": s["out"]}


COMMANDS: dict[str, Callable[[dict], dict]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "rollout": cmd_rollout,
    "eval-marginals": cmd_eval_marginals,
    "eval-modes": cmd_eval_modes,
    "eval-ablation": cmd_eval_ablation,
    "eval-convexity": cmd_eval_convexity,
    "bench": cmd_bench,
    "sweep-chunk": cmd_sweep_chunk,
    "plot": cmd_plot,
}


# --- argument parsing ----------------------------------------------------


def _add_opts(p: argparse.ArgumentParser, schema: list[Opt]) -> None:
    p.add_argument("--config", help="JSON settings file; flags override it")
    for o in schema:
        dest = o.key.replace(".", "__")
        if o.kind == "flag":
            p.add_argument(o.flag, dest=dest, action="store_const", const=True, default=None, help=o.help)
        else:
            default = "" if o.default is None else f" (default {o.default})"
            p.add_argument(o.flag, dest=dest, default=None, help=(o.help + default).strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfp", description="Streaming flow policies: data, training, sampling and evaluation.")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in ("gen-data", "train", "sample", "rollout", "bench", "sweep-chunk", "plot"):
        _add_opts(sub.add_parser(name), SCHEMAS[name])
    ev = sub.add_parser("eval", help="marginals, modes, ablation or convexity")
    ev_sub = ev.add_subparsers(dest="metric", metavar="METRIC")
    ev_sub.required = True
    for metric in ("marginals", "modes", "ablation", "convexity"):
        _add_opts(ev_sub.add_parser(metric), SCHEMAS[f"eval-{metric}"])
    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cmd = args.command if args.command != "eval" else f"eval-{args.metric}"
    schema = SCHEMAS[cmd]
    try:
        config = {}
        if args.config:
            try:
                config = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("config", str(exc)) from None
            if not isinstance(config, dict):
                raise ConfigError("config", "top level must be an object")
        flags = {o.key: getattr(args, o.key.replace(".", "__")) for o in schema}
        settings = resolve(schema, config, flags)
        summary = COMMANDS[cmd](settings)
        _write_resolved(cmd, settings, _out_dir(settings))
    except ConfigError as exc:
        print(f"sfp {cmd}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"sfp {cmd}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"command": cmd, "status": "ok", **summary}, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
