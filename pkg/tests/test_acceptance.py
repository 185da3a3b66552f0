"""Numbered acceptance criteria, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary
ends with one PASS/FAIL line per criterion. Training-based criteria take
several minutes in total on one CPU core.
"""

import math
import time

import numpy as np
import pytest
from test_cli import WALL_FILES, pipeline, strip_wall
from test_net import finite_difference_check, random_problem

from streamflow.baseline import BaselineConfig, baseline_train
from streamflow.core import AnalyticTrajectory, ChunkParams
from streamflow.envs import (
    PointMassConfig,
    PointMassEnv,
    gen_bimodal_1d,
    gen_intersecting_s,
    gen_line,
    gen_pointmass,
    gen_position_bounded,
    gen_velocity_bounded,
)
from streamflow.evaluation import (
    SHAPES,
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
)
from streamflow.flows import FlowConfig, LatentFlowConfig, conditional_marginal, conditional_velocity, latent_flow_forward, latent_flow_inverse, latent_joint
from streamflow.ode import rk4_path
from streamflow.stream import LATENT, sample_trajectories
from streamflow.train import TrainConfig, train_policy

SINE = AnalyticTrajectory(lambda t: 0.5 * np.sin(2 * np.pi * t), lambda t: np.pi * np.cos(2 * np.pi * t))


def _train(ds, **kw):
    t0 = time.process_time()
    model = train_policy(ds, TrainConfig(lr_schedule="cosine", **kw))
    return model, time.process_time() - t0


# --- 1 -------------------------------------------------------------------


@pytest.mark.criterion(1, "stabilized marginal, Monte Carlo vs closed form")
def test_criterion_01_conditional_marginal(detail):
    cfg = FlowConfig(k=2.0, sigma0=0.1)
    rng = np.random.default_rng(0)
    t0 = time.process_time()
    a0 = SINE.eval(0.0) + cfg.sigma0 * rng.standard_normal((10_000, 1))
    record = {int(round(t / 1e-3)): t for t in (0.25, 0.5, 1.0)}
    states = rk4_path(lambda a, s: conditional_velocity(SINE, a, min(s, 1.0), cfg), a0, 0.0, 1.0, 1000, record_at=list(record))
    cpu = time.process_time() - t0
    worst_mean, worst_std = 0.0, 0.0
    for step, t in record.items():
        want = conditional_marginal(SINE, t, cfg)
        worst_mean = max(worst_mean, abs(states[step].mean() - want.mean[0]))
        worst_std = max(worst_std, abs(states[step].std() / want.std - 1.0))
    detail(f"max |mean err| {worst_mean:.2e}, max std rel err {worst_std:.2%}, {cpu:.1f} s CPU")
    assert worst_mean < 0.01
    assert worst_std < 0.05
    assert cpu < 30.0


# --- 2 -------------------------------------------------------------------


@pytest.mark.criterion(2, "latent joint covariance and inverse map")
def test_criterion_02_latent_joint(detail):
    cfg = LatentFlowConfig(sigma0=0.1, sigma1=0.5, k=2.0)
    rng = np.random.default_rng(0)
    n = 10_000
    a0 = SINE.eval(0.0) + cfg.sigma0 * rng.standard_normal((n, 1))
    z0 = rng.standard_normal((n, 1))
    worst_rel, worst_inv = 0.0, 0.0
    for t in (0.0, 0.5, 1.0):
        a, z = latent_flow_forward(SINE, a0, z0, t, cfg)
        emp = np.cov(np.hstack([a, z]).T)
        g = latent_joint(SINE, t, cfg)
        want = np.array([[g.cov11, g.cov12], [g.cov12, g.cov22]])
        scale = math.sqrt(g.cov11 * g.cov22)
        for i, j in ((0, 0), (0, 1), (1, 1)):
            # the cross term is exactly 0 at t=0; there it is judged against sqrt(S11 S22)
            ref = abs(want[i, j]) if want[i, j] != 0.0 else scale
            worst_rel = max(worst_rel, abs(emp[i, j] - want[i, j]) / ref)
        b0, y0 = latent_flow_inverse(SINE, a, z, t, cfg)
        worst_inv = max(worst_inv, float(np.max(np.abs(b0 - a0))), float(np.max(np.abs(y0 - z0))))
    detail(f"max covariance rel err {worst_rel:.2%}, inverse round-trip {worst_inv:.1e}")
    assert worst_rel < 0.05
    assert worst_inv < 1e-10


# --- 3 -------------------------------------------------------------------


@pytest.mark.criterion(3, "exact gradients vs central differences")
def test_criterion_03_gradient_exactness(detail):
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        state = int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(3, 9, size=int(rng.integers(1, 4))))
        errs.append(finite_difference_check(*random_problem(seed, state=state, cond=int(rng.integers(1, 5)), hidden=hidden, batch=int(rng.integers(1, 10)))))
    detail(f"max relative error {max(errs):.1e} over 20 nets")
    assert max(errs) < 1e-4


# --- 4 -------------------------------------------------------------------


@pytest.fixture(scope="session")
def bimodal():
    ds = gen_bimodal_1d(200, np.random.default_rng(0))
    model, cpu = _train(ds, num_steps=20_000, seed=0)
    return ds, model, cpu


@pytest.mark.criterion(4, "bimodal marginals and mode balance")
def test_criterion_04_bimodal(bimodal, detail):
    ds, model, cpu = bimodal
    paths = sample_trajectories(model, ds.demos[0].history, [0.0], 0.05, 500, 1 / 64, np.random.default_rng(1))
    rep = w1_per_timestep(paths, ds)
    cov = mode_coverage(paths)
    detail(f"mean W1 {rep.mean_w1:.4f} (max {rep.max_w1:.4f}), modes {cov[0]:.3f}/{cov[1]:.3f}, training {cpu:.0f} s CPU")
    assert rep.w1.shape[0] == 17
    assert rep.mean_w1 <= 0.05
    assert np.all((cov >= 0.45) & (cov <= 0.55))
    assert cpu < 300.0


# --- 5 -------------------------------------------------------------------


@pytest.mark.criterion(5, "stabilization ablation, learned and exact")
def test_criterion_05_ablation(detail):
    ds = gen_line(1)
    mk, _ = _train(ds, flow=FlowConfig(k=5.0, sigma0=0.05), num_steps=3000, batch_size=128)
    m0, _ = _train(ds, flow=FlowConfig(k=0.0, sigma0=0.05), num_steps=3000, batch_size=128)
    learned = stabilization_ablation(mk, m0, ds, 0.2)
    exact = analytic_ablation(ds.demos[0].trajectory, 5.0, 0.2)
    rel = abs(exact.ratio / math.exp(-5.0) - 1.0)
    detail(f"learned ratio {learned.ratio:.3f}, exact ratio {exact.ratio:.5f} vs e^-5 {math.exp(-5.0):.5f} ({rel:.1e} rel)")
    assert learned.ratio < 0.5
    assert rel < 0.05


# --- 6 -------------------------------------------------------------------


@pytest.fixture(scope="session")
def crossing():
    return gen_intersecting_s(200, np.random.default_rng(0))


@pytest.mark.criterion(6, "compositionality on crossing demos")
def test_criterion_06_compositionality(crossing, detail):
    ds = crossing
    plain, _ = _train(ds, flow=FlowConfig(k=1.0, sigma0=0.04), num_steps=10_000, seed=0)
    paths = sample_trajectories(plain, ds.demos[0].history, [0.0], 0.04, 500, 1 / 1024, np.random.default_rng(1))
    cons = sign_consistency(paths)
    rep = w1_per_timestep(paths, ds)

    latent, _ = _train(
        ds, flow=LatentFlowConfig(k=1.0, sigma0=0.04, sigma1=1.0), variant=LATENT, num_steps=10_000, seed=0
    )
    lpaths = sample_trajectories(latent, ds.demos[0].history, [0.0], 0.0, 500, 1 / 64, np.random.default_rng(1))
    shapes = shape_classes(lpaths)
    detail(
        f"sign consistency {cons:.3f}, mean W1 {rep.mean_w1:.4f} (max {rep.max_w1:.4f}); "
        f"latent shapes {shapes} (latent mean W1 {w1_per_timestep(lpaths, ds).mean_w1:.3f}, reported only)"
    )
    assert cons >= 0.9
    assert rep.mean_w1 <= 0.05
    assert all(shapes[s] > 0 for s in SHAPES)


# --- 7 and 8 share the point-mass policy --------------------------------


@pytest.fixture(scope="session")
def pointmass():
    ds = gen_pointmass(20, np.random.default_rng(0))
    model, _ = _train(ds, num_steps=3000)
    return ds, model


@pytest.mark.criterion(7, "streaming latency contract")
def test_criterion_07_latency(pointmass, detail):
    ds, model = pointmass
    base = baseline_train(ds, BaselineConfig(horizon=16, num_steps=1000))
    rep = latency_bench(model, base, ChunkParams.from_counts(0.8, 16, 8), m_baseline=10)
    detail(
        f"TTFA evals {rep.stream_ttfa_evals} vs {rep.baseline_ttfa_evals}, wall ratio {rep.ttfa_wall_ratio:.1f}, "
        f"per action {rep.stream_per_action_ns / 1e3:.1f} us vs {rep.baseline_per_action_ns / 1e3:.1f} us"
    )
    assert rep.stream_ttfa_evals == 1
    assert rep.baseline_ttfa_evals == 10
    assert rep.ttfa_wall_ratio >= 5.0
    assert rep.stream_per_action_ns < rep.baseline_per_action_ns


@pytest.mark.criterion(8, "chunk-size sweep on the point mass")
def test_criterion_08_chunk_sweep(pointmass, detail):
    _, model = pointmass
    cfg = PointMassConfig(obs_noise=0.005, push_std=2.0)
    rows = chunk_sweep(model, lambda rng: PointMassEnv(cfg, rng), (1, 2, 4, 8, 16), n_rollouts=20)
    table = ", ".join(f"{r.chunk_size}:{r.relative:+.3f}" for r in rows)
    peak = peak_chunk_size(rows)
    detail(f"relative scores {table}; peak at chunk size {peak}")
    assert [r.chunk_size for r in rows] == [1, 2, 4, 8, 16]
    assert max(r.relative for r in rows) == 0.0
    assert all(r.n_rollouts == 20 for r in rows)


# --- 9 -------------------------------------------------------------------


@pytest.mark.criterion(9, "velocity hull and position bound")
def test_criterion_09_constraints(detail):
    ds = gen_velocity_bounded(200, np.random.default_rng(0))
    model, _ = _train(ds, flow=FlowConfig(k=0.1, sigma0=0.05), num_steps=5000)
    rep = convexity_check(model, ds, eps=0.1, bound=(-1.0, 1.0))

    pds = gen_position_bounded(200, np.random.default_rng(0))
    pmodel, _ = _train(pds, num_steps=5000)
    sigma0 = pmodel.flow.sigma0
    paths = sample_trajectories(pmodel, pds.demos[0].history, [0.0], sigma0, 500, 1 / 64, np.random.default_rng(1))
    viol = position_violation(paths, -0.5, 0.5, 3.0 * sigma0)
    within = 1.0 - rep.frac_outside_bound
    detail(f"{within:.1%} of {rep.n_in_tube} in-tube probes within [-1.1, 1.1]; {viol:.2%} of actions outside the bound")
    assert rep.n_in_tube > 0
    assert within >= 0.95
    assert viol < 0.01


# --- 10 ------------------------------------------------------------------


@pytest.mark.criterion(10, "CLI determinism")
def test_criterion_10_cli_determinism(capsys, tmp_path, detail):
    a, b = tmp_path / "a", tmp_path / "b"
    pipeline(capsys, a)
    pipeline(capsys, b)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differ = []
    for rel in files:
        if rel.name in WALL_FILES:
            continue
        if rel.name.startswith("resolved_config."):
            same = (a / rel).read_text().replace(str(a), "R") == (b / rel).read_text().replace(str(b), "R")
        else:
            same = strip_wall(a / rel) == strip_wall(b / rel)
        if not same:
            differ.append(str(rel))
    commands = {p.name for p in files if p.name.startswith("resolved_config.")}
    detail(f"{len(files)} files from {len(commands)} subcommands, {len(differ)} differ")
    assert len(commands) == 11
    assert differ == []
