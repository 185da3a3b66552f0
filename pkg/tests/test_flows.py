import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamflow.core import AnalyticTrajectory, Trajectory
from streamflow.flows import (
    FlowConfig,
    Gaussian2,
    LatentFlowConfig,
    conditional_marginal,
    conditional_velocity,
    latent_conditional_velocity,
    latent_flow_forward,
    latent_flow_inverse,
    latent_joint,
    sample_conditional,
    sample_latent_joint,
)
from streamflow.ode import rk4_path

SINE = AnalyticTrajectory(lambda t: 0.5 * np.sin(2 * np.pi * t), lambda t: np.pi * np.cos(2 * np.pi * t))


def test_velocity_on_demo_is_demo_derivative():
    cfg = FlowConfig(k=3.0, sigma0=0.1)
    for t in (0.0, 0.3, 0.9):
        np.testing.assert_allclose(conditional_velocity(SINE, SINE.eval(t), t, cfg), SINE.deriv(t))


def test_velocity_pulls_toward_demo():
    cfg = FlowConfig(k=2.0)
    v = conditional_velocity(SINE, SINE.eval(0.0) + 0.1, 0.0, cfg)
    assert v[0] == pytest.approx(SINE.deriv(0.0)[0] - 0.2)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        conditional_velocity(SINE, np.zeros(2), 0.5, FlowConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(k=-1.0)
    with pytest.raises(ValueError):
        FlowConfig(sigma0=-0.1)
    with pytest.raises(ValueError):
        LatentFlowConfig(sigma0=1.0, sigma1=1e-4, k=0.0)


def test_marginal_width_decays():
    cfg = FlowConfig(k=2.0, sigma0=0.1)
    assert conditional_marginal(SINE, 0.0, cfg).std == pytest.approx(0.1)
    assert conditional_marginal(SINE, 1.0, cfg).std == pytest.approx(0.1 * math.exp(-2.0))


@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_integrated_flow_matches_marginal(t):
    # push N(xi(0), sigma0^2) through the conditional field with RK4
    cfg = FlowConfig(k=2.0, sigma0=0.1)
    rng = np.random.default_rng(0)
    a0 = SINE.eval(0.0) + cfg.sigma0 * rng.standard_normal((4000, 1))
    n = int(round(t / 1e-3))
    end = rk4_path(lambda a, s: conditional_velocity(SINE, a, min(s, 1.0), cfg), a0, 0.0, t, n, record_at=[n])[n]
    want = conditional_marginal(SINE, t, cfg)
    assert abs(end.mean() - want.mean[0]) < 0.01
    assert abs(end.std() / want.std - 1.0) < 0.05


def test_sample_conditional_moments():
    cfg = FlowConfig(k=1.0, sigma0=0.2)
    x = sample_conditional(SINE, 0.5, cfg, np.random.default_rng(3), size=20000)
    assert x.shape == (20000, 1)
    assert x.mean() == pytest.approx(SINE.eval(0.5)[0], abs=0.01)
    assert x.std() == pytest.approx(0.2 * math.exp(-0.5), rel=0.03)


# --- latent flow ---------------------------------------------------------

LCFG = LatentFlowConfig(sigma0=0.05, sigma1=0.2, k=3.0)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1),
    st.sampled_from([LCFG, LatentFlowConfig(), LatentFlowConfig(sigma0=0.3, sigma1=1.0, k=0.0)]),
)
def test_inverse_undoes_forward(a0, z0, t, cfg):
    a, z = latent_flow_forward(SINE, [a0], [z0], t, cfg)
    b0, y0 = latent_flow_inverse(SINE, a, z, t, cfg)
    assert abs(b0[0] - a0) < 1e-10
    assert abs(y0[0] - z0) < 1e-10


@pytest.mark.parametrize("t", [0.0, 0.2, 0.55, 0.9])
def test_latent_velocity_is_time_derivative_of_forward_map(t):
    a0, z0 = np.array([0.03]), np.array([-0.7])
    a, z = latent_flow_forward(SINE, a0, z0, t, LCFG)
    va, vz = latent_conditional_velocity(SINE, a, z, t, LCFG)
    h = 1e-5
    if t - h < 0:
        # second-order one-sided stencil at the left end
        f = [latent_flow_forward(SINE, a0, z0, t + j * h, LCFG) for j in range(3)]
        da = (-3 * f[0][0] + 4 * f[1][0] - f[2][0]) / (2 * h)
        dz = (-3 * f[0][1] + 4 * f[1][1] - f[2][1]) / (2 * h)
    else:
        (a_hi, z_hi), (a_lo, z_lo) = (latent_flow_forward(SINE, a0, z0, t + s * h, LCFG) for s in (1, -1))
        da, dz = (a_hi - a_lo) / (2 * h), (z_hi - z_lo) / (2 * h)
    assert va[0] == pytest.approx(da[0], abs=1e-8)
    assert vz[0] == pytest.approx(dz[0], abs=1e-8)


def test_latent_endpoint_widths():
    cfg = LCFG
    g0 = latent_joint(SINE, 0.0, cfg)
    assert g0.cov11 == pytest.approx(cfg.sigma0**2)
    assert g0.cov12 == 0.0 and g0.cov22 == 1.0
    g1 = latent_joint(SINE, 1.0, cfg)
    assert g1.cov11 == pytest.approx(cfg.sigma1**2)
    assert g1.cov22 == pytest.approx(cfg.sigma1**2)


@pytest.mark.parametrize("t", [0.0, 0.5, 1.0])
def test_forward_pushforward_matches_joint(t):
    rng = np.random.default_rng(11)
    n = 10_000
    a0 = SINE.eval(0.0) + LCFG.sigma0 * rng.standard_normal((n, 1))
    z0 = rng.standard_normal((n, 1))
    a, z = latent_flow_forward(SINE, a0, z0, t, LCFG)
    g = latent_joint(SINE, t, LCFG)
    emp = np.cov(np.stack([a[:, 0], z[:, 0]]))
    assert abs(a.mean() - g.mean[0]) < 0.01 and abs(z.mean() - g.mean[1]) < 0.01
    for got, want in ((emp[0, 0], g.cov11), (emp[1, 1], g.cov22)):
        assert got == pytest.approx(want, rel=0.05)
    if abs(g.cov12) > 1e-12:
        assert emp[0, 1] == pytest.approx(g.cov12, rel=0.05)
    else:
        assert abs(emp[0, 1]) < 0.05 * math.sqrt(g.cov11 * g.cov22) + 1e-12


def test_sample_latent_joint_covariance():
    rng = np.random.default_rng(5)
    a, z = sample_latent_joint(SINE, 0.5, LCFG, rng, size=20000)
    g = latent_joint(SINE, 0.5, LCFG)
    emp = np.cov(np.stack([a[:, 0], z[:, 0]]))
    np.testing.assert_allclose(emp, g.cov, rtol=0.05)


def test_gaussian2_rejects_non_psd():
    with pytest.raises(ValueError):
        Gaussian2(np.zeros(2), 1.0, 2.0, 1.0)


def test_discretized_demo_works_too():
    tr = Trajectory(np.linspace(0, 1, 9)[:, None])
    v = conditional_velocity(tr, tr.eval(0.3), 0.3, FlowConfig())
    assert v[0] == pytest.approx(1.0)
