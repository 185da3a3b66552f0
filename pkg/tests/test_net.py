import numpy as np
import pytest

from streamflow.core import ObservationHistory
from streamflow.net import (
    Checkpoint,
    NetDims,
    NetworkParams,
    OptimizerState,
    adam_step,
    build_inputs,
    checkpoint_dumps,
    checkpoint_load,
    checkpoint_loads,
    checkpoint_save,
    net_forward,
    net_init,
    net_loss_grad,
    time_features,
)


def finite_difference_check(p, a, t, h, v, eps=1e-6):
    """Largest relative error between analytic and central-difference gradients."""
    _, grads = net_loss_grad(p, a, t, h, v)
    g = grads.flat()
    x = p.flat()
    num = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        lp, _ = net_loss_grad(p.from_flat(xp), a, t, h, v)
        lm, _ = net_loss_grad(p.from_flat(xm), a, t, h, v)
        num[i] = (lp - lm) / (2 * eps)
    scale = np.maximum(np.abs(num), np.abs(g))
    big = scale > 1e-7
    return float(np.max(np.abs(num - g)[big] / scale[big]))


def random_problem(seed, state=2, cond=3, hidden=(6, 5), batch=7):
    rng = np.random.default_rng(seed)
    p = net_init(seed, NetDims(state, cond, state, hidden))
    a = rng.standard_normal((batch, state))
    t = rng.random(batch)
    h = rng.standard_normal((batch, cond))
    v = rng.standard_normal((batch, state))
    return p, a, t, h, v


def test_time_features():
    f = time_features([0.0, 0.25])
    np.testing.assert_allclose(f[0], [0, 0, 1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(f[1], [0.25, np.sin(np.pi / 4), np.cos(np.pi / 4), 1, 0], atol=1e-15)


def test_init_bounds_and_zero_bias():
    dims = NetDims(3, 4, 3, (50, 40))
    p = net_init(0, dims)
    for w, b in zip(p.weights, p.biases):
        bound = np.sqrt(6.0 / w.shape[0])
        assert np.all(np.abs(w) <= bound)
        assert np.all(b == 0)
    assert p.num_params == sum(w.size + b.size for w, b in zip(p.weights, p.biases))


def test_init_deterministic():
    dims = NetDims(1, 2, 1)
    a, b = net_init(5, dims), net_init(5, dims)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_zero_width_layer_rejected():
    with pytest.raises(ValueError, match="zero-width"):
        NetDims(1, 1, 1, (8, 0, 8))


def test_shape_chain_checked():
    p = net_init(0, NetDims(1, 1, 1, (4,)))
    with pytest.raises(ValueError):
        NetworkParams(p.dims, [p.weights[0], p.weights[0]], p.biases)


def test_forward_single_and_batch_agree():
    p, a, t, h, _ = random_problem(1)
    batch = net_forward(p, a, t, h)
    for i in range(len(a)):
        np.testing.assert_allclose(net_forward(p, a[i], t[i], h[i]), batch[i], atol=1e-14)


def test_forward_accepts_history_object():
    p = net_init(0, NetDims(1, 2, 1, (4,)))
    hist = ObservationHistory(np.array([[0.3], [0.4]]))
    np.testing.assert_array_equal(net_forward(p, [0.1], 0.5, hist), net_forward(p, [0.1], 0.5, np.array([0.3, 0.4])))


def test_input_width_mismatch_raises():
    p = net_init(0, NetDims(2, 3, 2, (4,)))
    with pytest.raises(ValueError):
        build_inputs(p.dims, np.zeros((1, 3)), 0.0, np.zeros(3))
    with pytest.raises(ValueError):
        build_inputs(p.dims, np.zeros((1, 2)), 0.0, np.zeros(2))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    assert finite_difference_check(*random_problem(seed)) < 1e-4


def test_loss_is_mean_over_batch_of_summed_squares():
    p, a, t, h, v = random_problem(3)
    loss, _ = net_loss_grad(p, a, t, h, v)
    out = net_forward(p, a, t, h)
    assert loss == pytest.approx(np.mean(np.sum((out - v) ** 2, axis=1)))


def test_loss_rejects_bad_target():
    p, a, t, h, v = random_problem(0)
    with pytest.raises(ValueError):
        net_loss_grad(p, a, t, h, v[:, :1])


class TestAdam:
    def _quadratic(self):
        dims = NetDims(1, 0, 1, (1,))
        p = net_init(0, dims)
        return p.with_arrays([np.full_like(x, 1.0) for x in p.arrays()])

    def test_first_step_moves_by_lr_times_sign(self):
        p = self._quadratic()
        grads = p.with_arrays([np.full_like(x, 3.0) for x in p.arrays()])
        q, state = adam_step(p, OptimizerState.zeros(p), grads, lr=0.1)
        assert state.step == 1
        for x in q.arrays():
            np.testing.assert_allclose(x, 1.0 - 0.1, atol=1e-7)

    def test_minimizes_w_squared(self):
        p = self._quadratic()
        state = OptimizerState.zeros(p)
        for _ in range(200):
            grads = p.with_arrays([2.0 * x for x in p.arrays()])
            p, state = adam_step(p, state, grads, lr=0.1)
        assert max(np.max(np.abs(x)) for x in p.arrays()) < 0.05

    def test_does_not_mutate_inputs(self):
        p = self._quadratic()
        before = [x.copy() for x in p.arrays()]
        state = OptimizerState.zeros(p)
        adam_step(p, state, p, lr=0.1)
        assert all(np.array_equal(x, y) for x, y in zip(before, p.arrays()))
        assert state.step == 0

    def test_shape_mismatch(self):
        p = self._quadratic()
        other = net_init(0, NetDims(2, 0, 2, (1,)))
        with pytest.raises(ValueError):
            adam_step(p, OptimizerState.zeros(p), other)


def test_checkpoint_round_trip_is_exact(tmp_path):
    p, a, t, h, _ = random_problem(4)
    ck = Checkpoint("plain", p, {"flow": {"k": 5.0, "sigma0": 0.05}})
    checkpoint_save(ck, tmp_path / "m.json")
    back = checkpoint_load(tmp_path / "m.json")
    assert back.variant == "plain" and back.config == ck.config
    assert all(np.array_equal(x, y) for x, y in zip(p.arrays(), back.params.arrays()))
    np.testing.assert_array_equal(net_forward(back.params, a, t, h), net_forward(p, a, t, h))
    assert checkpoint_dumps(back) == checkpoint_dumps(ck)


def test_checkpoint_rejects_foreign_json():
    with pytest.raises(ValueError):
        checkpoint_loads('{"format": "something-else"}')
