import numpy as np
import pytest

from kahlerflow.datasets import sample_complex_gaussian, sample_two_moons
from kahlerflow.flow import LOG_PI, FlowStack
from kahlerflow.layers import CouplingLayer
from kahlerflow.training import Diverged, TrainConfig, nll_grad_check, nll_loss, train


def identity_stack():
    return FlowStack([CouplingLayer.constant(0.0, 0.0, parity=k % 2) for k in range(2)])


def params_snapshot(model):
    return [getattr(o, a).copy() for o, a in model.parameters()]


def test_identity_nll_on_base_samples():
    # E[-log p] for the standard complex Gaussian on C² is 2 log π + 2
    x = sample_complex_gaussian(10_000, seed=1).points
    assert abs(nll_loss(identity_stack(), x) - (2 * LOG_PI + 2)) < 0.05


def test_single_point_at_origin():
    assert nll_loss(identity_stack(), np.zeros((1, 2), complex)) == pytest.approx(2 * LOG_PI, abs=1e-14)


def test_nll_shuffle_invariant():
    stack = FlowStack.init(4, seed=2, out_scale=0.3)
    x = sample_two_moons(500, seed=0).points
    perm = np.random.default_rng(0).permutation(len(x))
    assert nll_loss(stack, x) == pytest.approx(nll_loss(stack, x[perm]), rel=1e-13)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        nll_loss(identity_stack(), np.zeros((0, 2), complex))


@pytest.mark.parametrize("activation", ["cgelu", None])
def test_reverse_mode_matches_finite_differences(activation):
    stack = FlowStack.init(4, activation=activation, seed=3, out_scale=0.3)
    point = sample_two_moons(4, seed=1).points
    rng = np.random.default_rng(0)
    params = stack.parameters()
    for _ in range(10):
        k = int(rng.integers(len(params)))
        flat = int(rng.integers(getattr(*params[k]).size))
        a, f = nll_grad_check(stack, point, (k, flat))
        assert abs(a - f) / max(abs(a), abs(f), 1e-8) < 1e-5


def test_zero_learning_rate_keeps_parameters():
    stack = FlowStack.init(2, seed=4)
    before = params_snapshot(stack)
    curve = train(stack, sample_two_moons(300, seed=0), TrainConfig(lr=0.0, epochs=5, batch=64))
    assert all(np.array_equal(a, b) for a, b in zip(before, params_snapshot(stack)))
    assert len(curve) == 5


def test_training_is_deterministic():
    data = sample_two_moons(300, seed=0)
    runs = []
    for _ in range(2):
        stack = FlowStack.init(2, seed=4)
        runs.append((train(stack, data, TrainConfig(epochs=20, batch=64)), params_snapshot(stack)))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_short_training_reduces_nll():
    data = sample_two_moons(1000, seed=0)
    stack = FlowStack.init(4, seed=4)
    start = nll_loss(stack, data)
    train(stack, data, TrainConfig(lr=5e-3, epochs=200, batch=128))
    assert nll_loss(stack, data) < start


def test_non_finite_data_diverges():
    x = sample_two_moons(64, seed=0).points.copy()
    x[0, 0] = np.inf
    with pytest.raises(Diverged, match="epoch 0"):
        train(FlowStack.init(2, seed=1), x, TrainConfig(epochs=3, batch=64))


def test_config_round_trip_and_validation():
    cfg = TrainConfig(lr=1e-2, epochs=10)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="momentum"):
        TrainConfig.from_dict({"momentum": 0.9})
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
