import numpy as np
import pytest

from kahlerflow.datasets import sample_complex_gaussian
from kahlerflow.flow import LOG_PI, FlowStack, base_log_prob
from kahlerflow.layers import CouplingLayer
from kahlerflow.verify import affine_stack
from kahlerflow.wirtinger import Singular, log_abs_det_sq, wirtinger_fd

from conftest import random_complex


def identity_stack(k=2):
    return FlowStack([CouplingLayer.constant(0.0, 0.0, parity=i % 2) for i in range(k)])


def test_identity_push_forward(rng):
    z = random_complex(rng, 6, 2)
    out, ld = identity_stack().push_forward(z)
    assert np.array_equal(out, z) and np.all(ld == 0)


def test_single_log2_layer_logdet(rng):
    stack = FlowStack([CouplingLayer.constant(np.log(2.0), 0.0)])
    _, ld = stack.push_forward(random_complex(rng, 4, 2))
    assert np.allclose(ld, 2 * np.log(2.0))


def test_composite_logdet_matches_fd_jacobian(rng):
    stack = FlowStack.init(3, activation=None, seed=5, out_scale=0.5)
    z = random_complex(rng, 2)
    _, ld = stack.push_forward(z)
    assert abs(ld - log_abs_det_sq(wirtinger_fd(stack, z, 1e-5).d_dz)) < 1e-4


def test_log_prob_at_mode_and_unit_sphere():
    stack = identity_stack()
    assert stack.log_prob(np.zeros(2, dtype=complex)) == pytest.approx(-2 * LOG_PI, abs=1e-15)
    w = np.array([np.sqrt(0.5), 1j * np.sqrt(0.5)])
    assert stack.log_prob(w) == pytest.approx(-2 * LOG_PI - 1, abs=1e-14)


def test_log_prob_affine_closed_form(rng):
    a, b = 2 + 1j, np.array([0.3 - 0.2j, -0.5 + 0.7j])
    w = random_complex(rng, 100, 2, scale=2.0)
    expected = -2 * LOG_PI - np.sum(np.abs((w - b) / a) ** 2, axis=1) - 4 * np.log(abs(a))
    assert np.max(np.abs(affine_stack(a, b).log_prob(w) - expected)) < 1e-9


def test_log_prob_consistent_with_push_forward(rng):
    stack = FlowStack.init(8, seed=3, out_scale=0.1)
    z = random_complex(rng, 50, 2)
    w, ld = stack.push_forward(z)
    assert np.allclose(stack.log_prob(w), base_log_prob(z) - ld, atol=1e-9)


def test_normalization_by_importance_sampling():
    stack = FlowStack.init(8, seed=11, out_scale=0.2)
    z = sample_complex_gaussian(1_000_000, seed=2).points
    # E_{z~p}[q(z)/p(z)] = ∫ q = 1
    ratio = np.exp(stack.log_prob(z) - base_log_prob(z))
    assert abs(ratio.mean() - 1.0) < 0.02


def test_identity_stack_samples_match_base():
    x = identity_stack().sample(20_000, seed=4).points
    assert abs(np.mean(np.abs(x) ** 2) - 1.0) < 0.03
    assert np.abs(x.mean(axis=0)).max() < 0.02


def test_sampling_deterministic():
    stack = FlowStack.init(4, seed=1)
    assert np.array_equal(stack.sample(100, seed=3).points, stack.sample(100, seed=3).points)


def test_log2_layer_quadruples_free_variance():
    stack = FlowStack([CouplingLayer.constant(np.log(2.0), 0.0, parity=0)])
    x = stack.sample(100_000, seed=6).points
    base = sample_complex_gaussian(100_000, seed=6).points
    ratio = np.var(x[:, 1]) / np.var(base[:, 1])
    assert abs(ratio - 4.0) < 0.2


def test_inverse_overflow_is_singular():
    stack = FlowStack([CouplingLayer.constant(-800.0, 0.0, clamp=None)])
    with pytest.raises(Singular):
        stack.log_prob(np.array([[1.0 + 0j, 1.0 + 0j]]))


def test_checkpoint_round_trip(tmp_path, rng):
    stack = FlowStack.init(8, seed=9, out_scale=0.5)
    stack.save(tmp_path / "ck.json")
    clone = FlowStack.load(tmp_path / "ck.json")
    w = random_complex(rng, 10, 2)
    assert np.array_equal(clone.log_prob(w), stack.log_prob(w))
    header = stack.to_dict()
    assert header["K"] == 8 and header["d"] == 2 and header["base"] == "complex_unit_gaussian"


def test_checkpoint_validation():
    d = FlowStack.init(2).to_dict()
    with pytest.raises(ValueError):
        FlowStack.from_dict({**d, "K": 3})
    with pytest.raises(ValueError):
        FlowStack.from_dict({**d, "base": "student_t"})
    with pytest.raises(ValueError):
        FlowStack([])


def test_alternating_parity():
    assert [layer.parity for layer in FlowStack.init(8).layers] == [0, 1] * 4


def test_log_prob_of_samples_is_finite():
    stack = FlowStack.init(8, seed=12, out_scale=0.3)
    x = stack.sample(20_000, seed=1).points
    assert np.all(np.isfinite(stack.log_prob(x)))
