import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erf

from kahlerflow.layers import MLP, ComplexLinear, CouplingLayer, cgelu_complex
from kahlerflow.wirtinger import NonFinite, log_abs_det_sq, wirtinger_fd

from conftest import random_complex


def gelu_reference(r):
    return 0.5 * r * (1 + erf(r / np.sqrt(2)))


def test_cgelu_zero_and_asymptote():
    assert cgelu_complex(np.array([0j]))[0] == 0
    assert cgelu_complex(np.array([10.0 + 0j]))[0] == pytest.approx(10.0, abs=1e-12)


def test_cgelu_matches_modulus_gate(rng):
    z = random_complex(rng, 200)
    r = np.abs(z)
    assert np.allclose(cgelu_complex(z), gelu_reference(r) * z / r, atol=1e-14)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 2 * np.pi))
def test_cgelu_phase_equivariance(x, y, phase):
    z = np.array([x + 1j * y])
    rot = np.exp(1j * phase)
    assert abs(abs(cgelu_complex(rot * z)[0]) - abs(cgelu_complex(z)[0])) < 1e-12
    assert abs(cgelu_complex(rot * z)[0] - rot * cgelu_complex(z)[0]) < 1e-12


def test_complex_linear_is_complex_matrix_product(rng):
    lin = ComplexLinear.init(3, 4, rng)
    lin.bias_re[:] = rng.standard_normal(4)
    lin.bias_im[:] = rng.standard_normal(4)
    z = random_complex(rng, 5, 3)
    re, im = lin(z.real, z.imag)
    expected = z @ (lin.A + 1j * lin.B).T + (lin.bias_re + 1j * lin.bias_im)
    assert np.allclose(re + 1j * im, expected, atol=1e-14)


def test_complex_linear_shape_validation():
    with pytest.raises(ValueError):
        ComplexLinear(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        ComplexLinear(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(3), np.zeros(3))


def test_zero_coupling_is_identity(rng):
    layer = CouplingLayer.constant(0.0, 0.0)
    z = random_complex(rng, 10, 2)
    out, ld = layer.forward(z)
    assert np.array_equal(out, z)
    assert np.all(ld == 0)


def test_log2_coupling_doubles_free_coordinate(rng):
    for parity in (0, 1):
        layer = CouplingLayer.constant(np.log(2.0), 0.0, parity=parity)
        z = random_complex(rng, 10, 2)
        out, ld = layer.forward(z)
        assert np.allclose(out[:, parity], z[:, parity], rtol=0, atol=0)
        assert np.allclose(out[:, 1 - parity], 2 * z[:, 1 - parity], atol=1e-14)
        assert np.allclose(ld, 2 * np.log(2.0))
        back, _ = layer.inverse(out)
        assert np.allclose(back, z, atol=1e-14)


def test_coupling_logdet_matches_fd_jacobian(rng):
    layer = CouplingLayer.init(0, rng, activation=None, out_scale=0.5)
    z = random_complex(rng, 2)
    J = wirtinger_fd(layer, z, 1e-5).d_dz
    assert abs(layer.forward(z)[1] - log_abs_det_sq(J)) < 1e-5


def test_holomorphic_subnets_give_holomorphic_layer(rng):
    layer = CouplingLayer.init(1, rng, activation=None, out_scale=0.5)
    z = random_complex(rng, 20, 2)
    assert np.max(np.abs(wirtinger_fd(layer, z).d_dzbar)) < 1e-6


def test_cgelu_subnets_are_not_holomorphic(rng):
    layer = CouplingLayer.init(1, rng, out_scale=1.0)
    z = random_complex(rng, 20, 2)
    assert np.max(np.abs(wirtinger_fd(layer, z).d_dzbar)) > 1e-4


def test_round_trip_on_random_points(rng):
    layer = CouplingLayer.init(0, rng, out_scale=1.0)
    z = random_complex(rng, 1000, 2, scale=2.0)
    out, ld = layer.forward(z)
    back, ld_inv = layer.inverse(out)
    assert np.max(np.abs(back - z)) < 1e-10
    assert np.array_equal(ld, -ld_inv)


@given(st.floats(-20, 20), st.floats(-3, 3), st.integers(0, 1))
def test_round_trip_for_bounded_scales(s_re, s_im, parity):
    layer = CouplingLayer.constant(complex(s_re, s_im), 0.5 - 0.25j, parity=parity, clamp=None)
    z = np.array([[0.3 - 1.2j, -0.8 + 0.1j]])
    back = layer.inverse(layer.forward(z)[0])[0]
    # the free coordinate passes through e^{±s}; compare relative to its magnitude
    assert np.max(np.abs(back - z)) < 1e-10 * max(1.0, np.exp(abs(s_re)) * 1e-5)


def test_clamp_bounds_scale(rng):
    layer = CouplingLayer.constant(50.0, 0.0)
    assert np.allclose(layer.forward(random_complex(rng, 3, 2))[1], 20.0)


def test_overflow_raises():
    layer = CouplingLayer.constant(800.0, 0.0, clamp=None)
    with pytest.raises(NonFinite):
        layer.forward(np.array([[1.0 + 0j, 1.0 + 0j]]))


def test_single_point_shapes(rng):
    layer = CouplingLayer.init(0, rng)
    out, ld = layer.forward(random_complex(rng, 2))
    assert out.shape == (2,) and np.ndim(ld) == 0


def test_json_round_trip(rng):
    layer = CouplingLayer.init(1, rng, out_scale=0.7)
    clone = CouplingLayer.from_dict(json.loads(json.dumps(layer.to_dict())))
    z = random_complex(rng, 5, 2)
    assert np.array_equal(clone.forward(z)[0], layer.forward(z)[0])
    d = layer.to_dict()
    assert set(d["s_net"]["layers"][0]) >= {"A", "B", "bias_re", "bias_im"}


def test_mlp_rejects_unknown_activation(rng):
    with pytest.raises(ValueError):
        MLP.init([1, 4, 1], rng, activation="relu")


def test_bad_parity():
    with pytest.raises(ValueError):
        CouplingLayer.constant(parity=2)
