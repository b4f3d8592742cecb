import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ticketlab.hnn import ArchSpec, NetworkParams, TrainConfig, init_params
from ticketlab.pruner import Mask, PruneSchedule, imp_run
from ticketlab.rgflow import (DegenerateNetworkError, eigenvalue_sequence, flow_from_trace, flow_observables,
                              layer_magnitude_fraction, sigma_exponents)
from ticketlab.systems import nonlinear_oscillator


def params_with_layer_sums(arch, sums):
    theta = np.zeros(arch.n_params)
    for s, total in zip(arch.weight_slices(), sums):
        theta[s] = -total / (s.stop - s.start)
    return NetworkParams(arch, theta, 0, theta)


def test_magnitude_fraction_examples():
    assert layer_magnitude_fraction(init_params(ArchSpec((), 2), 0)).tolist() == [1.0]
    two = ArchSpec((3,), 3)
    assert np.allclose(layer_magnitude_fraction(params_with_layer_sums(two, [1.0, 1.0])), [0.5, 0.5])
    three = ArchSpec((2, 2), 2)
    assert np.allclose(layer_magnitude_fraction(params_with_layer_sums(three, [1.0, 2.0, 7.0])), [0.1, 0.2, 0.7])


def test_magnitude_fraction_respects_mask_and_ignores_biases():
    arch = ArchSpec((4, 4), 2)
    p = init_params(arch, 0)
    theta = p.theta.copy()
    theta[arch.n_weights:] = 100.0
    mask = Mask.ones(arch)
    mask.bits[arch.weight_slices()[0]] = False
    m = layer_magnitude_fraction(NetworkParams(arch, theta, 0, p.init), mask)
    assert m[0] == 0.0 and m.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DegenerateNetworkError):
        layer_magnitude_fraction(p, Mask(arch, np.zeros(arch.n_weights, bool)))


def test_eigenvalues():
    assert np.all(eigenvalue_sequence([[0.3, 0.7]] * 4) == 1.0)
    assert np.allclose(eigenvalue_sequence([[0.5, 0.5], [0.6, 0.4]]), [[1.2, 0.8]])
    with pytest.raises(ValueError):
        eigenvalue_sequence([[0.5, 0.5]])
    lam = eigenvalue_sequence([[0.0, 1.0], [0.0, 1.0]])
    assert math.isnan(lam[0, 0]) and lam[0, 1] == 1.0


def test_sigma_examples():
    assert np.all(sigma_exponents(np.ones((5, 3)), [1 / 0.95] * 5).sigma == 0.0)
    l = np.array([1.5, 2.0, 1.25])
    res = sigma_exponents(np.stack([l, l ** -2], axis=1), l)
    assert np.allclose(res.sigma, [1.0, -2.0])
    with pytest.raises(ValueError):
        sigma_exponents(np.ones((2, 2)), [1.0, 2.0])
    res = sigma_exponents([[-1.0, 2.0]], [2.0])
    assert math.isnan(res.per_iteration[0, 0]) and res.sigma[1] == 1.0


def test_sigma_mean_over_included_only():
    lam = np.array([[2.0], [4.0], [1000.0]])
    res = sigma_exponents(lam, [2.0, 2.0, 2.0], include=[True, True, False])
    assert res.sigma[0] == pytest.approx(1.5)
    assert res.per_iteration[2, 0] == pytest.approx(math.log2(1000.0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 10.0), min_size=3, max_size=3), min_size=2, max_size=12))
def test_telescoping_and_normalisation(raw):
    M = np.array(raw)
    M /= M.sum(axis=1, keepdims=True)
    counts = 1000 * 0.9 ** np.arange(len(M))
    flow = flow_observables(M, counts)
    assert np.allclose(flow.fractions.sum(axis=1), 1.0, atol=1e-12)
    prod = np.prod(flow.lambdas, axis=0)
    np.testing.assert_allclose(prod, M[-1] / M[0], rtol=1e-10)
    assert np.allclose(flow.scales, 1 / 0.9)


def test_flow_from_small_trace():
    system = nonlinear_oscillator()
    arch = ArchSpec((6, 6), 2)
    trace = imp_run(system, arch, PruneSchedule(rate=0.2, max_iterations=6), TrainConfig(epochs=20, n_points=12),
                    seed=3)
    flow = flow_from_trace(trace)
    assert flow.fractions.shape == (7, 3)
    assert np.allclose(flow.fractions.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(flow.fractions >= 0)
    text = flow.to_csv().splitlines()
    assert text[0] == ("iteration,density,M_1,M_2,M_3,lambda_1,lambda_2,lambda_3,"
                       "sigma_1,sigma_2,sigma_3")
    assert len(text) == 1 + 7 + 1 and text[-1].startswith("mean,")
    assert text[7].endswith(",,,,,,")
    assert flow.relevant.dtype == bool
