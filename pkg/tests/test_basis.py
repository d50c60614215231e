import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdfkit import basis
from rdfkit.basis import AxisBox, BasisConfig


def test_linear_basis_values():
    np.testing.assert_allclose(basis.eval_1d(0.25, 2), [0.75, 0.25], atol=1e-15)


def test_endpoints_are_unit_vectors():
    for n in (2, 5, 32):
        phi0 = basis.eval_1d(0.0, n)
        phi1 = basis.eval_1d(1.0, n)
        assert phi0[0] == 1.0 and np.all(phi0[1:] == 0.0)
        assert phi1[-1] == 1.0 and np.all(phi1[:-1] == 0.0)


def test_matches_binomial_formula():
    t, n = 0.37, 7
    expected = [math.comb(n - 1, k) * t ** k * (1 - t) ** (n - 1 - k) for k in range(n)]
    np.testing.assert_allclose(basis.eval_1d(t, n), expected, rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(t=st.floats(0.0, 1.0), n=st.integers(2, 32))
def test_partition_of_unity_and_derivative_sum(t, n):
    assert abs(basis.eval_1d(t, n).sum() - 1.0) <= 1e-12
    assert abs(basis.grad_1d(t, n).sum()) <= 1e-10
    assert np.all(basis.eval_1d(t, n) >= 0.0)


def test_derivative_matches_central_difference():
    h = 1e-6
    for n in (2, 4, 9, 20):
        for t in (0.1, 0.5, 0.83):
            fd = (basis.eval_1d(t + h, n) - basis.eval_1d(t - h, n)) / (2 * h)
            np.testing.assert_allclose(basis.grad_1d(t, n), fd, atol=1e-6 * n * n)


@pytest.mark.parametrize("n", [1, 0, 33, 2.5])
def test_rejects_bad_n(n):
    with pytest.raises(ValueError):
        basis.eval_1d(0.5, n)


@pytest.mark.parametrize("t", [-0.1, 1.1, float("nan")])
def test_rejects_bad_t(t):
    with pytest.raises(ValueError):
        basis.eval_1d(t, 4)


def test_feature_flattening_order():
    cfg = BasisConfig(3, AxisBox((0, 0, 0), (1, 1, 1)))
    p = np.array([0.2, 0.5, 0.9])
    a, b, c = (basis.eval_1d(x, 3) for x in p)
    psi = basis.features(p, cfg)
    assert psi.shape == (27,)
    # axis 1 slowest
    assert psi[1 * 9 + 2 * 3 + 0] == pytest.approx(a[1] * b[2] * c[0], rel=1e-15)


def test_features_on_physical_domain():
    box = AxisBox((-1.0, 0.0, 2.0), (1.0, 4.0, 3.0))
    cfg = BasisConfig(4, box)
    p = np.array([[0.0, 1.0, 2.5]])
    direct = np.kron(np.kron(basis.eval_1d(0.5, 4), basis.eval_1d(0.25, 4)), basis.eval_1d(0.5, 4))
    np.testing.assert_allclose(basis.features(p, cfg)[0], direct, rtol=1e-14)


def test_outside_domain_rejected():
    cfg = BasisConfig(4, AxisBox((0, 0, 0), (1, 1, 1)))
    with pytest.raises(ValueError):
        basis.features(np.array([[1.5, 0.5, 0.5]]), cfg)


def test_metric_gradient_matches_finite_difference(rng):
    box = AxisBox((-0.3, -0.1, 0.0), (0.5, 0.2, 0.4))
    cfg = BasisConfig(6, box)
    w = rng.normal(size=cfg.n_features)
    p = box.lo + rng.uniform(0.1, 0.9, size=(20, 3)) * box.extent
    _, g = basis.evaluate(p, cfg, w, with_grad=True)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (basis.evaluate(p + e, cfg, w) - basis.evaluate(p - e, cfg, w)) / (2 * h)
        np.testing.assert_allclose(g[:, i], fd, rtol=1e-6, atol=1e-6)


def test_evaluate_matches_feature_product(rng):
    cfg = BasisConfig(5, AxisBox((0, 0, 0), (2, 1, 1)))
    w = rng.normal(size=cfg.n_features)
    p = rng.uniform(0, 1, size=(50, 3)) * [2, 1, 1]
    v, g = basis.evaluate(p, cfg, w, with_grad=True)
    np.testing.assert_allclose(v, basis.features(p, cfg) @ w, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(g, basis.features_grad(p, cfg) @ w, rtol=1e-12, atol=1e-12)


def test_constant_weights_reproduce_constant():
    cfg = BasisConfig(8, AxisBox((0, 0, 0), (1, 1, 1)))
    p = np.random.default_rng(0).uniform(size=(100, 3))
    v, g = basis.evaluate(p, cfg, np.full(cfg.n_features, 0.7), with_grad=True)
    np.testing.assert_allclose(v, 0.7, atol=1e-13)
    np.testing.assert_allclose(g, 0.0, atol=1e-11)


def test_axis_box_validation_and_round_trip():
    with pytest.raises(ValueError):
        AxisBox((0, 0, 0), (1, 0, 1))
    box = AxisBox((0, -1, 2), (1, 1, 3))
    assert AxisBox.from_dict(box.to_dict()) == box
