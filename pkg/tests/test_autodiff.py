import math

import numpy as np
import pytest
from scipy.special import ndtr

from cpfn import autodiff as ad
from cpfn.errors import NonFiniteValue


def grad_of(program, theta):
    return ad.evaluate_with_gradient(program, np.atleast_1d(np.asarray(theta, dtype=float)))


def test_square_value_and_gradient():
    res = grad_of(lambda t: t[0] * t[0], [3.0])
    assert res.value == 9.0
    np.testing.assert_array_equal(res.gradient, [6.0])


def test_gelu_at_zero_has_slope_half():
    res = grad_of(lambda t: ad.gelu(t[0]), [0.0])
    assert res.value == 0.0
    fd = ad.finite_difference_gradient(lambda t: ad.gelu(t[0]), np.array([0.0]), step=1e-6)
    assert res.gradient[0] == pytest.approx(0.5, abs=1e-12)
    assert fd[0] == pytest.approx(0.5, abs=1e-9)


def test_log_delta_plus_exp_chain_rule():
    delta = 1e-15
    prog = lambda t: ad.log(ad.exp(t[0]) + delta)
    res = grad_of(prog, [0.0])
    assert res.gradient[0] == pytest.approx(1.0 / (1.0 + delta), rel=1e-15)
    fd = ad.finite_difference_gradient(prog, np.array([0.0]))
    assert fd[0] == pytest.approx(res.gradient[0], rel=1e-9)


def test_gelu_values():
    assert float(ad.gelu(np.array(0.0))) == 0.0
    assert float(ad.gelu(np.array(10.0))) == pytest.approx(10.0, abs=1e-9)
    # 1 * Phi(1) from scipy's erfc-based normal CDF
    assert float(ad.gelu(np.array(1.0))) == pytest.approx(0.8413447460685429, abs=1e-15)
    assert float(ad.gelu(np.array(1.0))) == pytest.approx(float(ndtr(1.0)), abs=1e-15)


def test_gelu_is_exact_not_tanh_approximation():
    z = np.linspace(-4, 4, 81)
    tanh_form = 0.5 * z * (1 + np.tanh(math.sqrt(2 / math.pi) * (z + 0.044715 * z ** 3)))
    exact = z * ndtr(z)
    np.testing.assert_allclose(ad.gelu(z), exact, atol=1e-15)
    assert np.max(np.abs(ad.gelu(z) - tanh_form)) > 1e-5


def test_finite_difference_of_quadratic():
    fd = ad.finite_difference_gradient(lambda t: t[0] * t[0], np.array([3.0]), step=1e-5)
    assert fd[0] == pytest.approx(6.0, abs=1e-8)


def test_fourth_order_stencil_is_more_accurate():
    prog = lambda t: ad.exp(t[0] * 2.0)
    exact = 2.0 * math.exp(1.0)
    two = ad.finite_difference_gradient(prog, np.array([0.5]), step=1e-2)
    four = ad.finite_difference_gradient(prog, np.array([0.5]), step=1e-2, order=4)
    assert abs(four[0] - exact) < abs(two[0] - exact) / 100


def test_unsupported_primitive_raises():
    with pytest.raises(ad.UnsupportedPrimitive):
        grad_of(lambda t: np.sin(t[0]), [0.3])
    with pytest.raises(ad.UnsupportedPrimitive):
        ad.finite_difference_gradient(lambda t: np.sin(t[0]), np.array([0.3]))


def test_nonfinite_intermediate_raises():
    with pytest.raises(NonFiniteValue):
        grad_of(lambda t: ad.log(t[0] - 1.0), [1.0])
    with pytest.raises(NonFiniteValue):
        grad_of(lambda t: ad.exp(t[0] * 1000.0), [1.0])


def test_constant_program_has_zero_gradient():
    res = grad_of(lambda t: 4.2, [1.0, 2.0])
    assert res.value == 4.2
    np.testing.assert_array_equal(res.gradient, [0.0, 0.0])
    res = grad_of(lambda t: t[0] * 0.0 + 1.0, [1.0, 2.0])
    np.testing.assert_array_equal(res.gradient, [0.0, 0.0])


def _composite(t):
    W = t[:6].reshape(2, 3)
    h = ad.affine(t[6:9].reshape(1, 3), W, t[9:11])
    h = ad.tanh(ad.gelu(h)) * t[11]
    return ad.log(ad.exp(h).sum() + 0.5) + (t[:3] ** 3).sum() * 0.1 - ad.square(t[3:5]).mean()


@pytest.mark.parametrize("seed", range(25))
def test_primitive_compositions_match_finite_differences(seed):
    theta = np.random.default_rng(seed).normal(size=12)
    res = grad_of(_composite, theta)
    fd = ad.finite_difference_gradient(_composite, theta, step=1e-5)
    rel = np.abs(res.gradient - fd) / np.maximum(np.abs(fd), 1e-6)
    assert rel.max() < 1e-5


def test_gradient_is_linear_in_programs():
    theta = np.random.default_rng(1).normal(size=12)
    p = lambda t: _composite(t)
    q = lambda t: ad.square(t).sum() * 0.5 + ad.tanh(t[2])
    gp, gq = grad_of(p, theta).gradient, grad_of(q, theta).gradient
    gsum = grad_of(lambda t: p(t) * 2.5 + q(t) * -1.5, theta).gradient
    np.testing.assert_allclose(gsum, 2.5 * gp - 1.5 * gq, atol=1e-12)


def test_matmul_transpose_reshape_getitem_gradients():
    def prog(t):
        A = t[:6].reshape(2, 3)
        B = t[6:12].reshape(3, 2)
        return (A @ B).T[1, :].sum() + (A - 1.0).reshape(6)[::2].sum() / 2.0

    theta = np.random.default_rng(2).normal(size=12)
    np.testing.assert_allclose(grad_of(prog, theta).gradient,
                               ad.finite_difference_gradient(prog, theta), rtol=1e-8, atol=1e-10)


def test_parameter_vector_segments():
    pv = ad.ParameterVector.from_shapes([("W", (2, 3)), ("b", (3,))])
    assert pv.values.size == 9
    pv["W"][:] = 1.0
    pv["b"][:] = [1, 2, 3]
    np.testing.assert_array_equal(pv.values, [1] * 6 + [1, 2, 3])
    parts = pv.unflatten(pv.values * 2)
    np.testing.assert_array_equal(parts["b"], [2, 4, 6])
    assert pv.mask(["b"]).sum() == 3
    assert pv.copy() == pv


def test_rank_contract_matches_einsum_and_finite_differences():
    r = np.random.default_rng(4)
    phi, psi = r.normal(size=(4, 3, 2)), r.normal(size=(5, 3, 2))
    np.testing.assert_allclose(ad.rank_contract(phi, psi), np.einsum("ikc,jkc->ijc", phi, psi), rtol=1e-14)
    w = r.normal(size=(4, 5, 2))
    theta = np.concatenate([phi.ravel(), psi.ravel()])

    def prog(t):
        a, b = t[:24].reshape(4, 3, 2), t[24:].reshape(5, 3, 2)
        return (ad.rank_contract(a, b) * w).sum()

    res = grad_of(prog, theta)
    fd = ad.finite_difference_gradient(prog, theta, step=1e-5)
    np.testing.assert_allclose(res.gradient, fd, atol=1e-8)
