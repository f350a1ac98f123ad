import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuroswap import tensor as T
from neuroswap.errors import ConfigurationError, ContractError, DimensionError, DomainError, NonFiniteError
from neuroswap.gradcheck import OP_TOL, run_suite, suite
from neuroswap.tensor import Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_add_broadcast_gradient_sums_over_broadcast_axes():
    a = leaf(np.ones((3, 4)))
    b = leaf(np.ones((1, 4)))
    T.tsum(T.add(a, b)).backward()
    np.testing.assert_array_equal(a.grad, np.ones((3, 4)))
    np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))


def test_fan_out_accumulates():
    x = leaf([2.0])
    y = T.add(T.mul(x, x), x)  # x used three times
    T.tsum(y).backward()
    assert x.grad[0] == pytest.approx(2 * 2.0 + 1)


def test_second_backward_raises():
    x = leaf([1.0, 2.0])
    y = T.tsum(T.square(x))
    y.backward()
    with pytest.raises(ContractError):
        y.backward()


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(leaf([1.0, 0.0]))


def test_nonfinite_output_raises():
    with pytest.raises(NonFiniteError):
        T.exp(leaf([1e5]))


def test_no_grad_builds_no_graph():
    x = leaf([1.0, 2.0])
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


def test_conv_output_extent():
    x = leaf(np.zeros((2, 3, 9, 7)))
    k = leaf(np.zeros((5, 3, 3, 3)))
    y = T.conv(x, k, stride=2, padding=1)
    assert y.shape == (2, 5, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)


def test_conv_matches_direct_cross_correlation(rng):
    x = rng.normal(size=(1, 2, 5))
    k = rng.normal(size=(3, 2, 3))
    y = T.conv(Tensor(x), Tensor(k)).data
    ref = np.array([[[np.sum(x[0, :, i:i + 3] * k[o]) for i in range(3)] for o in range(3)]])
    np.testing.assert_allclose(y, ref, rtol=1e-12)


def test_max_pool_ties_route_to_first_index():
    x = leaf(np.array([[[1.0, 1.0, 0.0, 2.0]]]))
    y = T.pool_max(x, 2)
    T.tsum(y).backward()
    np.testing.assert_array_equal(x.grad, [[[1.0, 0.0, 0.0, 1.0]]])


def test_log_softmax_mask_blocks_gradient():
    mask = np.array([[True, False, True]])
    x = leaf([[0.3, 5.0, -1.0]])
    y = T.log_softmax(x, axis=1, mask=mask)
    assert y.data[0, 1] == 0.0
    np.testing.assert_allclose(np.exp(y.data[0, [0, 2]]).sum(), 1.0)
    T.tsum(y).backward()
    assert x.grad[0, 1] == 0.0


def test_batch_norm_running_stats_use_unbiased_variance():
    x = Tensor(np.array([[1.0], [3.0]]))
    st_ = T.BatchNormState(1, np.float64)
    T.batch_norm(x, st_, "train")
    assert st_.running_mean[0] == pytest.approx(0.1 * 2.0)
    assert st_.running_var[0] == pytest.approx(0.9 + 0.1 * 2.0)  # unbiased var of (1, 3) is 2


def test_batch_norm_train_needs_two_samples():
    with pytest.raises(ConfigurationError):
        T.batch_norm(Tensor(np.ones((1, 2))), T.BatchNormState(2, np.float64), "train")


def test_grad_reverse_scales_by_minus_lambda():
    x = leaf([1.0, -2.0])
    T.tsum(T.grad_reverse(x, 10.0)).backward()
    np.testing.assert_array_equal(x.grad, [-10.0, -10.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_softmax_sums_to_one(vals):
    y = T.softmax(Tensor(np.array([vals])), axis=1).data
    assert y.sum() == pytest.approx(1.0, abs=1e-12)
    assert (y >= 0).all()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=6), st.floats(0.1, 4))
def test_l2_normalize_is_scale_invariant(vals, c):
    x = np.array([vals])
    if np.linalg.norm(x) < 1e-3:
        return
    a = T.l2_normalize(Tensor(x), axis=1).data
    b = T.l2_normalize(Tensor(c * x), axis=1).data
    np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("name", sorted(k for k, (_, tol) in suite().items() if tol == OP_TOL))
def test_op_gradcheck(name):
    err, tol = run_suite([name])[name]
    assert err <= tol
