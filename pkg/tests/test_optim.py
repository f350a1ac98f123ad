import math

import numpy as np
import pytest

from neuroswap.errors import ContractError
from neuroswap.optim import AdamState, adam_step, cosine_lr
from neuroswap.tensor import Tensor


def test_first_adam_step_moves_by_lr_times_sign():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    st = AdamState.for_params([p], lr=0.1, weight_decay=0.0)
    adam_step([p], [np.array([3.0, -0.5])], st)
    # bias-corrected first step is lr * g / |g|
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


def test_weight_decay_is_decoupled():
    p = Tensor(np.array([2.0]), requires_grad=True)
    st = AdamState.for_params([p], lr=0.1, weight_decay=0.5)
    adam_step([p], [np.array([0.0])], st)
    # zero gradient: only p <- p - lr*wd*p applies
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_none_gradient_leaves_parameter_frozen():
    p = Tensor(np.array([2.0]), requires_grad=True)
    st = AdamState.for_params([p], weight_decay=0.1)
    adam_step([p], [None], st)
    assert p.data[0] == 2.0
    assert st.m[0][0] == 0.0


def test_adam_rejects_mismatched_lengths():
    p = Tensor(np.zeros(2), requires_grad=True)
    st = AdamState.for_params([p])
    with pytest.raises(ContractError):
        adam_step([p, p], [None, None], st)


def test_adam_minimises_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    st = AdamState.for_params([p], lr=0.1, weight_decay=0.0)
    for _ in range(500):
        adam_step([p], [2 * p.data], st)
    assert np.abs(p.data).max() < 1e-2


def test_cosine_schedule_shape():
    base = 1e-3
    assert cosine_lr(0, 100, 10, base) == pytest.approx(base / 10)
    assert cosine_lr(9, 100, 10, base) == pytest.approx(base)
    assert cosine_lr(10, 100, 10, base) == pytest.approx(base)
    assert cosine_lr(55, 100, 10, base) == pytest.approx(0.5 * base)
    assert cosine_lr(100, 100, 10, base) == pytest.approx(0.0, abs=1e-15)
    mid = cosine_lr(30, 100, 10, base)
    assert mid == pytest.approx(0.5 * base * (1 + math.cos(math.pi * 20 / 90)))
