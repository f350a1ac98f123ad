import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuroswap import augment as A
from neuroswap.errors import ConfigurationError, DimensionError

J = 4


def two_domain_index(far: float = math.log(2), n_neighbors: int = 128):
    """Domain 0 holds the query pose (origin); domain 1 holds candidates at distance 0 and ``far``."""
    origin = np.zeros(J * 3)
    other = np.zeros(J * 3)
    other[0] = far
    poses = {0: origin[None], 1: np.stack([origin, other])}
    windows = {0: np.zeros((1, 8 * J * 3)), 1: np.stack([np.zeros(8 * J * 3), np.r_[far, np.zeros(8 * J * 3 - 1)]])}
    ids = {0: np.array([0]), 1: np.array([1, 2])}
    return A.NeighborIndex(poses, windows, ids, n_neighbors)


# --- kernel and config


def test_calcium_kernel_values_are_exact_powers():
    k = A.CalciumKernel(gamma=0.95, length=32)
    np.testing.assert_array_equal(k.values, 0.95 ** np.arange(32))
    assert k.values[0] == 1.0
    assert np.all(np.diff(k.values) < 0)
    assert np.all((k.values > 0) & (k.values <= 1))


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.2, 1.5])
def test_calcium_kernel_rejects_bad_gamma(gamma):
    with pytest.raises(ConfigurationError):
        A.CalciumKernel(gamma=gamma)


@pytest.mark.parametrize("kw", [dict(p_mix=1.5), dict(p_swap_pose=-0.1), dict(mix_range=(0.0, 1.0)),
                                dict(temporal_drop=2.0), dict(n_neighbors=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        A.AugmentConfig(**kw)


def test_config_round_trip():
    cfg = A.AugmentConfig(p_mix=0.25, mix_range=(0.1, 0.3))
    assert A.AugmentConfig.from_dict(cfg.to_dict()) == cfg


# --- swap probabilities


def test_swap_probabilities_hand_values():
    np.testing.assert_allclose(A.swap_probabilities(np.array([0.0, math.log(2)])), [2 / 3, 1 / 3], atol=1e-9)
    np.testing.assert_allclose(A.swap_probabilities(np.array([1.3, 1.3])), [0.5, 0.5], atol=1e-12)


def test_swap_probabilities_empty_rejected():
    with pytest.raises(DimensionError):
        A.swap_probabilities(np.zeros(0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=128))
def test_swap_probabilities_normalised_and_monotone(d):
    d = np.array(d)
    p = A.swap_probabilities(d)
    assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert p[np.argmin(d)] == p.max()


# --- neighbour index


def test_neighbors_sorted_and_truncated(rng):
    behaviors = rng.normal(size=(300, 8, J, 3))
    domains = np.repeat([0, 1, 2], 100)
    idx = A.NeighborIndex.build(behaviors, domains, n_neighbors=128)
    nbr, dist = idx.pose_neighbors(rng.normal(size=(5, J * 3)), 1, source_domain=0)
    assert nbr.shape == (5, 128)
    assert np.all(np.diff(dist, axis=1) >= 0)
    assert idx.poses[1].shape[0] == 800
    wid, wd = idx.window_neighbors(behaviors[:3].reshape(3, -1), 2, source_domain=0)
    assert np.all(domains[wid] == 2)
    assert wd.shape == (3, 100)  # fewer candidates than N


def test_neighbors_match_brute_force(rng):
    behaviors = rng.normal(size=(40, 8, J, 3))
    domains = np.repeat([0, 1], 20)
    idx = A.NeighborIndex.build(behaviors, domains, n_neighbors=7)
    q = rng.normal(size=(3, J * 3))
    nbr, dist = idx.pose_neighbors(q, 1)
    full = np.linalg.norm(idx.poses[1][None] - q[:, None], axis=2)
    np.testing.assert_array_equal(nbr, np.argsort(full, axis=1, kind="stable")[:, :7])
    np.testing.assert_allclose(dist, np.sort(full, axis=1)[:, :7], atol=1e-9)


def test_neighbors_refuse_own_domain(rng):
    idx = A.NeighborIndex.build(rng.normal(size=(4, 8, J, 3)), np.array([0, 0, 1, 1]))
    with pytest.raises(ValueError):
        idx.pose_neighbors(np.zeros(J * 3), 0, source_domain=0)


def test_pose_keys_remove_duplicates(rng):
    frames = rng.normal(size=(10, J, 3))
    behaviors = np.stack([frames[i:i + 8] for i in range(3)])
    keys = np.stack([np.arange(i, i + 8) for i in range(3)])
    idx = A.NeighborIndex.build(behaviors, np.zeros(3, int), pose_keys=keys)
    assert idx.poses[0].shape[0] == 10


# --- swapping


def test_swap_behavior_pick_rates():
    idx = two_domain_index()
    b = np.zeros((1250, 8, J, 3))
    out, dom = A.swap_behavior_batch(b, np.zeros(1250, int), idx, np.random.default_rng(0))
    assert np.all(dom == 1)
    far = out.reshape(-1, J * 3)[:, 0] > 0
    assert far.size == 10_000
    assert far.mean() == pytest.approx(1 / 3, abs=0.02)


def test_swap_behavior_clone_returns_query(rng):
    pose = rng.normal(size=(J * 3,))
    idx = A.NeighborIndex({0: pose[None], 1: pose[None].copy()}, {0: np.zeros((1, 1)), 1: np.zeros((1, 1))},
                          {0: np.array([0]), 1: np.array([1])})
    b = np.broadcast_to(pose.reshape(J, 3), (8, J, 3)).copy()
    np.testing.assert_array_equal(A.swap_behavior(b, 0, idx, rng), b)


def test_swap_behavior_single_domain_is_identity(rng, caplog):
    behaviors = rng.normal(size=(5, 8, J, 3))
    idx = A.NeighborIndex.build(behaviors, np.zeros(5, int))
    with caplog.at_level("WARNING"):
        out = A.swap_behavior(behaviors[0], 0, idx, rng)
    np.testing.assert_array_equal(out, behaviors[0])
    assert "fewer than 2 domains" in caplog.text


def test_swap_behavior_uses_only_other_domains(rng):
    behaviors = rng.normal(size=(60, 8, J, 3))
    domains = np.repeat([0, 1, 2], 20)
    idx = A.NeighborIndex.build(behaviors, domains, n_neighbors=5)
    out, dom = A.swap_behavior_batch(behaviors[:20], domains[:20], idx, rng)
    assert out.shape == behaviors[:20].shape
    assert np.all(dom != 0)
    own = {p.tobytes() for p in idx.poses[0]}
    assert not any(p.tobytes() in own for p in out.reshape(-1, J * 3))
    # both other domains are used
    assert set(np.unique(dom)) == {1, 2}


def test_swap_neural_equidistant_rates():
    idx = two_domain_index(far=0.0)
    ids, dom = A.swap_neural_batch(np.zeros((10_000, 8, J, 3)), np.zeros(10_000, int), idx,
                                   np.random.default_rng(3))
    assert np.all(dom == 1)
    assert np.mean(ids == 1) == pytest.approx(0.5, abs=0.02)


def test_swap_neural_returns_other_domain(rng):
    behaviors = rng.normal(size=(30, 8, J, 3))
    neural = rng.normal(size=(30, 32, 6, 6))
    domains = np.repeat([0, 1, 2], 10)
    idx = A.NeighborIndex.build(behaviors, domains)
    for i in range(10):
        b, n, d = A.swap_neural(behaviors[i], neural[i], 0, idx, lambda k: neural[k], rng)
        assert d != 0 and n.shape == neural[i].shape
        assert any(np.array_equal(n, neural[k]) for k in range(10, 30))
        np.testing.assert_array_equal(b, behaviors[i])


def test_swap_neural_single_domain_is_identity(rng):
    behaviors = rng.normal(size=(3, 8, J, 3))
    n = rng.normal(size=(32, 4, 4))
    idx = A.NeighborIndex.build(behaviors, np.zeros(3, int))
    b, out, d = A.swap_neural(behaviors[0], n, 0, idx, lambda k: None, rng)
    assert out is n and d == 0


def test_swap_reproducible():
    behaviors = np.random.default_rng(0).normal(size=(40, 8, J, 3))
    domains = np.repeat([0, 1], 20)
    idx = A.NeighborIndex.build(behaviors, domains)
    a = A.swap_behavior_batch(behaviors, domains, idx, np.random.default_rng(9))[0]
    b = A.swap_behavior_batch(behaviors, domains, idx, np.random.default_rng(9))[0]
    np.testing.assert_array_equal(a, b)


# --- calcium and mix


def test_calcium_from_zero_is_kernel_times_donor(rng):
    donor = rng.random((5, 5))
    k = A.CalciumKernel(gamma=0.5)
    out = A.calcium_augment(np.zeros((32, 5, 5)), donor, k, rng, phase=0)
    for t, s in enumerate((1, 0.5, 0.25, 0.125)):
        np.testing.assert_array_equal(out[t], s * donor)


def test_calcium_is_additive_and_decaying(rng):
    n = rng.normal(size=(32, 4, 4))
    donor = rng.random((4, 4))
    k = A.CalciumKernel()
    a = A.calcium_augment(n, donor, k, rng, phase=5, clamp=False)
    zero = A.calcium_augment(np.zeros_like(n), donor, k, rng, phase=5, clamp=False)
    np.testing.assert_allclose(a - n, zero, atol=1e-12)
    assert np.all(np.diff(zero, axis=0) <= 0)
    clamped = A.calcium_augment(n, donor, k, rng, phase=5)
    assert clamped.min() >= 0
    np.testing.assert_allclose(np.maximum(n + zero, 0), clamped, atol=1e-12)


def test_calcium_donor_shape_checked(rng):
    with pytest.raises(DimensionError):
        A.calcium_augment(np.zeros((32, 4, 4)), np.zeros((3, 3)), A.CalciumKernel(), rng)


def test_mix_examples(rng):
    n = rng.random((32, 4, 4))
    donor = rng.random((32, 4, 4))
    np.testing.assert_array_equal(A.mix_augment(n, donor, rng, alpha=0.0), n)
    np.testing.assert_allclose(A.mix_augment(n, n, rng, alpha=0.5), 1.5 * n)
    for _ in range(20):
        alpha = rng.uniform(0, 0.5)
        out = A.mix_augment(n, donor, rng, alpha=alpha)
        assert out.mean() == pytest.approx(n.mean() + alpha * donor.mean(), abs=1e-6)


def test_mix_alpha_in_declared_range(rng):
    n = np.zeros((32, 2, 2))
    donor = np.ones((32, 2, 2))
    alphas = [A.mix_augment(n, donor, rng)[0, 0, 0] for _ in range(500)]
    assert 0.0 <= min(alphas) and max(alphas) < 0.5
    out = A.mix_augment(n, donor, rng)
    assert np.all(out == out[0, 0, 0])  # one alpha per window


def test_mix_shape_checked(rng):
    with pytest.raises(DimensionError):
        A.mix_augment(np.zeros((32, 4, 4)), np.zeros((31, 4, 4)), rng)


# --- jitter


def test_jitter_disabled_is_identity(rng):
    cfg = A.AugmentConfig.none()
    n = rng.random((32, 4, 4))
    b = rng.normal(size=(8, J, 3))
    np.testing.assert_array_equal(A.jitter_neural(n, cfg, rng), n)
    out, mask = A.jitter_behavior(b, cfg, rng)
    np.testing.assert_array_equal(out, b)
    assert mask.all()


def test_brightness_is_a_uniform_shift(rng):
    cfg = A.AugmentConfig(p_poisson=0, p_blur=0, p_color=1.0, brightness=0.3, contrast=0.0)
    n = rng.random((32, 4, 4))
    shift = A.jitter_neural(n, cfg, rng) - n
    np.testing.assert_allclose(shift, shift[0, 0, 0], atol=1e-12)
    assert abs(shift[0, 0, 0]) <= 0.3


def test_full_temporal_drop_zeroes_window(rng, caplog):
    cfg = A.AugmentConfig(temporal_drop=1.0)
    with caplog.at_level("WARNING"):
        out, mask = A.jitter_behavior(rng.normal(size=(8, J, 3)), cfg, rng)
    assert not out.any() and not mask.any()
    assert "dropped" in caplog.text


def test_behavior_jitter_one_draw_per_window(rng):
    cfg = A.AugmentConfig(p_pose_scale=1.0, p_shear=0.0, temporal_drop=0, spatial_drop=0)
    pose = rng.normal(size=(J, 3))
    b = np.broadcast_to(pose, (8, J, 3)).copy()
    out, _ = A.jitter_behavior(b, cfg, rng)
    ratio = out / b
    np.testing.assert_allclose(ratio, ratio[0, 0, 0], rtol=1e-12)
    assert 0.9 <= ratio[0, 0, 0] <= 1.1


def test_neural_jitter_keeps_shape_and_reproduces():
    cfg = A.AugmentConfig(p_poisson=1, p_blur=1, p_color=1)
    n = np.random.default_rng(0).random((3, 32, 5, 5)).astype(np.float32)
    a = A.jitter_neural_batch(n, cfg, np.random.default_rng(4))
    b = A.jitter_neural_batch(n, cfg, np.random.default_rng(4))
    assert a.shape == n.shape and a.dtype == n.dtype
    np.testing.assert_array_equal(a, b)
