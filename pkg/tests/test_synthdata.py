import numpy as np
import pytest

from neuroswap.errors import ConfigurationError
from neuroswap.evaluation import linear_probe
from neuroswap.objectives import mmd
from neuroswap.synthdata import (MultiDomainDataset, WorldConfig, actions_at, generate_world, split_train_test,
                                 synchronize, windows_for)
from neuroswap.tensor import Tensor

from conftest import micro_world_config


def test_same_seed_is_bit_identical(micro_world):
    again = generate_world(micro_world_config(), seed=0)
    for a, b in zip(micro_world.all_trials(), again.all_trials()):
        np.testing.assert_array_equal(a.behavior, b.behavior)
        np.testing.assert_array_equal(a.neural, b.neural)
        assert a.intervals == b.intervals


def test_different_seed_differs(micro_world):
    other = generate_world(micro_world_config(), seed=1)
    assert not np.array_equal(micro_world.trials[0][0].neural, other.trials[0][0].neural)


@pytest.mark.parametrize("kw", [dict(n_domains=1), dict(behavior_fps=0.0), dict(gamma_gen=1.0),
                                dict(visible_range=(0.5, 1.2)), dict(n_actions=1)])
def test_invalid_config(kw):
    with pytest.raises(ConfigurationError):
        micro_world_config(**kw).validate()


def test_config_round_trip():
    cfg = micro_world_config(layout_seed=3)
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg


def test_shapes_and_rates(micro_world):
    cfg = micro_world.config
    tr = micro_world.trials[1][0]
    assert tr.behavior.shape[1:] == (cfg.n_joints, 3)
    assert tr.neural.shape[1:] == cfg.image_size
    assert np.median(np.diff(tr.behavior_t)) == pytest.approx(1 / cfg.behavior_fps)
    assert np.median(np.diff(tr.neural_t)) == pytest.approx(1 / cfg.neural_fps)
    assert micro_world.n_domains == cfg.n_domains
    assert all(len(d) == cfg.n_trials for d in micro_world.trials)


def test_poses_are_root_centred(micro_world):
    for tr in micro_world.all_trials():
        assert np.all(tr.behavior[:, 0] == 0)


def test_calcium_follows_ar_recurrence(micro_world):
    g, a = micro_world.config.gamma_gen, micro_world.config.alpha_gen
    for tr in micro_world.trials[0]:
        c, s = tr.calcium, tr.spikes
        np.testing.assert_allclose(c[1:] - g * c[:-1], a * s[1:], atol=1e-12)


def test_preferred_neurons_fire_during_their_action():
    # action 0 is the near-still rest state (lowest vigor)
    ds = generate_world(micro_world_config(n_trials=4, trial_seconds=40.0), seed=2)
    assert np.argmin(ds.meta["vigor"]) == 0
    for d, dom in enumerate(ds.trials):
        pref = np.array(ds.meta["domains"][d]["preferred_action"])
        calcium = np.concatenate([t.calcium for t in dom])
        acts = np.concatenate([t.neural_actions for t in dom])
        for a in range(1, ds.config.n_actions):
            cells = pref == a
            during = calcium[acts == a][:, cells].mean()
            rest = calcium[acts == 0][:, cells].mean()
            assert during >= 2 * rest


def _smooth(x, k=8):
    return np.convolve(x, np.ones(k) / k, mode="valid")


def test_neural_and_behavior_energy_correlate(micro_world):
    rs = []
    for tr in micro_world.all_trials():
        n_energy = np.linalg.norm(np.diff(tr.neural.reshape(len(tr.neural), -1), axis=0), axis=1)
        b_energy = np.linalg.norm(np.diff(tr.behavior.reshape(len(tr.behavior), -1), axis=0), axis=1)
        # behavior energy averaged onto neural frame intervals
        edges = np.searchsorted(tr.behavior_t[1:], tr.neural_t)
        b_on_n = np.array([b_energy[lo:hi].mean() if hi > lo else 0.0 for lo, hi in zip(edges[:-1], edges[1:])])
        rs.append(np.corrcoef(_smooth(n_energy), _smooth(b_on_n))[0, 1])
    assert np.mean(rs) >= 0.3


def test_raw_pose_identity_is_separable(micro_world):
    train, test = split_train_test(micro_world)
    def frames(trials):
        x = np.concatenate([t.behavior[::10].reshape(len(t.behavior[::10]), -1) for t in trials])
        y = np.concatenate([np.full(len(t.behavior[::10]), t.domain) for t in trials])
        return x, y
    xa, ya = frames(train)
    xb, yb = frames(test)
    assert linear_probe(xa, ya, xb, yb) >= 0.9


def test_identity_free_world_has_matching_pose_distributions():
    ds = generate_world(micro_world_config(identity_strength=0.0, layout_seed=0, n_domains=2,
                                           trial_seconds=40.0), seed=0)
    rng = np.random.default_rng(0)
    pools = []
    for dom in ds.trials:
        x = np.concatenate([t.behavior.reshape(len(t.behavior), -1) for t in dom])
        pools.append(x[rng.choice(len(x), 256, replace=False)])
    assert float(mmd(Tensor(pools[0]), Tensor(pools[1])).data) <= 0.05


def test_identity_free_world_shares_neuron_layout():
    ds = generate_world(micro_world_config(identity_strength=0.0, layout_seed=0), seed=0)
    pos = [np.array(d["positions"]) for d in ds.meta["domains"]]
    for p in pos[1:]:
        np.testing.assert_array_equal(p, pos[0])


def test_synchronize_window_count_and_centres(micro_world):
    tr = micro_world.trials[0][0]
    out = synchronize(tr.behavior, tr.behavior_t, tr.neural, tr.neural_t, tr.neural_actions, stride=8)
    tn = len(tr.neural_t)
    # windows whose behavior span would run past the stream ends are dropped
    assert len(out) <= (tn - 32) // 8 + 1
    assert len(out) >= (tn - 32) // 8 - 1
    half_period = 0.5 / micro_world.config.neural_fps
    for s in out:
        assert s.b.shape == (8, micro_world.config.n_joints, 3)
        assert s.n.shape == (32, *micro_world.config.image_size)
        b_centre = 0.5 * (tr.behavior_t[s.behavior_index[3]] + tr.behavior_t[s.behavior_index[4]])
        assert abs(b_centre - s.center_time) < half_period


def test_synchronize_constant_rate_count():
    nt = np.arange(100) / 16
    bt = np.arange(int(100 / 16 * 100) + 200) / 100 - 1.0
    out = synchronize(np.zeros((len(bt), 2, 3)), bt, np.zeros((100, 2, 2)), nt, np.zeros(100, int), stride=8)
    assert len(out) == (100 - 32) // 8 + 1


def test_window_inside_bout_gets_that_label():
    nt = np.arange(64) / 16
    bt = np.arange(-100, 500) / 100
    intervals = [{"start": -10.0, "end": 1.0, "action": 0}, {"start": 1.0, "end": 100.0, "action": 3}]
    out = synchronize(np.zeros((len(bt), 2, 3)), bt, np.zeros((64, 2, 2)), nt, actions_at(intervals, nt),
                      stride=32)
    assert out[-1].action == 3


def test_synchronize_no_overlap_warns(caplog):
    with caplog.at_level("WARNING"):
        out = synchronize(np.zeros((10, 2, 3)), np.arange(10) / 100 + 50, np.zeros((40, 2, 2)),
                          np.arange(40) / 16, None)
    assert out == [] and "overlap" in caplog.text


def test_split_defaults():
    ds = generate_world(micro_world_config(n_trials=8, trial_seconds=10.0), seed=0)
    train, test = split_train_test(ds)
    for d in range(ds.n_domains):
        assert sum(t.domain == d for t in train) == 6
        assert sum(t.domain == d for t in test) == 2
    keys_train = {(t.domain, t.index) for t in train}
    assert not keys_train & {(t.domain, t.index) for t in test}
    assert all(s.trial in {t.index for t in test} for s in windows_for(test))


def test_split_needs_three_trials():
    ds = generate_world(micro_world_config(n_trials=2, trial_seconds=10.0), seed=0)
    with pytest.raises(ConfigurationError):
        split_train_test(ds)


def test_save_load_round_trip(micro_world, tmp_path):
    micro_world.save(tmp_path)
    assert (tmp_path / "world.json").exists()
    assert (tmp_path / "domain_0" / "trial_0_behavior.nswt").exists()
    back = MultiDomainDataset.load(tmp_path)
    assert back.config == micro_world.config and back.seed == micro_world.seed
    for a, b in zip(micro_world.all_trials(), back.all_trials()):
        np.testing.assert_array_equal(a.behavior, b.behavior)
        np.testing.assert_array_equal(a.neural, b.neural)
        np.testing.assert_array_equal(a.neural_actions, b.neural_actions)
