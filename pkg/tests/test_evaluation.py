import csv
import math

import numpy as np
import pytest

from neuroswap import evaluation as E
from neuroswap.errors import ConfigurationError
from neuroswap.harness import prepare
from neuroswap.synthdata import generate_world

from conftest import micro_world_config


def test_stratified_half_keeps_ceil_of_each_class():
    y = np.array([0] * 5 + [1] * 4 + [2] * 1)
    keep = E.stratified_subset(y, 0.5, seed=3)
    counts = np.bincount(y[keep])
    np.testing.assert_array_equal(counts, [3, 2, 1])
    np.testing.assert_array_equal(E.stratified_subset(y, 1.0), np.arange(10))


def test_fraction_must_be_declared():
    with pytest.raises(ConfigurationError):
        E.stratified_subset(np.array([0, 1]), 0.3)


def test_probe_separable(rng):
    x = np.r_[rng.normal(-3, 1, size=(50, 4)), rng.normal(3, 1, size=(50, 4))]
    y = np.r_[np.zeros(50, int), np.ones(50, int)]
    assert E.linear_probe(x, y, x, y) >= 0.99


def test_probe_random_features_at_chance(rng):
    x, xt = rng.normal(size=(600, 16)), rng.normal(size=(600, 16))
    y, yt = np.repeat(np.arange(6), 100), np.repeat(np.arange(6), 100)
    assert E.linear_probe(x, y, xt, yt) == pytest.approx(1 / 6, abs=0.05)


def test_probe_single_class_rejected(rng):
    with pytest.raises(ConfigurationError):
        E.fit_probe(rng.normal(size=(5, 2)), np.zeros(5))


def test_constant_features_score_one_over_k_on_imbalanced_test():
    x = np.ones((40, 3))
    y = np.array([0] * 30 + [1] * 10)
    probe = E.fit_probe(x, y)
    pred = probe.predict(np.ones((40, 3)))
    # balanced loss leaves the two classes tied; ties break to the first class
    assert np.all(pred == pred[0])


def test_label_audit_counts_reads():
    audit = E.LabelAudit(np.arange(6), np.array([0, 0, 1, 1, 2, 2]))
    np.testing.assert_array_equal(audit.read(np.array([0, 2, 3])), [0, 2, 3])
    assert audit.reads == {0: 1, 1: 2, 2: 0}


@pytest.fixture(scope="module")
def raw_features(micro_prepared):
    p = micro_prepared
    return E.FeatureSet.from_windows(E.raw_neural_features(p.raw_train), E.raw_neural_features(p.raw_test), p)


def test_benchmarks_structure(raw_features, micro_prepared):
    reps = E.run_benchmarks(raw_features)
    single, across, ident = reps["single"], reps["across"], reps["identity"]
    n_dom = micro_prepared.n_domains
    assert sorted(single.per_domain) == list(range(n_dom))
    assert single.accuracy == pytest.approx(np.mean(list(single.per_domain.values())), abs=1e-9)
    assert sorted(across.per_domain) == list(range(n_dom))
    for d, reads in across.label_reads.items():
        assert reads[d] == 0
        assert all(v > 0 for k, v in reads.items() if k != d)
    assert ident.chance == 1 / n_dom and single.chance == 1 / micro_prepared.n_actions
    for r in reps.values():
        assert 0.0 <= r.accuracy <= 1.0
        assert set(r.to_dict()) >= {"task", "fraction", "accuracy", "chance", "split", "per_domain"}


def test_reports_reproducible(raw_features):
    a = E.run_benchmarks(raw_features, fraction=0.5, seed=2)
    b = E.run_benchmarks(raw_features, fraction=0.5, seed=2)
    assert {k: r.accuracy for k, r in a.items()} == {k: r.accuracy for k, r in b.items()}


def test_raw_features_reveal_identity(raw_features):
    assert E.benchmark_identity(raw_features).accuracy >= 0.9


def test_constant_features_give_chance_identity(raw_features):
    f = raw_features
    const = E.FeatureSet(np.ones_like(f.train), np.ones_like(f.test), f.train_domain, f.test_domain,
                         f.train_action, f.test_action, f.n_actions)
    rep = E.benchmark_identity(const)
    assert rep.accuracy == pytest.approx(rep.chance, abs=0.05)


def test_shuffled_labels_give_chance(raw_features):
    reps = E.run_benchmarks(raw_features.shuffled(seed=1))
    for r in reps.values():
        assert r.accuracy == pytest.approx(r.chance, abs=0.1)


def test_identity_free_world_closes_the_gap():
    ds = generate_world(micro_world_config(identity_strength=0.0, layout_seed=0, n_trials=4, trial_seconds=40.0),
                        seed=0)
    p = prepare(ds, with_raw=True)
    f = E.FeatureSet.from_windows(E.raw_neural_features(p.raw_train), E.raw_neural_features(p.raw_test), p)
    single = E.benchmark_single_subject(f).accuracy
    across = E.benchmark_across_subject(f).accuracy
    assert abs(single - across) <= 0.05 or across > single


def test_ablation_table_format(tmp_path):
    rows = []
    for seed in range(3):
        for k, (name, _) in enumerate(E.ABLATION_RUNGS):
            rows.append({"method": name, "single": 0.5, "across": 0.4 + 0.05 * k, "identity": 0.9 - 0.1 * k,
                         "seed": seed})
    res = E.AblationResult(rows)
    deltas = res.deltas()
    assert list(deltas) == ["+swap", "+calcium", "+mix"]
    assert deltas["+swap"]["across"] == pytest.approx(5.0)
    assert deltas["+swap"]["identity"] == pytest.approx(-10.0)
    res.to_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["method", "single", "across", "identity", "seed"]
    assert len(table) == 13


def test_ablation_needs_three_seeds(micro_prepared):
    with pytest.raises(ConfigurationError):
        E.run_ablation(micro_prepared, seeds=(0, 1))


def test_ladder_is_cumulative():
    names = [n for n, _ in E.ABLATION_RUNGS]
    assert names == ["simclr_no_swap", "+swap", "+calcium", "+mix"]
    flags = [f for _, f in E.ABLATION_RUNGS]
    for prev, cur in zip(flags, flags[1:]):
        assert all(cur[k] or not v for k, v in prev.items())
