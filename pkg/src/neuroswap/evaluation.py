"""Frozen-feature linear probes, the three benchmarks, and the augmentation ablation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .encoders import ModelBundle
from .errors import ConfigurationError, ContractError, DimensionError
from .harness import PreparedData, TrainConfig, WindowSet, train

log = logging.getLogger(__name__)

PROBE_EPOCHS = 100
PROBE_LR = 1e-2
FRACTIONS = (0.5, 1.0)


# ---------------------------------------------------------------------------
# features


def extract_features(model: ModelBundle, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    """Pre-projection neural representations h_n, [M, embedding_dim]."""
    was_training = model.training
    model.eval()
    out = []
    with T.no_grad():
        for s in range(0, len(windows), batch_size):
            idx = np.arange(s, min(s + batch_size, len(windows)))
            out.append(model.encode_neural(windows.neural(idx)).data.astype(np.float64))
    model.train(was_training)
    return np.concatenate(out)


def raw_neural_features(windows: WindowSet, pool: int = 4) -> np.ndarray:
    """Time-averaged frame of each window, average-pooled by ``pool``."""
    out = []
    for s in range(0, len(windows), 256):
        n = windows.neural(np.arange(s, min(s + 256, len(windows)))).mean(axis=1)
        m, h, w = n.shape
        out.append(n.reshape(m, h // pool, pool, w // pool, pool).mean(axis=(2, 4)).reshape(m, -1))
    return np.concatenate(out).astype(np.float64)


def raw_pose_features(windows: WindowSet) -> np.ndarray:
    return windows.b.reshape(len(windows), -1).astype(np.float64)


@dataclass
class FeatureSet:
    """Features plus the window metadata the benchmarks need."""

    train: np.ndarray
    test: np.ndarray
    train_domain: np.ndarray
    test_domain: np.ndarray
    train_action: np.ndarray
    test_action: np.ndarray
    n_actions: int

    @classmethod
    def from_windows(cls, train_x, test_x, data: PreparedData) -> "FeatureSet":
        return cls(train_x, test_x, data.train.domain, data.test.domain, data.train.action,
                   data.test.action, data.n_actions)

    @classmethod
    def from_model(cls, model: ModelBundle, data: PreparedData) -> "FeatureSet":
        return cls.from_windows(extract_features(model, data.train), extract_features(model, data.test), data)

    def shuffled(self, seed: int = 0) -> "FeatureSet":
        """Copy with action and domain labels permuted (features untouched)."""
        rng = np.random.default_rng(seed)
        p_tr, p_te = rng.permutation(len(self.train)), rng.permutation(len(self.test))
        return FeatureSet(self.train, self.test, self.train_domain[p_tr], self.test_domain[p_te],
                          self.train_action[p_tr], self.test_action[p_te], self.n_actions)


# ---------------------------------------------------------------------------
# linear probe


class LabelAudit:
    """Label array that counts training-time reads per domain."""

    def __init__(self, labels: np.ndarray, domains: np.ndarray):
        self._labels = np.asarray(labels)
        self._domains = np.asarray(domains)
        self.reads: dict[int, int] = {int(d): 0 for d in np.unique(domains)}

    def read(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        for d, c in zip(*np.unique(self._domains[idx], return_counts=True)):
            self.reads[int(d)] += int(c)
        return self._labels[idx]


def stratified_subset(labels: np.ndarray, fraction: float, seed: int = 0) -> np.ndarray:
    """Indices holding ``ceil(fraction * n_c)`` examples of each class c."""
    if fraction not in FRACTIONS:
        raise ConfigurationError(f"fraction must be one of {FRACTIONS}")
    if fraction == 1.0:
        return np.arange(len(labels))
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        keep.append(rng.permutation(members)[: math.ceil(fraction * len(members))])
    return np.sort(np.concatenate(keep))


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    classes: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / self.std
        return self.classes[np.argmax(z @ self.weight + self.bias, axis=1)]


def fit_probe(x: np.ndarray, y: np.ndarray, epochs: int = PROBE_EPOCHS, lr: float = PROBE_LR) -> LinearProbe:
    """Multinomial logistic regression, full-batch Adam on standardised features.

    The cross-entropy is class-balanced, so a probe on label-free features
    spreads its guesses evenly and scores 1/K on any test distribution.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionError("probe needs features [M, D] and M labels")
    classes, yi = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ConfigurationError("probe training set contains a single class")
    mean = x.mean(0)
    std = x.std(0)
    std[std < 1e-8] = 1.0
    z = (x - mean) / std
    k = len(classes)
    onehot = np.eye(k)[yi]
    counts = onehot.sum(0)
    sw = (len(y) / (k * counts))[yi] / len(y)
    W = np.zeros((z.shape[1], k))
    bvec = np.zeros(k)
    mW, vW, mb, vb = np.zeros_like(W), np.zeros_like(W), np.zeros(k), np.zeros(k)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, epochs + 1):
        logits = z @ W + bvec
        logits -= logits.max(1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(1, keepdims=True)
        g = (p - onehot) * sw[:, None]
        gW, gb = z.T @ g, g.sum(0)
        for prm, grad, m, v in ((W, gW, mW, vW), (bvec, gb, mb, vb)):
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            prm -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return LinearProbe(W, bvec, mean, std, classes)


def linear_probe(train_x, train_y, test_x, test_y, fraction: float = 1.0, seed: int = 0) -> float:
    """Accuracy of a probe trained on a class-stratified ``fraction`` of the train labels."""
    keep = stratified_subset(np.asarray(train_y), fraction, seed)
    probe = fit_probe(np.asarray(train_x)[keep], np.asarray(train_y)[keep])
    return float(np.mean(probe.predict(np.asarray(test_x)) == np.asarray(test_y)))


# ---------------------------------------------------------------------------
# benchmarks


@dataclass
class BenchmarkReport:
    task: str
    fraction: float
    accuracy: float
    chance: float
    split: str
    per_domain: dict[int, float] = field(default_factory=dict)
    # training-time label reads per domain, per fold (across-subject only)
    label_reads: dict[int, dict[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_domain"] = {str(k): v for k, v in self.per_domain.items()}
        d["label_reads"] = {str(k): {str(a): b for a, b in v.items()} for k, v in self.label_reads.items()}
        return d


def _as_features(model_or_features, data: PreparedData | None) -> FeatureSet:
    if isinstance(model_or_features, FeatureSet):
        return model_or_features
    if data is None:
        raise ContractError("a model needs the prepared data to extract features")
    return FeatureSet.from_model(model_or_features, data)


def benchmark_single_subject(model_or_features, data: PreparedData | None = None,
                             fraction: float = 1.0, seed: int = 0) -> BenchmarkReport:
    f = _as_features(model_or_features, data)
    per = {}
    for d in np.unique(f.train_domain):
        tr, te = f.train_domain == d, f.test_domain == d
        if len(np.unique(f.train_action[tr])) < 2 or not te.any():
            log.warning("single-subject: domain %d lacks two actions; skipped", d)
            continue
        per[int(d)] = linear_probe(f.train[tr], f.train_action[tr], f.test[te], f.test_action[te], fraction, seed)
    if not per:
        raise ContractError("no domain is eligible for the single-subject benchmark")
    return BenchmarkReport("single", fraction, float(np.mean(list(per.values()))), 1.0 / f.n_actions,
                           "per-domain probe: train trials -> held-out trials of the same domain", per)


def benchmark_across_subject(model_or_features, data: PreparedData | None = None, fraction: float = 1.0,
                             seed: int = 0, fold_features: dict | None = None) -> BenchmarkReport:
    """Leave-one-domain-out probes.

    ``fold_features`` optionally maps a target domain to a FeatureSet from a
    model that never saw that domain (used by the supervised baseline).
    """
    f = _as_features(model_or_features, data)
    domains = np.unique(f.train_domain)
    if len(domains) < 2:
        raise ConfigurationError("across-subject benchmark needs at least 2 domains")
    per, reads = {}, {}
    for d in domains:
        fd = (fold_features or {}).get(int(d), f)
        audit = LabelAudit(fd.train_action, fd.train_domain)
        src = np.flatnonzero(fd.train_domain != d)
        te = fd.test_domain == d
        y = audit.read(src)
        keep = stratified_subset(y, fraction, seed)
        probe = fit_probe(fd.train[src][keep], y[keep])
        if audit.reads.get(int(d), 0) != 0:
            raise ContractError(f"target domain {d} labels were read during probe training")
        per[int(d)] = float(np.mean(probe.predict(fd.test[te]) == fd.test_action[te]))
        reads[int(d)] = dict(audit.reads)
    return BenchmarkReport("across", fraction, float(np.mean(list(per.values()))), 1.0 / f.n_actions,
                           "leave-one-domain-out: other domains' train trials -> target's held-out trials",
                           per, reads)


def benchmark_identity(model_or_features, data: PreparedData | None = None, fraction: float = 1.0,
                       seed: int = 0) -> BenchmarkReport:
    f = _as_features(model_or_features, data)
    n_dom = len(np.unique(f.train_domain))
    if n_dom < 2:
        raise ConfigurationError("identity benchmark needs at least 2 domains")
    acc = linear_probe(f.train, f.train_domain, f.test, f.test_domain, fraction, seed)
    return BenchmarkReport("identity", fraction, acc, 1.0 / n_dom,
                           "domain-id probe: train trials -> held-out trials (lower is better)")


def run_benchmarks(model_or_features, data: PreparedData | None = None, fraction: float = 1.0,
                   tasks=("single", "across", "identity"), seed: int = 0,
                   fold_features: dict | None = None) -> dict[str, BenchmarkReport]:
    f = _as_features(model_or_features, data)
    out = {}
    if "single" in tasks:
        out["single"] = benchmark_single_subject(f, fraction=fraction, seed=seed)
    if "across" in tasks:
        out["across"] = benchmark_across_subject(f, fraction=fraction, seed=seed, fold_features=fold_features)
    if "identity" in tasks:
        out["identity"] = benchmark_identity(f, fraction=fraction, seed=seed)
    return out


def supervised_fold_features(cfg: TrainConfig, data: PreparedData) -> dict[int, FeatureSet]:
    """Per target domain, features from a supervised model trained without that domain."""
    out = {}
    for d in data.train.domains:
        fold_cfg = TrainConfig.from_dict({**cfg.to_dict(), "method": "supervised"})
        res = train(fold_cfg, data.train.subset(data.train.domain != d),
                    n_domains=data.n_domains, n_actions=data.n_actions)
        out[d] = FeatureSet.from_model(res.model, data)
    return out


def evaluate_method(cfg: TrainConfig, data: PreparedData, fraction: float = 1.0,
                    seed: int = 0) -> dict[str, BenchmarkReport]:
    """Train ``cfg`` and run all three benchmarks on its frozen features.

    The supervised baseline is retrained per across-subject fold so its
    encoder never sees the target domain's action labels.
    """
    res = train(cfg, data)
    folds = supervised_fold_features(cfg, data) if cfg.method == "supervised" else None
    return run_benchmarks(FeatureSet.from_model(res.model, data), fraction=fraction, seed=seed,
                          fold_features=folds)


# ---------------------------------------------------------------------------
# ablation


ABLATION_RUNGS = (
    ("simclr_no_swap", dict(swap_behavior=False, swap_neural=False, calcium=False, mix=False)),
    ("+swap", dict(swap_behavior=True, swap_neural=True, calcium=False, mix=False)),
    ("+calcium", dict(swap_behavior=True, swap_neural=True, calcium=True, mix=False)),
    ("+mix", dict(swap_behavior=True, swap_neural=True, calcium=True, mix=True)),
)


@dataclass
class AblationResult:
    rows: list[dict]

    def means(self) -> dict[str, dict[str, float]]:
        out = {}
        for name, _ in ABLATION_RUNGS:
            sel = [r for r in self.rows if r["method"] == name]
            if sel:
                out[name] = {k: float(np.mean([r[k] for r in sel])) for k in ("single", "across", "identity")}
        return out

    def deltas(self) -> dict[str, dict[str, float]]:
        """Rung-over-rung change of the seed-mean metrics, in accuracy points (x100)."""
        m = self.means()
        names = [n for n, _ in ABLATION_RUNGS if n in m]
        return {cur: {k: 100.0 * (m[cur][k] - m[prev][k]) for k in m[cur]}
                for prev, cur in zip(names, names[1:])}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "single", "across", "identity", "seed"])
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def run_ablation(data: PreparedData, seeds=(0, 1, 2), base: TrainConfig | None = None,
                 csv_path=None, progress=None) -> AblationResult:
    """Train the cumulative ladder simclr_no_swap -> +swap -> +calcium -> +mix."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ConfigurationError("the ablation needs at least 3 seeds")
    base = base or TrainConfig()
    rows = []
    for seed in seeds:
        for name, flags in ABLATION_RUNGS:
            d = base.to_dict()
            d["seed"] = seed
            d["method"] = "simclr_no_swap" if name == "simclr_no_swap" else "ours"
            d["augment"] = {**d["augment"], **flags}
            res = train(TrainConfig.from_dict(d), data)
            rep = run_benchmarks(FeatureSet.from_model(res.model, data), seed=seed)
            row = {"method": name, "single": rep["single"].accuracy, "across": rep["across"].accuracy,
                   "identity": rep["identity"].accuracy, "seed": seed}
            rows.append(row)
            if progress is not None:
                progress(row)
    result = AblationResult(rows)
    if csv_path is not None:
        result.to_csv(csv_path)
    return result
