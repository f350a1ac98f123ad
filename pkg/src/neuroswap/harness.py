"""Training data preparation and the training loop for every method."""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import augment as A
from . import nswt
from . import objectives as O
from . import tensor as T
from .encoders import EncoderConfig, ModelBundle, load_checkpoint, save_checkpoint
from .errors import ConfigurationError, ContractError, NonFiniteError
from .optim import AdamState, adam_step, cosine_lr
from .preprocess import delta_f_over_f
from .synthdata import MultiDomainDataset, Trial, split_train_test, synchronize

log = logging.getLogger(__name__)

METHODS = ("ours", "simclr_no_swap", "regression_conv", "grl", "mmd", "supervised")
CONTRASTIVE = ("ours", "simclr_no_swap", "grl", "mmd")
CONFIG_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    method: str = "ours"
    epochs: int = 200
    batch_size: int = 128
    tau: float = 0.1
    lr: float = 1e-4
    weight_decay: float = 1e-5
    warmup_epochs: int = 3
    seed: int = 0
    # epochs trained with the contrastive term alone before a DA penalty starts
    da_warmup_epochs: int = 10
    lambda_d: float = O.LAMBDA_D
    lambda_mmd: float = O.LAMBDA_MMD
    keep_checkpoints: int = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: A.AugmentConfig = field(default_factory=A.AugmentConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig.from_dict(self.encoder)
        if isinstance(self.augment, dict):
            self.augment = A.AugmentConfig.from_dict(self.augment)
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError("warm-up must be shorter than training")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.tau <= 0 or self.lr <= 0:
            raise ConfigurationError("tau and lr must be positive")

    def effective_augment(self) -> A.AugmentConfig:
        """Cross-domain augmentations belong to ``ours`` only."""
        if self.method == "ours":
            return self.augment
        d = self.augment.to_dict()
        d.update(swap_behavior=False, swap_neural=False, calcium=False, mix=False)
        return A.AugmentConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigurationError(f"unsupported train config version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# window sets


@dataclass
class WindowSet:
    """Paired windows that reference shared per-trial neural stacks.

    ``neural(idx)`` gathers the [len(idx), 32, H, W] windows on demand so
    overlapping windows are not stored twice.
    """

    b: np.ndarray            # [M, 8, J, 3]
    domain: np.ndarray       # [M]
    action: np.ndarray       # [M]
    slot: np.ndarray         # [M] index into stacks
    start: np.ndarray        # [M] first neural frame
    pose_index: np.ndarray   # [M, 8] behavior frame indices within the trial
    stacks: list[np.ndarray]
    window: int = 32

    def __len__(self) -> int:
        return len(self.domain)

    def neural(self, idx) -> np.ndarray:
        idx = np.atleast_1d(idx)
        return np.stack([self.stacks[self.slot[i]][self.start[i]:self.start[i] + self.window] for i in idx])

    def pose_keys(self) -> np.ndarray:
        return self.slot[:, None].astype(np.int64) * 1_000_000 + self.pose_index

    @property
    def domains(self) -> list[int]:
        return sorted(int(d) for d in np.unique(self.domain))

    def subset(self, mask) -> "WindowSet":
        sel = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return WindowSet(self.b[sel], self.domain[sel], self.action[sel], self.slot[sel], self.start[sel],
                         self.pose_index[sel], self.stacks, self.window)


def neural_input(trial: Trial, kind: str = "dff") -> np.ndarray:
    """Per-trial network input: dF/F scaled to fractions, or raw fluorescence."""
    if kind == "dff":
        return (delta_f_over_f(trial.neural.astype(np.float64)) / 100.0).astype(np.float32)
    if kind == "raw":
        return trial.neural.astype(np.float32)
    raise ConfigurationError(f"unknown neural input kind {kind!r}")


def build_windows(trials: list[Trial], kind: str = "dff", stride: int = 8) -> WindowSet:
    b, dom, act, slot, start, pidx, stacks = [], [], [], [], [], [], []
    for s, tr in enumerate(trials):
        stack = neural_input(tr, kind)
        stacks.append(stack)
        for p in synchronize(tr.behavior, tr.behavior_t, stack, tr.neural_t, tr.neural_actions,
                             stride=stride, domain=tr.domain, trial=tr.index):
            b.append(p.b)
            dom.append(p.domain)
            act.append(p.action)
            slot.append(s)
            start.append(p.neural_start)
            pidx.append(p.behavior_index)
    if not b:
        raise ContractError("no paired windows could be cut from the given trials")
    return WindowSet(np.asarray(b, dtype=np.float32), np.asarray(dom), np.asarray(act), np.asarray(slot),
                     np.asarray(start), np.asarray(pidx), stacks)


@dataclass
class PreparedData:
    train: WindowSet
    test: WindowSet
    n_domains: int
    n_actions: int
    raw_train: WindowSet | None = None
    raw_test: WindowSet | None = None


def prepare(dataset: MultiDomainDataset, n_test: int = 2, with_raw: bool = False) -> PreparedData:
    train_trials, test_trials = split_train_test(dataset, n_test)
    prep = PreparedData(build_windows(train_trials), build_windows(test_trials),
                        dataset.n_domains, dataset.config.n_actions)
    if with_raw:
        prep.raw_train = build_windows(train_trials, "raw")
        prep.raw_test = build_windows(test_trials, "raw")
    return prep


# ---------------------------------------------------------------------------
# augmentation pipeline


class Augmenter:
    """Applies swap -> calcium -> mix -> jitter to a batch of windows."""

    def __init__(self, data: WindowSet, cfg: A.AugmentConfig):
        self.data = data
        self.cfg = cfg
        self.kernel = A.CalciumKernel(cfg.calcium_gamma, data.window, cfg.calcium_amplitude)
        self.index = None
        if cfg.swap_behavior or cfg.swap_neural:
            self.index = A.NeighborIndex.build(data.b, data.domain, data.pose_keys(), cfg.n_neighbors)
        self._by_domain = {d: np.flatnonzero(data.domain == d) for d in data.domains}

    def _donor_frame(self, domain: int, slot: int, start: int, rng: np.random.Generator) -> np.ndarray:
        # a frame of the same domain lying outside the current window
        pool = self._by_domain[domain]
        while True:
            j = pool[rng.integers(len(pool))]
            s = self.data.slot[j]
            stack = self.data.stacks[s]
            t = int(rng.integers(stack.shape[0]))
            if s != slot or not start <= t < start + self.data.window:
                return stack[t]

    def __call__(self, idx: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (behavior windows, neural windows, neural domain ids)."""
        cfg, data = self.cfg, self.data
        b = data.b[idx].copy()
        src = data.domain[idx]
        n_idx = np.array(idx)
        n_dom = src.copy()
        if cfg.swap_neural and self.index is not None:
            ids, doms = A.swap_neural_batch(b, src, self.index, rng)
            use = (rng.random(len(idx)) < cfg.p_swap_neural) & (ids >= 0)
            n_idx = np.where(use, ids, n_idx)
            n_dom = np.where(use, doms, n_dom)
        if cfg.swap_behavior and self.index is not None:
            b, _ = A.swap_behavior_batch(b, src, self.index, rng, cfg.p_swap_pose)
        n = data.neural(n_idx)
        if cfg.calcium:
            for i in np.flatnonzero(rng.random(len(idx)) < cfg.p_calcium):
                j = n_idx[i]
                donor = self._donor_frame(int(n_dom[i]), int(data.slot[j]), int(data.start[j]), rng)
                n[i] = A.calcium_augment(n[i], donor, self.kernel, rng)
        if cfg.mix:
            for i in np.flatnonzero(rng.random(len(idx)) < cfg.p_mix):
                donor = data.neural(int(rng.integers(len(data))))[0]
                n[i] = A.mix_augment(n[i], donor, rng, cfg.mix_range)
        if cfg.jitter_neural:
            n = A.jitter_neural_batch(n, cfg, rng)
        if cfg.jitter_behavior:
            b, _ = A.jitter_behavior_batch(b, cfg, rng)
        return b, n, n_dom


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: ModelBundle
    log: list[dict]
    config: TrainConfig


def build_model(cfg: TrainConfig, n_domains: int, n_actions: int) -> ModelBundle:
    heads = {}
    if cfg.method == "regression_conv":
        heads["regressor"] = cfg.encoder.behavior_frames * cfg.encoder.n_joints * 3
    elif cfg.method == "supervised":
        heads["classifier"] = n_actions
    return ModelBundle(cfg.encoder, seed=cfg.seed, n_domains=n_domains,
                       discriminators=cfg.method == "grl", extra_heads=heads)


def _losses(model: ModelBundle, cfg: TrainConfig, epoch: int, b, n, src_dom, n_dom, actions):
    """Returns (total, b2n, n2b, da) with None for absent terms."""
    method = cfg.method
    if method == "regression_conv":
        pred = model.heads["regressor"](model.encode_neural(n))
        target = b.reshape(b.shape[0], -1)
        diff = T.sub(pred, target.astype(pred.dtype))
        return T.mean(T.square(diff)), None, None, None
    if method == "supervised":
        logits = model.heads["classifier"](model.encode_neural(n))
        ce = O.domain_cross_entropy(logits, actions, model.head_spec["classifier"])
        return T.scale(ce, 1.0 / b.shape[0]), None, None, None
    h_b = model.encode_behavior(b)
    h_n = model.encode_neural(n)
    z_b = model.project(h_b, "behavior")
    z_n = model.project(h_n, "neural")
    if method in ("ours", "simclr_no_swap"):
        r = O.info_nce(z_b, z_n, cfg.tau)
        return r.total, r.b2n, r.n2b, None
    r = O.info_nce_domain_masked(z_b, z_n, src_dom, cfg.tau)
    if epoch < cfg.da_warmup_epochs:
        return r.total, r.b2n, r.n2b, None
    if method == "grl":
        da = T.add(O.grl_discriminator_loss(h_b, src_dom, model.heads["disc_b"], cfg.lambda_d),
                   O.grl_discriminator_loss(h_n, n_dom, model.heads["disc_n"], cfg.lambda_d))
    else:
        terms = [t for t in (O.multi_domain_mmd(h_b, src_dom), O.multi_domain_mmd(h_n, n_dom)) if t is not None]
        if not terms:
            return r.total, r.b2n, r.n2b, None
        da = terms[0] if len(terms) == 1 else T.add(*terms)
        # the contrastive term is a batch sum, so the mean-scale MMD is put on the same footing
        da = T.scale(da, cfg.lambda_mmd * b.shape[0])
    return T.add(r.total, da), r.b2n, r.n2b, da


def _per_sample(t, n: int, directions: int = 1):
    return None if t is None else float(t.data) / (n * directions)


def _dump_batch(out_dir: Path | None, b, n, src_dom, epoch: int, step: int) -> str:
    if out_dir is None:
        return "no output directory; batch not dumped"
    path = out_dir / f"nonfinite_batch_e{epoch}_s{step}.nswt"
    nswt.save_many(path, [np.asarray(b), np.asarray(n), np.asarray(src_dom, dtype=np.float64)])
    return f"offending batch written to {path}"


def _latest_checkpoint(ckpt_root: Path) -> Path | None:
    if not ckpt_root.exists():
        return None
    cands = sorted(p for p in ckpt_root.iterdir() if p.name.startswith("epoch_"))
    return cands[-1] if cands else None


def train(cfg: TrainConfig, data: PreparedData | WindowSet | MultiDomainDataset, out_dir=None,
          resume: bool = False, n_domains: int | None = None, n_actions: int | None = None) -> TrainResult:
    """Train one model; deterministic given ``cfg.seed``.

    With ``out_dir`` set, writes ``loss_log.jsonl`` and a checkpoint per epoch
    under ``checkpoints/epoch_XXXX``; ``resume`` continues from the latest one.
    """
    if isinstance(data, MultiDomainDataset):
        n_domains, n_actions = data.n_domains, data.config.n_actions
        data = prepare(data)
    if isinstance(data, PreparedData):
        n_domains, n_actions = data.n_domains, data.n_actions
        data = data.train
    n_domains = n_domains or int(data.domain.max()) + 1
    n_actions = n_actions or int(data.action.max()) + 1
    aug_cfg = cfg.effective_augment()
    if (aug_cfg.swap_behavior or aug_cfg.swap_neural) and len(data.domains) < 2:
        raise ConfigurationError("swap augmentations need at least 2 domains in the training data")
    if len(data) < cfg.batch_size:
        raise ConfigurationError(f"{len(data)} windows cannot fill a batch of {cfg.batch_size}")

    model = build_model(cfg, n_domains, n_actions)
    if cfg.method == "regression_conv":
        # start from the mean-pose predictor; the verbatim attention inflates h, so a random head starts far off
        head = model.heads["regressor"]
        head.weight.data[...] = 0
        head.bias.data[...] = data.b.reshape(len(data), -1).mean(0)
    params = model.parameters()
    opt = AdamState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    augmenter = Augmenter(data, aug_cfg)
    steps_per_epoch = len(data) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs

    out = Path(out_dir) if out_dir is not None else None
    ckpt_root = out / "checkpoints" if out is not None else None
    log_path = out / "loss_log.jsonl" if out is not None else None
    history: list[dict] = []
    first_epoch = 0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        latest = _latest_checkpoint(ckpt_root) if resume else None
        if latest is not None:
            first_epoch = _restore(latest, model, opt)
            if log_path.exists():
                with open(log_path) as fh:
                    history = [json.loads(line) for line in fh if line.strip()]
                history = [r for r in history if r["epoch"] < first_epoch]
        with open(log_path, "w") as fh:
            for r in history:
                fh.write(json.dumps(r) + "\n")

    model.train()
    for epoch in range(first_epoch, cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        perm = rng.permutation(len(data))
        epoch_rows = []
        for k in range(steps_per_epoch):
            step = epoch * steps_per_epoch + k
            idx = perm[k * cfg.batch_size:(k + 1) * cfg.batch_size]
            b, n, n_dom = augmenter(idx, rng)
            src_dom = data.domain[idx]
            try:
                total, b2n, n2b, da = _losses(model, cfg, epoch, b, n, src_dom, n_dom, data.action[idx])
                for p in params:
                    p.grad = None
                total.backward()
            except NonFiniteError as exc:
                where = _dump_batch(out, b, n, src_dom, epoch, step)
                raise NonFiniteError(f"non-finite value at epoch {epoch} step {step}: {exc}; {where}") from exc
            adam_step(params, [p.grad for p in params], opt,
                      lr=cosine_lr(step, total_steps, warmup_steps, cfg.lr))
            bsz = len(idx)
            contrastive = b2n is not None
            row = {"epoch": epoch, "step": step,
                   "loss_total": float(total.data) / (2 * bsz) if contrastive else float(total.data),
                   "loss_b2n": _per_sample(b2n, bsz), "loss_n2b": _per_sample(n2b, bsz),
                   "loss_da": _per_sample(da, bsz)}
            epoch_rows.append(row)
        history.extend(epoch_rows)
        if out is not None:
            with open(log_path, "a") as fh:
                for r in epoch_rows:
                    fh.write(json.dumps(r) + "\n")
            _save(ckpt_root, epoch, model, opt, cfg)
        log.info("epoch %d/%d loss %.4f", epoch + 1, cfg.epochs,
                 float(np.mean([r["loss_total"] for r in epoch_rows])))
    model.eval()
    return TrainResult(model, history, cfg)


def _save(root: Path, epoch: int, model: ModelBundle, opt: AdamState, cfg: TrainConfig) -> None:
    extras = {f"adam.m.{i}": m for i, m in enumerate(opt.m)}
    extras.update({f"adam.v.{i}": v for i, v in enumerate(opt.v)})
    save_checkpoint(root / f"epoch_{epoch:04d}", model,
                    {"epoch": epoch, "adam_step": opt.step, "train_config": cfg.to_dict()}, extras)
    if cfg.keep_checkpoints > 0:
        old = sorted(p for p in root.iterdir() if p.name.startswith("epoch_"))[:-cfg.keep_checkpoints]
        for p in old:
            shutil.rmtree(p)


def _restore(path: Path, model: ModelBundle, opt: AdamState) -> int:
    saved, meta, extras = load_checkpoint(path)
    for (_, dst), (_, src) in zip(model.named_parameters(), saved.named_parameters()):
        dst.data[...] = src.data
    for (_, dst), (_, src) in zip(model.named_buffers(), saved.named_buffers()):
        dst[...] = src
    for i in range(len(opt.m)):
        opt.m[i][...] = extras[f"adam.m.{i}"]
        opt.v[i][...] = extras[f"adam.v.{i}"]
    opt.step = int(meta["adam_step"])
    return int(meta["epoch"]) + 1


def load_trained(path) -> tuple[ModelBundle, TrainConfig]:
    """Load a checkpoint directory (or a run directory holding ``checkpoints/``)."""
    path = Path(path)
    if (path / "checkpoints").exists():
        path = _latest_checkpoint(path / "checkpoints")
        if path is None:
            raise ContractError("run directory has no checkpoints")
    model, meta, _ = load_checkpoint(path)
    model.eval()
    return model, TrainConfig.from_dict(meta["train_config"])


def train_regression_baseline(cfg: TrainConfig, data, out_dir=None, **kw) -> TrainResult:
    d = cfg.to_dict()
    d["method"] = "regression_conv"
    return train(TrainConfig.from_dict(d), data, out_dir, **kw)


def train_supervised_baseline(cfg: TrainConfig, data, out_dir=None, **kw) -> TrainResult:
    d = cfg.to_dict()
    d["method"] = "supervised"
    return train(TrainConfig.from_dict(d), data, out_dir, **kw)
