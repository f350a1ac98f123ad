"""Synthetic multi-animal world with paired pose and calcium-imaging streams.

Each domain (animal) performs a semi-Markov sequence of actions. Poses are
action-specific limb oscillations on a shared skeleton, distorted by a
per-domain scale and joint offsets. Neural activity is a set of
action-tuned neurons whose spikes drive an AR(1) calcium trace, rendered as
Gaussian blobs with domain-specific gain and Poisson shot noise. All domains
image the same neuron population; each displaces the shared layout and shows
only part of it.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nswt
from .errors import ConfigurationError

log = logging.getLogger(__name__)


@dataclass
class WorldConfig:
    n_domains: int = 4
    n_actions: int = 6
    n_joints: int = 10
    image_size: tuple[int, int] = (64, 64)
    n_neurons: int = 12
    behavior_fps: float = 100.0
    neural_fps: float = 16.0
    dwell_range: tuple[float, float] = (0.5, 3.0)
    # weight of action 0 in the transition prior relative to the others
    action_skew: float = 2.0
    gamma_gen: float = 0.95
    alpha_gen: float = 1.0
    skeleton_scale_range: tuple[float, float] = (0.8, 1.2)
    joint_offset_sigma: float = 0.05
    # scales every identity cue (skeleton, offsets, gain, background); 0 removes them
    identity_strength: float = 1.0
    # every domain images the same neuron population: a shared template layout,
    # displaced per domain by a global shift plus per-neuron jitter, with only
    # part of the population visible (all fractions of the image size)
    layout_shift_sigma: float = 0.06
    neuron_jitter_sigma: float = 0.03
    visible_range: tuple[float, float] = (0.6, 1.0)
    # when set, the template comes from this seed and no domain displaces it
    layout_seed: int | None = None
    pose_noise: float = 0.01
    posture_sigma: float = 0.35
    motion_sigma: float = 0.25
    base_firing_rate: float = 0.02
    active_firing_rate: float = 0.5
    blob_sigma: float = 0.03  # fraction of image width
    resting_fluorescence: float = 0.5
    background_range: tuple[float, float] = (0.15, 0.35)
    gain_range: tuple[float, float] = (0.7, 1.3)
    photons: float = 50.0
    n_trials: int = 8
    trial_seconds: float = 40.0

    def __post_init__(self):
        for name in ("image_size", "dwell_range", "skeleton_scale_range", "background_range", "gain_range",
                     "visible_range"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.n_domains < 2:
            raise ConfigurationError("need at least 2 domains (swapping is undefined otherwise)")
        if self.n_actions < 2:
            raise ConfigurationError("need at least 2 actions")
        if self.behavior_fps <= 0 or self.neural_fps <= 0:
            raise ConfigurationError("frame rates must be positive")
        if not 0 < self.gamma_gen < 1:
            raise ConfigurationError("gamma_gen must lie in (0, 1)")
        lo, hi = self.dwell_range
        if not 0 < lo <= hi:
            raise ConfigurationError("dwell_range must satisfy 0 < lo <= hi")
        if self.n_neurons < 1 or self.n_joints < 2:
            raise ConfigurationError("need >= 1 neuron and >= 2 joints")
        vlo, vhi = self.visible_range
        if not 0 < vlo <= vhi <= 1:
            raise ConfigurationError("visible_range must satisfy 0 < lo <= hi <= 1")
        if self.trial_seconds * self.neural_fps < 32:
            raise ConfigurationError("trials shorter than one 32-frame neural window")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class Trial:
    domain: int
    index: int
    behavior: np.ndarray          # [T_b, J, 3]
    neural: np.ndarray            # [T_n, H, W]
    behavior_t: np.ndarray        # [T_b] seconds
    neural_t: np.ndarray          # [T_n] seconds
    behavior_actions: np.ndarray  # [T_b] int
    intervals: list[dict]
    calcium: np.ndarray | None = None  # [T_n, n_neurons] noise-free traces
    spikes: np.ndarray | None = None   # [T_n, n_neurons]

    @property
    def neural_actions(self) -> np.ndarray:
        return actions_at(self.intervals, self.neural_t)


@dataclass
class PairedSample:
    b: np.ndarray   # [8, J, 3]
    n: np.ndarray   # [32, H, W]
    domain: int
    action: int
    center_time: float
    trial: int = -1
    neural_start: int = -1
    behavior_index: np.ndarray | None = None


@dataclass
class MultiDomainDataset:
    config: WorldConfig
    seed: int
    trials: list[list[Trial]]
    # ground-truth generative parameters, kept for diagnostics
    meta: dict = field(default_factory=dict)

    @property
    def n_domains(self) -> int:
        return len(self.trials)

    def all_trials(self) -> list[Trial]:
        return [t for dom in self.trials for t in dom]

    def save(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "world.json", "w") as fh:
            json.dump({"config": self.config.to_dict(), "seed": self.seed, "meta": self.meta}, fh, indent=2)
        for d, dom in enumerate(self.trials):
            ddir = out / f"domain_{d}"
            ddir.mkdir(exist_ok=True)
            for tr in dom:
                nswt.save(ddir / f"trial_{tr.index}_behavior.nswt", tr.behavior)
                nswt.save(ddir / f"trial_{tr.index}_neural.nswt", tr.neural)
                labels = {
                    "domain": d,
                    "trial": tr.index,
                    "intervals": tr.intervals,
                    "behavior_timestamps": tr.behavior_t.tolist(),
                    "neural_timestamps": tr.neural_t.tolist(),
                }
                with open(ddir / f"trial_{tr.index}_labels.json", "w") as fh:
                    json.dump(labels, fh)

    @classmethod
    def load(cls, in_dir: str | os.PathLike) -> "MultiDomainDataset":
        src = Path(in_dir)
        with open(src / "world.json") as fh:
            world = json.load(fh)
        cfg = WorldConfig.from_dict(world["config"])
        trials = []
        for d in range(cfg.n_domains):
            ddir = src / f"domain_{d}"
            dom = []
            k = 0
            while (ddir / f"trial_{k}_labels.json").exists():
                with open(ddir / f"trial_{k}_labels.json") as fh:
                    lab = json.load(fh)
                bt = np.asarray(lab["behavior_timestamps"])
                dom.append(Trial(
                    domain=d, index=k,
                    behavior=nswt.load(ddir / f"trial_{k}_behavior.nswt"),
                    neural=nswt.load(ddir / f"trial_{k}_neural.nswt"),
                    behavior_t=bt, neural_t=np.asarray(lab["neural_timestamps"]),
                    behavior_actions=actions_at(lab["intervals"], bt),
                    intervals=lab["intervals"],
                ))
                k += 1
            trials.append(dom)
        return cls(cfg, world["seed"], trials, world.get("meta", {}))


def actions_at(intervals: list[dict], times: np.ndarray) -> np.ndarray:
    """Action id active at each timestamp (intervals are [start, end))."""
    starts = np.array([iv["start"] for iv in intervals])
    acts = np.array([iv["action"] for iv in intervals])
    idx = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(acts) - 1)
    return acts[idx]


# ---------------------------------------------------------------------------
# generation


def _action_sequence(cfg: WorldConfig, rng: np.random.Generator) -> list[dict]:
    """Semi-Markov bouts: uniform dwell times, skewed transition prior, no self-loops."""
    prior = np.ones(cfg.n_actions)
    prior[0] = cfg.action_skew
    t = 0.0
    prev = -1
    out = []
    while t < cfg.trial_seconds:
        p = prior.copy()
        if prev >= 0:
            p[prev] = 0
        a = int(rng.choice(cfg.n_actions, p=p / p.sum()))
        dwell = float(rng.uniform(*cfg.dwell_range))
        out.append({"action": a, "start": t, "end": min(t + dwell, cfg.trial_seconds)})
        t += dwell
        prev = a
    return out


def _shared_params(cfg: WorldConfig, rng: np.random.Generator) -> dict:
    J, A = cfg.n_joints, cfg.n_actions
    base = rng.normal(0, 0.5, size=(J, 3))
    base[0] = 0
    posture = rng.normal(0, cfg.posture_sigma, size=(A, J, 3))
    posture[:, 0] = 0
    vigor = np.concatenate([[0.1], rng.uniform(0.6, 1.2, size=A - 1)])
    moving = rng.random((A, J, 1)) < 0.5
    amp = rng.normal(0, cfg.motion_sigma, size=(A, J, 3)) * moving * vigor[:, None, None]
    amp[:, 0] = 0
    freq = rng.uniform(1.5, 4.0, size=A)
    phase = rng.uniform(0, 2 * np.pi, size=(A, J, 3))
    return {"base": base, "posture": posture, "amp": amp, "freq": freq, "phase": phase, "vigor": vigor}


def _layout_template(cfg: WorldConfig, rng: np.random.Generator) -> dict:
    """Neuron positions (fractions of the image) and tuning shared by all domains."""
    pos = rng.uniform(0.2, 0.8, size=(cfg.n_neurons, 2))
    per = cfg.n_neurons // cfg.n_actions
    pref = np.concatenate([np.repeat(np.arange(cfg.n_actions), per),
                           rng.integers(0, cfg.n_actions, cfg.n_neurons - per * cfg.n_actions)])
    return {"positions": pos, "preferred_action": rng.permutation(pref)}


def _domain_params(cfg: WorldConfig, d: int, rng: np.random.Generator, layout_rng: np.random.Generator,
                   template: dict) -> dict:
    s = cfg.identity_strength
    lo, hi = cfg.skeleton_scale_range
    scale = 1.0 + s * (rng.uniform(lo, hi) - 1.0)
    offsets = s * rng.normal(0, cfg.joint_offset_sigma, size=(cfg.n_joints, 3))
    offsets[0] = 0
    glo, ghi = cfg.gain_range
    gain = 1.0 + s * (rng.uniform(glo, ghi) - 1.0)
    blo, bhi = cfg.background_range
    mid = 0.5 * (blo + bhi)
    background = mid + s * (rng.uniform(blo, bhi) - mid)

    pref = template["preferred_action"]
    pos = template["positions"].copy()
    visible = np.ones(cfg.n_neurons, dtype=bool)
    if cfg.layout_seed is None and s > 0:
        shift = layout_rng.normal(0, cfg.layout_shift_sigma, size=2)
        jitter = layout_rng.normal(0, cfg.neuron_jitter_sigma, size=pos.shape)
        pos = pos + s * (shift[None] + jitter)
        # hide part of the population, but keep one neuron per action
        frac = 1.0 - s * (1.0 - layout_rng.uniform(*cfg.visible_range))
        visible = layout_rng.random(cfg.n_neurons) < frac
        for a in np.unique(pref):
            members = np.flatnonzero(pref == a)
            if not visible[members].any():
                visible[layout_rng.choice(members)] = True
    H, W = cfg.image_size
    pos = np.clip(pos, 0.05, 0.95) * np.array([H, W])
    return {"scale": float(scale), "offsets": offsets, "gain": float(gain), "background": float(background),
            "positions": pos, "preferred_action": pref, "visible": visible}


def _blob_templates(cfg: WorldConfig, pos: np.ndarray) -> np.ndarray:
    H, W = cfg.image_size
    sig = cfg.blob_sigma * W
    yy, xx = np.mgrid[0:H, 0:W]
    d2 = (yy[None] - pos[:, 0, None, None]) ** 2 + (xx[None] - pos[:, 1, None, None]) ** 2
    return np.exp(-d2 / (2 * sig * sig))


def _render_trial(cfg: WorldConfig, shared: dict, dom: dict, templates: np.ndarray, d: int, k: int,
                  rng: np.random.Generator) -> Trial:
    intervals = _action_sequence(cfg, rng)
    n_b = int(round(cfg.trial_seconds * cfg.behavior_fps))
    n_n = int(round(cfg.trial_seconds * cfg.neural_fps))
    bt = np.arange(n_b) / cfg.behavior_fps
    nt = np.arange(n_n) / cfg.neural_fps
    acts_b = actions_at(intervals, bt)

    # smooth one-hot action weights so postures blend over ~80 ms
    onehot = np.eye(cfg.n_actions)[acts_b]
    alpha = 1.0 - np.exp(-1.0 / (0.08 * cfg.behavior_fps))
    w = np.empty_like(onehot)
    w[0] = onehot[0]
    for i in range(1, n_b):
        w[i] = w[i - 1] + alpha * (onehot[i] - w[i - 1])
    osc = np.sin(2 * np.pi * shared["freq"][None, :, None, None] * bt[:, None, None, None] + shared["phase"][None])
    motion = np.einsum("ta,tajc->tjc", w, shared["posture"][None] + shared["amp"][None] * osc)
    pose = dom["scale"] * (shared["base"][None] + motion) + dom["offsets"][None]
    pose = pose + rng.normal(0, cfg.pose_noise, size=pose.shape)
    pose = pose - pose[:, :1]  # root-centre

    acts_n = actions_at(intervals, nt)
    vig = shared["vigor"] / shared["vigor"].max()
    tuned = dom["preferred_action"][None, :] == acts_n[:, None]
    rate = cfg.base_firing_rate + tuned * cfg.active_firing_rate * vig[acts_n][:, None]
    spikes = (rng.random(rate.shape) < rate).astype(np.float64)
    calcium = np.zeros_like(spikes)
    prev = np.zeros(cfg.n_neurons)
    for t in range(n_n):
        prev = cfg.gamma_gen * prev + cfg.alpha_gen * spikes[t]
        calcium[t] = prev
    fluo = np.einsum("tn,nhw->thw", (cfg.resting_fluorescence + calcium) * dom["visible"], templates)
    clean = dom["gain"] * (dom["background"] + fluo)
    frames = rng.poisson(clean * cfg.photons) / cfg.photons

    return Trial(domain=d, index=k, behavior=pose.astype(np.float32), neural=frames.astype(np.float32),
                 behavior_t=bt, neural_t=nt, behavior_actions=acts_b, intervals=intervals,
                 calcium=calcium, spikes=spikes)


def generate_world(cfg: WorldConfig, seed: int = 0) -> MultiDomainDataset:
    """Generate every domain's trials. Same (cfg, seed) gives identical data."""
    cfg.validate()
    root = np.random.SeedSequence(seed)
    shared_ss, template_ss, *domain_ss = root.spawn(2 + cfg.n_domains)
    shared = _shared_params(cfg, np.random.default_rng(shared_ss))
    if cfg.layout_seed is not None:
        template_ss = np.random.SeedSequence(cfg.layout_seed)
    template = _layout_template(cfg, np.random.default_rng(template_ss))
    trials = []
    meta = {"domains": []}
    for d, ss in enumerate(domain_ss):
        param_ss, layout_ss, trial_ss = ss.spawn(3)
        dom = _domain_params(cfg, d, np.random.default_rng(param_ss), np.random.default_rng(layout_ss), template)
        templates = _blob_templates(cfg, dom["positions"])
        trial_rngs = [np.random.default_rng(s) for s in trial_ss.spawn(cfg.n_trials)]
        trials.append([_render_trial(cfg, shared, dom, templates, d, k, r) for k, r in enumerate(trial_rngs)])
        meta["domains"].append({"scale": dom["scale"], "gain": dom["gain"], "background": dom["background"],
                                "preferred_action": dom["preferred_action"].tolist(),
                                "positions": dom["positions"].tolist(), "visible": dom["visible"].tolist()})
    meta["vigor"] = shared["vigor"].tolist()
    return MultiDomainDataset(cfg, seed, trials, meta)


# ---------------------------------------------------------------------------
# pairing and splitting


def synchronize(behavior: np.ndarray, behavior_t: np.ndarray, neural: np.ndarray, neural_t: np.ndarray,
                neural_actions: np.ndarray | None = None, *, window: int = 32, behavior_window: int = 8,
                stride: int = 8, domain: int = 0, trial: int = -1) -> list[PairedSample]:
    """Cut paired windows from one behavior stream and one neural stream.

    Neural windows of ``window`` frames slide with ``stride``. The behavior
    window holds the ``behavior_window`` pose frames nearest to timestamps
    spaced one neural frame apart and centred on the neural window centre.
    The label is the majority action over the neural window.
    """
    out: list[PairedSample] = []
    if len(neural_t) < window or len(behavior_t) == 0:
        log.warning("synchronize: streams too short for a %d-frame window", window)
        return out
    dt_n = float(np.median(np.diff(neural_t))) if len(neural_t) > 1 else 1.0
    lo, hi = behavior_t[0], behavior_t[-1]
    if neural_t[-1] < lo or neural_t[0] > hi:
        log.warning("synchronize: behavior and neural streams do not overlap")
        return out
    offsets = (np.arange(behavior_window) - (behavior_window - 1) / 2) * dt_n
    for start in range(0, len(neural_t) - window + 1, stride):
        center = 0.5 * (neural_t[start] + neural_t[start + window - 1])
        want = center + offsets
        if want[0] < lo - dt_n / 2 or want[-1] > hi + dt_n / 2:
            continue
        idx = np.clip(np.searchsorted(behavior_t, want), 1, len(behavior_t) - 1)
        left_closer = (want - behavior_t[idx - 1]) <= (behavior_t[idx] - want)
        idx = np.where(left_closer, idx - 1, idx)
        if neural_actions is not None:
            counts = np.bincount(neural_actions[start:start + window])
            label = int(np.argmax(counts))
        else:
            label = -1
        out.append(PairedSample(b=behavior[idx], n=neural[start:start + window], domain=domain,
                                action=label, center_time=float(center), trial=trial,
                                neural_start=start, behavior_index=idx))
    if not out:
        log.warning("synchronize: no window fits inside the overlapping time range")
    return out


def windows_for(trials: list[Trial], *, window: int = 32, behavior_window: int = 8,
                stride: int = 8) -> list[PairedSample]:
    out = []
    for tr in trials:
        out.extend(synchronize(tr.behavior, tr.behavior_t, tr.neural, tr.neural_t, tr.neural_actions,
                               window=window, behavior_window=behavior_window, stride=stride,
                               domain=tr.domain, trial=tr.index))
    return out


def split_train_test(dataset: MultiDomainDataset, n_test: int = 2) -> tuple[list[Trial], list[Trial]]:
    """Hold out the last ``n_test`` trials of every domain for testing."""
    train, test = [], []
    for d, dom in enumerate(dataset.trials):
        if len(dom) < 3 or len(dom) - n_test < 1 or n_test < 1:
            raise ConfigurationError(f"domain {d} has {len(dom)} trials; need >= 3 and a non-empty split")
        train.extend(dom[:-n_test])
        held = dom[-n_test:]
        labels = np.concatenate([t.neural_actions for t in held])
        if len(np.unique(labels)) < 2:
            raise ConfigurationError(f"domain {d} test split contains a single action")
        test.extend(held)
    return train, test
