"""Cross-domain swapping, calcium and mix augmentations, plus per-window jitter.

Batched functions (``*_batch``) are what training uses; the single-window
functions wrap them with a batch of one so both paths share one code path.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DimensionError

log = logging.getLogger(__name__)


@dataclass
class CalciumKernel:
    gamma: float = 0.95
    length: int = 32
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigurationError("calcium kernel gamma must lie in (0, 1)")
        if self.length < 1:
            raise ConfigurationError("calcium kernel length must be >= 1")

    @property
    def values(self) -> np.ndarray:
        return self.gamma ** np.arange(self.length, dtype=np.float64)


@dataclass
class AugmentConfig:
    swap_behavior: bool = True
    p_swap_pose: float = 1.0
    swap_neural: bool = True
    p_swap_neural: float = 0.5
    n_neighbors: int = 128
    calcium: bool = True
    p_calcium: float = 0.5
    calcium_gamma: float = 0.95
    calcium_amplitude: float = 1.0
    mix: bool = True
    p_mix: float = 0.5
    mix_range: tuple[float, float] = (0.0, 0.5)
    jitter_neural: bool = True
    p_poisson: float = 0.5
    poisson_scale: float = 20.0
    p_blur: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 1.0)
    p_color: float = 0.5
    brightness: float = 0.1
    contrast: float = 0.2
    jitter_behavior: bool = True
    p_pose_scale: float = 0.5
    pose_scale_range: tuple[float, float] = (0.9, 1.1)
    p_shear: float = 0.5
    shear: float = 0.05
    temporal_drop: float = 0.05
    spatial_drop: float = 0.05

    def __post_init__(self):
        for name in ("mix_range", "blur_sigma_range", "pose_scale_range"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            if f.name.startswith("p_") or f.name in ("temporal_drop", "spatial_drop"):
                v = getattr(self, f.name)
                if not 0.0 <= v <= 1.0:
                    raise ConfigurationError(f"{f.name}={v} is not a probability")
        lo, hi = self.mix_range
        if not 0.0 <= lo <= hi < 1.0:
            raise ConfigurationError("mix_range must lie within [0, 1)")
        if self.n_neighbors < 1:
            raise ConfigurationError("n_neighbors must be >= 1")
        CalciumKernel(self.calcium_gamma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(swap_behavior=False, swap_neural=False, calcium=False, mix=False,
                   jitter_neural=False, jitter_behavior=False)


# ---------------------------------------------------------------------------
# neighbour index


class NeighborIndex:
    """Exact Euclidean search over per-domain pose and window pools.

    ``poses[d]`` holds individual flattened poses of domain ``d``;
    ``windows[d]`` holds flattened behavior windows together with the id of
    the sample each came from, so its neural window can be looked up.
    """

    def __init__(self, poses: dict[int, np.ndarray], windows: dict[int, np.ndarray],
                 window_ids: dict[int, np.ndarray], n_neighbors: int = 128):
        self.poses = {d: np.asarray(p, dtype=np.float64) for d, p in poses.items()}
        self.windows = {d: np.asarray(w, dtype=np.float64) for d, w in windows.items()}
        self.window_ids = {d: np.asarray(i) for d, i in window_ids.items()}
        self.n_neighbors = n_neighbors
        self.domains = sorted(self.poses)
        self._pose_sq = {d: (p * p).sum(1) for d, p in self.poses.items()}
        self._win_sq = {d: (w * w).sum(1) for d, w in self.windows.items()}

    @classmethod
    def build(cls, behaviors: np.ndarray, domains: np.ndarray, pose_keys: np.ndarray | None = None,
              n_neighbors: int = 128) -> "NeighborIndex":
        """Index behavior windows ``[M, T, J, 3]`` with their domain ids.

        ``pose_keys`` ([M, T] hashable ids, e.g. trial*1e6 + frame) removes
        duplicate poses shared by overlapping windows.
        """
        behaviors = np.asarray(behaviors)
        domains = np.asarray(domains)
        m, t = behaviors.shape[:2]
        flat_pose = behaviors.reshape(m * t, -1)
        pose_dom = np.repeat(domains, t)
        if pose_keys is not None:
            _, first = np.unique(np.asarray(pose_keys).reshape(-1), return_index=True)
            keep = np.sort(first)
            flat_pose, pose_dom = flat_pose[keep], pose_dom[keep]
        poses, windows, ids = {}, {}, {}
        for d in np.unique(domains):
            d = int(d)
            poses[d] = flat_pose[pose_dom == d]
            sel = np.flatnonzero(domains == d)
            windows[d] = behaviors[sel].reshape(len(sel), -1)
            ids[d] = sel
        return cls(poses, windows, ids, n_neighbors)

    @staticmethod
    def _topk(q: np.ndarray, pool: np.ndarray, pool_sq: np.ndarray, k: int):
        d2 = (q * q).sum(1)[:, None] + pool_sq[None, :] - 2.0 * q @ pool.T
        dist = np.sqrt(np.maximum(d2, 0))
        k = min(k, pool.shape[0])
        if k < pool.shape[0]:
            part = np.argpartition(dist, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(pool.shape[0]), (q.shape[0], pool.shape[0]))
        pd = np.take_along_axis(dist, part, axis=1)
        # stable sort on (distance, index) for reproducible tie order
        order = np.lexsort((part, pd), axis=1)
        return np.take_along_axis(part, order, 1), np.take_along_axis(pd, order, 1)

    def pose_neighbors(self, queries: np.ndarray, domain: int, source_domain: int | None = None):
        """Top-N pose neighbours in ``domain`` for flattened ``queries`` [Q, J*3]."""
        if source_domain is not None and domain == source_domain:
            raise ValueError("neighbour queries must target a different domain")
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        return self._topk(q, self.poses[domain], self._pose_sq[domain], self.n_neighbors)

    def window_neighbors(self, queries: np.ndarray, domain: int, source_domain: int | None = None):
        """Top-N whole-window neighbours; returns (sample ids, distances)."""
        if source_domain is not None and domain == source_domain:
            raise ValueError("neighbour queries must target a different domain")
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        local, dist = self._topk(q, self.windows[domain], self._win_sq[domain], self.n_neighbors)
        return self.window_ids[domain][local], dist


def swap_probabilities(distances: np.ndarray) -> np.ndarray:
    """Softmax of negative Euclidean distances along the last axis."""
    d = np.asarray(distances, dtype=np.float64)
    if d.shape[-1] == 0:
        raise DimensionError("swap_probabilities: empty candidate set")
    e = np.exp(-(d - d.min(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row via inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1)) * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), probs.shape[1] - 1)


def _other_domains(domains: np.ndarray, all_domains: list[int], rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of a domain different from each entry of ``domains``."""
    all_domains = np.asarray(all_domains)
    k = len(all_domains)
    pos = np.searchsorted(all_domains, domains)
    shift = rng.integers(1, k, size=np.shape(domains))
    return all_domains[(pos + shift) % k]


def swap_behavior_batch(b: np.ndarray, domains: np.ndarray, index: NeighborIndex, rng: np.random.Generator,
                        p_pose: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Replace each pose by a sampled neighbour from a random other domain.

    Returns the swapped windows and the domain id each pose now comes from.
    """
    b = np.asarray(b)
    n, t = b.shape[:2]
    src = np.repeat(np.asarray(domains), t)
    if len(index.domains) < 2:
        log.warning("swap_behavior: fewer than 2 domains indexed; returning input unchanged")
        return b.copy(), src.reshape(n, t)
    flat = b.reshape(n * t, -1).astype(np.float64)
    target = _other_domains(src, index.domains, rng)
    active = rng.random(n * t) < p_pose
    out = flat.copy()
    new_dom = src.copy()
    for d in index.domains:
        sel = np.flatnonzero(active & (target == d))
        if sel.size == 0:
            continue
        if index.poses[d].shape[0] == 0:
            log.warning("swap_behavior: domain %d has no candidates; skipping", d)
            continue
        nbr, dist = index.pose_neighbors(flat[sel], d)
        pick = _sample_rows(swap_probabilities(dist), rng)
        out[sel] = index.poses[d][nbr[np.arange(sel.size), pick]]
        new_dom[sel] = d
    return out.reshape(b.shape).astype(b.dtype), new_dom.reshape(n, t)


def swap_behavior(b: np.ndarray, domain: int, index: NeighborIndex, rng: np.random.Generator) -> np.ndarray:
    return swap_behavior_batch(b[None], np.array([domain]), index, rng)[0][0]


def swap_neural_batch(b: np.ndarray, domains: np.ndarray, index: NeighborIndex, rng: np.random.Generator
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Pick, for each behavior window, a neighbouring window of another domain.

    Returns (sample ids whose neural windows should replace the originals,
    their domain ids). With fewer than 2 domains, returns -1 ids.
    """
    b = np.asarray(b)
    domains = np.asarray(domains)
    n = b.shape[0]
    ids = np.full(n, -1)
    if len(index.domains) < 2:
        log.warning("swap_neural: fewer than 2 domains indexed; returning input unchanged")
        return ids, domains.copy()
    flat = b.reshape(n, -1).astype(np.float64)
    target = _other_domains(domains, index.domains, rng)
    for d in index.domains:
        sel = np.flatnonzero(target == d)
        if sel.size == 0:
            continue
        nbr, dist = index.window_neighbors(flat[sel], d)
        pick = _sample_rows(swap_probabilities(dist), rng)
        ids[sel] = nbr[np.arange(sel.size), pick]
    return ids, target


def swap_neural(b: np.ndarray, n: np.ndarray, domain: int, index: NeighborIndex, neural_lookup,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (b, replacement neural window, its domain).

    ``neural_lookup(sample_id)`` must return the neural window of an indexed sample.
    """
    ids, doms = swap_neural_batch(b[None], np.array([domain]), index, rng)
    if ids[0] < 0:
        return b, n, domain
    return b, neural_lookup(int(ids[0])), int(doms[0])


# ---------------------------------------------------------------------------
# neural-specific augmentations


def calcium_component(donor: np.ndarray, kernel: CalciumKernel, n_frames: int, phase: int) -> np.ndarray:
    """``amplitude * gamma^(t + phase) * donor`` for t = 0..n_frames-1."""
    w = kernel.amplitude * kernel.gamma ** (np.arange(n_frames) + phase)
    return w[:, None, None] * donor[None]


def calcium_augment(n: np.ndarray, donor: np.ndarray, kernel: CalciumKernel, rng: np.random.Generator,
                    phase: int | None = None, clamp: bool = True) -> np.ndarray:
    """Add a decaying copy of ``donor`` (a frame from outside the window)."""
    if donor.shape != n.shape[1:]:
        raise DimensionError(f"donor frame {donor.shape} does not match window frames {n.shape[1:]}")
    if phase is None:
        phase = int(rng.integers(0, n.shape[0]))
    out = n + calcium_component(donor, kernel, n.shape[0], phase).astype(n.dtype)
    return np.maximum(out, 0) if clamp else out


def mix_augment(n: np.ndarray, donor: np.ndarray, rng: np.random.Generator,
                mix_range: tuple[float, float] = (0.0, 0.5), alpha: float | None = None) -> np.ndarray:
    """Blend in another window: ``n + alpha * donor`` with one alpha per window."""
    if donor.shape != n.shape:
        raise DimensionError(f"mix donor {donor.shape} does not match window {n.shape}")
    if alpha is None:
        alpha = float(rng.uniform(*mix_range))
    return n + n.dtype.type(alpha) * donor


def jitter_neural(n: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Poisson noise, Gaussian blur, brightness and contrast; one draw per window."""
    return jitter_neural_batch(n[None], cfg, rng)[0]


def jitter_neural_batch(n: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = n.copy()
    if not cfg.jitter_neural:
        return out
    B = n.shape[0]
    do_poisson = rng.random(B) < cfg.p_poisson
    do_blur = rng.random(B) < cfg.p_blur
    sigmas = rng.uniform(*cfg.blur_sigma_range, size=B)
    do_color = rng.random(B) < cfg.p_color
    bright = rng.uniform(-cfg.brightness, cfg.brightness, size=B)
    contrast = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast, size=B)
    sel = np.flatnonzero(do_poisson)
    if sel.size:
        lam = np.maximum(out[sel], 0) * out.dtype.type(cfg.poisson_scale)
        out[sel] += (rng.poisson(lam) - lam) / out.dtype.type(cfg.poisson_scale)
    for i in np.flatnonzero(do_blur):
        out[i] = ndimage.gaussian_filter(out[i], sigma=(0, sigmas[i], sigmas[i]))
    for i in np.flatnonzero(do_color):
        m = out[i].mean()
        out[i] = (out[i] - m) * out.dtype.type(contrast[i]) + m + out.dtype.type(bright[i])
    return out


# ---------------------------------------------------------------------------
# behavior jitter


def jitter_behavior(b: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Scale, shear, temporal and spatial dropping. Returns (window, keep mask [T, J])."""
    out, mask = jitter_behavior_batch(b[None], cfg, rng)
    return out[0], mask[0]


def jitter_behavior_batch(b: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
                          ) -> tuple[np.ndarray, np.ndarray]:
    B, t, j, _ = b.shape
    mask = np.ones((B, t, j), dtype=bool)
    if not cfg.jitter_behavior:
        return b.copy(), mask
    do_scale = rng.random(B) < cfg.p_pose_scale
    scales = np.where(do_scale, rng.uniform(*cfg.pose_scale_range, size=B), 1.0)
    do_shear = rng.random(B) < cfg.p_shear
    shear = rng.uniform(-cfg.shear, cfg.shear, size=(B, 3, 3)) * do_shear[:, None, None]
    mats = (np.eye(3)[None] + shear * (1 - np.eye(3))[None]) * scales[:, None, None]
    out = np.einsum("btjc,bdc->btjd", b.astype(np.float64), mats)
    drop_t = rng.random((B, t)) < cfg.temporal_drop
    drop_j = rng.random((B, j)) < cfg.spatial_drop
    mask &= ~drop_t[:, :, None]
    mask &= ~drop_j[:, None, :]
    if drop_t.all(axis=1).any():
        log.warning("jitter_behavior: every frame of a window was dropped")
    out = out * mask[..., None]
    return out.astype(b.dtype), mask
