"""Contrastive and domain-adaptation objectives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

log = logging.getLogger(__name__)

LAMBDA_D = 10.0
LAMBDA_MMD = 1.0


@dataclass
class NCEResult:
    total: Tensor
    b2n: Tensor
    n2b: Tensor
    n: int

    @property
    def mean_per_sample(self) -> float:
        """Mean per-sample, per-direction loss (for logging)."""
        return float(self.total.data) / (2 * self.n)


def _similarity_logits(z_b: Tensor, z_n: Tensor, tau: float) -> Tensor:
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    if z_b.shape != z_n.shape:
        raise DimensionError(f"z_b {z_b.shape} and z_n {z_n.shape} differ")
    return T.scale(T.cosine_similarity_matrix(z_b, z_n), 1.0 / tau)


def _diag_sum(m: Tensor) -> Tensor:
    eye = np.eye(m.shape[0], dtype=m.dtype)
    return T.tsum(T.mul(m, eye))


def info_nce(z_b: Tensor, z_n: Tensor, tau: float = 0.1) -> NCEResult:
    """Symmetric InfoNCE summed over the batch.

    ``b2n`` normalises each row of the similarity matrix over neural
    candidates; ``n2b`` normalises each column over behavioral candidates.
    """
    logits = _similarity_logits(z_b, z_n, tau)
    b2n = T.scale(_diag_sum(T.log_softmax(logits, axis=1)), -1.0)
    n2b = T.scale(_diag_sum(T.log_softmax(logits, axis=0)), -1.0)
    return NCEResult(T.add(b2n, n2b), b2n, n2b, z_b.shape[0])


def info_nce_domain_masked(z_b: Tensor, z_n: Tensor, domains, tau: float = 0.1) -> NCEResult:
    """InfoNCE whose denominators only include same-domain candidates.

    Both directions are masked. A domain with a single row in the batch
    contributes exactly zero.
    """
    domains = np.asarray(domains)
    if domains.shape != (z_b.shape[0],):
        raise DimensionError("need one domain id per row")
    mask = domains[:, None] == domains[None, :]
    ids, counts = np.unique(domains, return_counts=True)
    if np.any(counts == 1):
        log.warning("domains %s have a single sample in the batch; their terms are zero",
                    ids[counts == 1].tolist())
    logits = _similarity_logits(z_b, z_n, tau)
    b2n = T.scale(_diag_sum(T.log_softmax(logits, axis=1, mask=mask)), -1.0)
    n2b = T.scale(_diag_sum(T.log_softmax(logits, axis=0, mask=mask)), -1.0)
    return NCEResult(T.add(b2n, n2b), b2n, n2b, z_b.shape[0])


def domain_cross_entropy(logits: Tensor, domains, n_domains: int) -> Tensor:
    """Summed cross-entropy of discriminator logits against domain ids."""
    if n_domains < 2:
        raise ConfigurationError("domain discrimination needs at least 2 domains")
    onehot = np.eye(n_domains, dtype=logits.dtype)[np.asarray(domains)]
    return T.scale(T.tsum(T.mul(T.log_softmax(logits, axis=1), onehot)), -1.0)


def grl_discriminator_loss(h: Tensor, domains, discriminator, lam: float = LAMBDA_D) -> Tensor:
    """Discriminator loss on representations passed through gradient reversal.

    The discriminator receives ordinary gradients; the encoder producing ``h``
    receives them multiplied by ``-lam``.
    """
    logits = discriminator(T.grad_reverse(h, lam))
    return domain_cross_entropy(logits, domains, discriminator.n_domains)


def median_bandwidth(x: np.ndarray, floor: float = 1e-6) -> float:
    """Median pairwise Euclidean distance (distinct pairs) of the rows of ``x``."""
    sq = (x * x).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0)
    iu = np.triu_indices(x.shape[0], 1)
    return max(float(np.median(np.sqrt(d2[iu]))), floor)


def _sq_dists(a: Tensor, b: Tensor) -> Tensor:
    aa = T.tsum(T.square(a), axis=1, keepdims=True)
    bb = T.transpose(T.tsum(T.square(b), axis=1, keepdims=True))
    return T.add(T.add(aa, bb), T.scale(T.matmul(a, T.transpose(b)), -2.0))


def mmd(h_a: Tensor, h_b: Tensor, bandwidth: float | None = None) -> Tensor:
    """Unbiased squared-MMD estimate with an RBF kernel.

    The bandwidth defaults to the median pairwise distance over the pooled
    points (treated as a constant, no gradient flows through it). When
    ``m == n`` the cross term also drops the ``i == j`` pairs, so identical
    inputs give exactly zero.
    """
    h_a, h_b = T.as_tensor(h_a), T.as_tensor(h_b)
    m, n = h_a.shape[0], h_b.shape[0]
    if m < 2 or n < 2:
        raise DimensionError("mmd needs at least 2 samples on each side")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.concatenate([h_a.data, h_b.data]).astype(np.float64))
    c = -1.0 / (2.0 * bandwidth * bandwidth)

    def kmean(x: Tensor, y: Tensor, offdiag: bool) -> Tensor:
        k = T.exp(T.scale(_sq_dists(x, y), c))
        if offdiag:
            off = 1.0 - np.eye(x.shape[0], dtype=k.dtype)
            return T.scale(T.tsum(T.mul(k, off)), 1.0 / (x.shape[0] * (x.shape[0] - 1)))
        return T.scale(T.tsum(k), 1.0 / (x.shape[0] * y.shape[0]))

    within = T.add(kmean(h_a, h_a, True), kmean(h_b, h_b, True))
    return T.sub(within, T.scale(kmean(h_a, h_b, m == n), 2.0))


def multi_domain_mmd(h: Tensor, domains) -> Tensor | None:
    """Mean pairwise MMD between every pair of domains with >= 2 rows.

    Returns None when fewer than two domains qualify.
    """
    domains = np.asarray(domains)
    ids = [d for d in np.unique(domains) if (domains == d).sum() >= 2]
    if len(ids) < 2:
        return None
    groups = {d: T.getitem(h, np.flatnonzero(domains == d)) for d in ids}
    bw = median_bandwidth(h.data.astype(np.float64))
    terms = [mmd(groups[a], groups[b], bw) for i, a in enumerate(ids) for b in ids[i + 1:]]
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))
