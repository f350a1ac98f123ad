"""Neural image pre-processing: motion registration and dF/F normalisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .errors import ContractError, DimensionError

# intensities are rescaled to an 8-bit range before the flow energy is
# evaluated, so the smoothness weight has a fixed meaning across inputs
_INTENSITY_RANGE = 255.0


@dataclass
class FlowField:
    """Per-pixel displacement ``w[..., 0]`` along rows, ``w[..., 1]`` along columns."""

    w: np.ndarray
    reference: int = 0
    smoothness: float = 800.0
    energy_history: list[float] = field(default_factory=list)
    level_energies: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.w.ndim != 3 or self.w.shape[2] != 2:
            raise DimensionError(f"flow must be [H, W, 2], got {self.w.shape}")
        if not np.isfinite(self.w).all():
            raise ContractError("flow field contains NaN/Inf")

    @classmethod
    def zeros(cls, shape: tuple[int, int], **kw) -> "FlowField":
        return cls(np.zeros(shape + (2,)), **kw)


def apply_flow(image: np.ndarray, flow: FlowField | np.ndarray) -> np.ndarray:
    """Sample ``image`` bilinearly at ``x + w(x)``; outside samples clamp to the border."""
    w = flow.w if isinstance(flow, FlowField) else np.asarray(flow)
    if not np.isfinite(w).all():
        raise ContractError("flow field contains NaN/Inf")
    h, wd = image.shape
    rr, cc = np.mgrid[0:h, 0:wd].astype(np.float64)
    coords = np.stack([rr + w[..., 0], cc + w[..., 1]])
    return ndimage.map_coordinates(image.astype(np.float64), coords, order=1, mode="nearest")


def _grad_operator(h: int, w: int) -> sparse.csr_matrix:
    """Forward differences along rows and columns (Neumann boundary)."""
    def diff1d(n):
        main = -np.ones(n)
        main[-1] = 0
        return sparse.diags([main, np.ones(n - 1)], [0, 1], shape=(n, n))

    dr = sparse.kron(diff1d(h), sparse.identity(w))
    dc = sparse.kron(sparse.identity(h), diff1d(w))
    return sparse.vstack([dr, dc]).tocsr()


def _energy(i_t, i_r, w, lam, G) -> float:
    r = apply_flow(i_t, w) - i_r
    smooth = sum(float(np.sum((G @ w[..., k].ravel()) ** 2)) for k in range(2))
    return float(np.sum(r * r)) + lam * smooth


def _refine(i_t, i_r, w, lam, iters, history) -> np.ndarray:
    h, wd = i_r.shape
    G = _grad_operator(h, wd)
    L = (G.T @ G).tocsr()
    n = h * wd
    reg = sparse.block_diag([L, L]).tocsr() * lam
    e = _energy(i_t, i_r, w, lam, G)
    history.append(e)
    for _ in range(iters):
        warped = apply_flow(i_t, w)
        gr, gc = np.gradient(i_t)
        jr = apply_flow(gr, w).ravel()
        jc = apply_flow(gc, w).ravel()
        r = (warped - i_r).ravel()
        jtj = sparse.bmat([[sparse.diags(jr * jr), sparse.diags(jr * jc)],
                           [sparse.diags(jr * jc), sparse.diags(jc * jc)]]).tocsr()
        wv = np.concatenate([w[..., 0].ravel(), w[..., 1].ravel()])
        rhs = -(np.concatenate([jr * r, jc * r]) + reg @ wv)
        A = jtj + reg + sparse.identity(2 * n) * 1e-6
        step = spsolve(A.tocsc(), rhs)
        # backtracking guard keeps the energy non-increasing
        alpha = 1.0
        accepted = False
        while alpha > 1e-4:
            cand = wv + alpha * step
            cand_w = np.stack([cand[:n].reshape(h, wd), cand[n:].reshape(h, wd)], axis=-1)
            ce = _energy(i_t, i_r, cand_w, lam, G)
            if ce <= e:
                w, e = cand_w, ce
                accepted = True
                break
            alpha *= 0.5
        history.append(e)
        if not accepted or np.max(np.abs(alpha * step)) < 1e-4:
            break
    return w


def _normalise(i_t: np.ndarray, i_r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = float(i_r.min()), float(i_r.max())
    span = hi - lo if hi > lo else 1.0
    f = lambda im: (im.astype(np.float64) - lo) / span * _INTENSITY_RANGE
    return f(i_t), f(i_r)


def register_frame(i_t: np.ndarray, i_r: np.ndarray, smoothness: float = 800.0, levels: int = 3,
                   iters: int = 10, reference: int = 0) -> FlowField:
    """Estimate the flow that warps ``i_t`` onto ``i_r``.

    Minimises ``sum (I_t(x + w) - I_r(x))^2 + smoothness * sum |grad w|^2``
    coarse-to-fine. Each level runs a fixed budget of Gauss-Newton steps,
    each accepted only if the full energy does not increase.
    """
    i_t = np.asarray(i_t)
    i_r = np.asarray(i_r)
    if i_t.shape != i_r.shape or i_t.ndim != 2:
        raise DimensionError(f"register_frame needs two equal 2-D images, got {i_t.shape} and {i_r.shape}")
    if not (np.isfinite(i_t).all() and np.isfinite(i_r).all()):
        raise ContractError("register_frame: non-finite input")
    a, b = _normalise(i_t, i_r)
    pyr_t, pyr_r = [a], [b]
    for _ in range(levels - 1):
        if min(pyr_t[-1].shape) < 8:
            break
        pyr_t.append(ndimage.zoom(ndimage.gaussian_filter(pyr_t[-1], 1.0), 0.5, order=1))
        pyr_r.append(ndimage.zoom(ndimage.gaussian_filter(pyr_r[-1], 1.0), 0.5, order=1))
    full_G = _grad_operator(*b.shape)
    w_full = np.zeros(b.shape + (2,))
    best_e = _energy(a, b, w_full, smoothness, full_G)
    level_energies = [best_e]
    history: list[float] = []
    w = np.zeros(pyr_t[-1].shape + (2,))
    for lvl in range(len(pyr_t) - 1, -1, -1):
        lt, lr = pyr_t[lvl], pyr_r[lvl]
        if w.shape[:2] != lt.shape:
            factor = (lt.shape[0] / w.shape[0], lt.shape[1] / w.shape[1])
            w = np.stack([ndimage.zoom(w[..., k], factor, order=1) * factor[k] for k in range(2)], axis=-1)
            w = w[: lt.shape[0], : lt.shape[1]]
        w = _refine(lt, lr, w, smoothness, iters, history)
        # compare at full resolution; keep the previous estimate if this level did worse
        up = (b.shape[0] / w.shape[0], b.shape[1] / w.shape[1])
        cand = np.stack([ndimage.zoom(w[..., k], up, order=1) * up[k] for k in range(2)], axis=-1)
        ce = _energy(a, b, cand, smoothness, full_G)
        if ce <= best_e:
            w_full, best_e = cand, ce
        else:
            w = np.stack([ndimage.zoom(w_full[..., k], (1 / up[0], 1 / up[1]), order=1) / up[k]
                          for k in range(2)], axis=-1)
        level_energies.append(best_e)
    return FlowField(w_full, reference=reference, smoothness=smoothness,
                     energy_history=history, level_energies=level_energies)


def register_stack(stack: np.ndarray, ref_frame: int = 0, smoothness: float = 800.0,
                   reference_image: np.ndarray | None = None) -> tuple[np.ndarray, list[FlowField]]:
    """Register every frame of ``stack`` to one reference and warp it."""
    ref = stack[ref_frame] if reference_image is None else reference_image
    flows = [register_frame(frame, ref, smoothness, reference=ref_frame) for frame in stack]
    out = np.stack([apply_flow(f, fl) for f, fl in zip(stack, flows)]).astype(stack.dtype)
    return out, flows


def moving_average(stack: np.ndarray, window: int = 15) -> np.ndarray:
    """Centred moving average along axis 0; windows shrink at the ends."""
    t = stack.shape[0]
    half = window // 2
    csum = np.concatenate([np.zeros((1,) + stack.shape[1:]), np.cumsum(stack, axis=0, dtype=np.float64)])
    lo = np.clip(np.arange(t) - half, 0, t)
    hi = np.clip(np.arange(t) + (window - half), 0, t)
    counts = (hi - lo).reshape((-1,) + (1,) * (stack.ndim - 1))
    return (csum[hi] - csum[lo]) / counts


def delta_f_over_f(stack: np.ndarray, window: int = 15, floor: float = 1e-6) -> np.ndarray:
    """Per-pixel ``(F - F0) / F0 * 100`` with F0 the minimum of a moving average."""
    stack = np.asarray(stack)
    if stack.shape[0] < window:
        raise ContractError(f"delta_f_over_f needs at least {window} frames, got {stack.shape[0]}")
    f0 = np.maximum(moving_average(stack, window).min(axis=0), floor)
    return ((stack - f0) / f0 * 100.0).astype(stack.dtype if stack.dtype.kind == "f" else np.float64)
