"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. every entry of ``x``."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |g_ad - g_fd| / max(1, |g_fd|)."""
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Return the worst relative error over all ``inputs``.

    ``fn`` must rebuild its graph on every call; inputs must be float64
    leaves with ``requires_grad`` set.
    """
    for x in inputs:
        x.grad = None
    fn().backward()
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, max_rel_error(analytic, numerical_grad(fn, x, h)))
    return worst


# ---------------------------------------------------------------------------
# named suite used by the CLI and the acceptance tests

OP_TOL = 1e-5
END_TO_END_TOL = 1e-4


def _leaf(rng, *shape, away_from_zero: bool = False) -> Tensor:
    x = rng.normal(size=shape)
    if away_from_zero:
        # keep relu/max inputs off their kinks so central differences are exact
        x = np.sign(x) * (np.abs(x) + 0.1)
    return Tensor(x, requires_grad=True)


def _probe(out: Tensor, rng) -> Tensor:
    """Reduce ``out`` to a scalar with fixed random weights."""
    from . import tensor as T

    w = rng.normal(size=out.shape)
    return T.tsum(T.mul(out, w))


def _unary(name):
    def case(rng):
        from . import tensor as T

        x = _leaf(rng, 3, 4, away_from_zero=True)
        if name == "log":
            x.data[...] = np.abs(x.data) + 0.5
        op = getattr(T, name)
        w = rng.normal(size=x.shape)
        return check(lambda: T.tsum(T.mul(op(x), w)), [x])
    return case


def _binary(name):
    def case(rng):
        from . import tensor as T

        a, b = _leaf(rng, 3, 4), _leaf(rng, 1, 4)
        if name == "div":
            b.data[...] = np.abs(b.data) + 0.5
        op = getattr(T, name)
        w = rng.normal(size=(3, 4))
        return check(lambda: T.tsum(T.mul(op(a, b), w)), [a, b])
    return case


def _simple(build, *shapes, away=False):
    def case(rng):
        xs = [_leaf(rng, *s, away_from_zero=away) for s in shapes]
        probe_rng = np.random.default_rng(int(rng.integers(1 << 31)))
        w_seed = int(probe_rng.integers(1 << 31))
        return check(lambda: _probe(build(*xs), np.random.default_rng(w_seed)), xs)
    return case


def _ops():
    from . import tensor as T
    from .encoders import attention_pool

    bn_state = {}

    def bn(mode):
        def build(x):
            st = bn_state.setdefault(mode, T.BatchNormState(x.shape[1], np.float64))
            if mode == "eval":
                st.running_mean[:] = [0.1, -0.2, 0.3]
                st.running_var[:] = [0.5, 1.5, 2.0]
            return T.batch_norm(x, st, mode)
        return build

    mask = np.array([[1, 1, 0, 1], [0, 1, 1, 1], [1, 0, 1, 1]], dtype=bool)
    return {
        **{n: _unary(n) for n in ("relu", "tanh", "exp", "log", "square")},
        **{n: _binary(n) for n in ("add", "sub", "mul", "div")},
        "scale": _simple(lambda x: T.scale(x, -2.5), (3, 4)),
        "grad_reverse_identity": _simple(lambda x: T.grad_reverse(x, -1.0), (3, 4)),
        "sum": _simple(lambda x: T.tsum(x, axis=1, keepdims=True), (3, 4)),
        "mean": _simple(lambda x: T.mean(x, axis=0), (3, 4)),
        "reshape": _simple(lambda x: T.reshape(x, (2, 6)), (3, 4)),
        "transpose": _simple(lambda x: T.transpose(x, (2, 0, 1)), (2, 3, 4)),
        "getitem": _simple(lambda x: T.getitem(x, np.array([2, 0, 2])), (3, 4)),
        "concat": _simple(lambda a, b: T.concat([a, b], axis=1), (3, 2), (3, 4)),
        "matmul": _simple(T.matmul, (3, 4), (4, 5)),
        "matmul_batched": _simple(T.matmul, (2, 3, 4), (4, 2)),
        "linear": _simple(T.linear, (3, 4), (4, 2), (2,)),
        "softmax": _simple(lambda x: T.softmax(x, axis=1), (3, 4)),
        "log_softmax": _simple(lambda x: T.log_softmax(x, axis=0), (3, 4)),
        "log_softmax_masked": _simple(lambda x: T.log_softmax(x, axis=1, mask=mask), (3, 4)),
        "l2_normalize": _simple(lambda x: T.l2_normalize(x, axis=1), (3, 4)),
        "cosine_similarity": _simple(T.cosine_similarity_matrix, (3, 4), (3, 4)),
        "conv1d": _simple(lambda x, k, b: T.conv(x, k, b, stride=1, padding=1), (2, 3, 7), (4, 3, 3), (4,)),
        "conv1d_strided": _simple(lambda x, k: T.conv(x, k, stride=2), (2, 2, 8), (3, 2, 3)),
        "conv2d": _simple(lambda x, k, b: T.conv(x, k, b, padding=1), (2, 2, 5, 5), (3, 2, 3, 3), (3,)),
        "conv2d_strided": _simple(lambda x, k: T.conv(x, k, stride=2, padding=1), (1, 2, 6, 6), (2, 2, 3, 3)),
        "pool_max1d": _simple(lambda x: T.pool_max(x, 2), (2, 3, 8), away=True),
        "pool_max2d": _simple(lambda x: T.pool_max(x, (2, 2)), (2, 2, 4, 6), away=True),
        "pool_avg": _simple(lambda x: T.pool_avg(x, 2), (2, 2, 4, 6)),
        "batch_norm_train": _simple(bn("train"), (4, 3, 5)),
        "batch_norm_eval": _simple(bn("eval"), (4, 3, 5)),
        "attention_verbatim": _simple(lambda s, w1, w2: attention_pool(s, w1, w2, "verbatim"),
                                      (2, 5, 4), (3, 4), (1, 3)),
        "attention_softmax": _simple(lambda s, w1, w2: attention_pool(s, w1, w2, "softmax"),
                                     (2, 5, 4), (3, 4), (1, 3)),
    }


def _objectives():
    from . import objectives as O
    from . import tensor as T
    from .encoders import Discriminator, EncoderConfig

    def nce(rng):
        zb, zn = _leaf(rng, 6, 5), _leaf(rng, 6, 5)
        return check(lambda: O.info_nce(zb, zn, 0.1).total, [zb, zn])

    def nce_masked(rng):
        zb, zn = _leaf(rng, 6, 5), _leaf(rng, 6, 5)
        dom = np.array([0, 1, 0, 2, 1, 2])
        return check(lambda: O.info_nce_domain_masked(zb, zn, dom, 0.1).total, [zb, zn])

    def grl(rng):
        # the encoder side must see exactly -lambda times the true gradient
        cfg = EncoderConfig(embedding_dim=6, dtype="float64")
        disc = Discriminator(cfg, 3, rng)
        h = _leaf(rng, 5, 6)
        dom = np.array([0, 1, 2, 1, 0])
        lam = O.LAMBDA_D
        loss = lambda: O.grl_discriminator_loss(h, dom, disc, lam)
        h.grad = None
        for p in disc.parameters():
            p.grad = None
        loss().backward()
        err = max_rel_error(h.grad, -lam * numerical_grad(loss, h))
        for p in disc.parameters():
            g = p.grad
            err = max(err, max_rel_error(g, numerical_grad(loss, p)))
        return err

    def mmd(rng):
        a, b = _leaf(rng, 5, 3), _leaf(rng, 4, 3)
        bw = O.median_bandwidth(np.concatenate([a.data, b.data]))
        return check(lambda: O.mmd(a, b, bw), [a, b])

    def mmd_multi(rng):
        h = _leaf(rng, 8, 3)
        dom = np.array([0, 0, 1, 1, 2, 2, 0, 1])
        bw = O.median_bandwidth(h.data)
        groups = lambda: [T.getitem(h, np.flatnonzero(dom == d)) for d in range(3)]

        def f():
            g = groups()
            return T.add(T.add(O.mmd(g[0], g[1], bw), O.mmd(g[0], g[2], bw)), O.mmd(g[1], g[2], bw))
        return check(f, [h])

    def model_nce(rng):
        from .encoders import ModelBundle

        cfg = EncoderConfig(n_joints=3, behavior_frames=4, neural_frames=4, image_size=(8, 8), input_pool=2,
                            frame_channels=(2,), frame_fc=(5,), neural_temporal_channels=(4, 4),
                            behavior_channels=(4, 4), attention_dim=3, embedding_dim=6, projection_dim=4,
                            dtype="float64")
        m = ModelBundle(cfg, seed=int(rng.integers(1000)))
        m.eval()  # eval-mode BN keeps the per-sample graph smooth
        b = rng.normal(size=(3, 4, 3, 3))
        n = rng.normal(size=(3, 4, 8, 8))
        f = lambda: O.info_nce(m.project(m.encode_behavior(b), "behavior"),
                               m.project(m.encode_neural(n), "neural"), 0.5).total
        params = [p for p in m.parameters() if p.size <= 64]
        return check(f, params)

    def model_regression(rng):
        from .encoders import ModelBundle

        cfg = EncoderConfig(n_joints=3, behavior_frames=4, neural_frames=4, image_size=(8, 8), input_pool=2,
                            frame_channels=(2,), frame_fc=(5,), neural_temporal_channels=(4, 4),
                            behavior_channels=(4, 4), attention_dim=3, embedding_dim=6, projection_dim=4,
                            dtype="float64")
        m = ModelBundle(cfg, seed=int(rng.integers(1000)), extra_heads={"regressor": 4 * 3 * 3})
        m.eval()
        b = rng.normal(size=(3, 4 * 3 * 3))
        n = rng.normal(size=(3, 4, 8, 8))
        f = lambda: T.mean(T.square(T.sub(m.heads["regressor"](m.encode_neural(n)), b)))
        params = [p for p in m.parameters() if p.size <= 64]
        return check(f, params)

    return {"info_nce": nce, "info_nce_domain_masked": nce_masked, "grl": grl, "mmd": mmd,
            "multi_domain_mmd": mmd_multi, "model_info_nce": model_nce, "model_regression": model_regression}


def suite() -> dict[str, tuple[Callable, float]]:
    """Every named check with its tolerance."""
    out = {k: (v, OP_TOL) for k, v in _ops().items()}
    out.update({k: (v, END_TO_END_TOL) for k, v in _objectives().items()})
    return out


def run_suite(names: Sequence[str] | None = None, seed: int = 0) -> dict[str, tuple[float, float]]:
    """Run checks in float64; returns ``{name: (error, tolerance)}``."""
    cases = suite()
    names = list(cases) if names is None else list(names)
    unknown = [n for n in names if n not in cases]
    if unknown:
        raise KeyError(f"unknown gradcheck case(s) {unknown}; available: {sorted(cases)}")
    out = {}
    for i, name in enumerate(names):
        fn, tol = cases[name]
        out[name] = (float(fn(np.random.default_rng([seed, i]))), tol)
    return out
