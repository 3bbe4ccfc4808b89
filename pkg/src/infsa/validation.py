"""Verification tools: finite-difference gradient checks, rank correlation and
the Perron-eigenvector alignment protocol for Linear InfSA weights."""

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from infsa import layers
from infsa.errors import DegenerateOperatorError, EvaluationError, ShapeError, UndefinedCorrelationError
from infsa.graph import DEFAULT_EPS, build_affinity
from infsa.tensor import POWER_MAX_ITERS, as_vector, power_iteration

FD_STEP = 1e-6
_REL_FLOOR = 1e-8
#: Mean cosine reported for a trained checkpoint; informational only.
REFERENCE_CHECKPOINT_COSINE = 0.985
REFERENCE_CHECKPOINT_SPEARMAN = 0.937


@dataclass(frozen=True)
class AlignmentResult:
    cosine: float
    spearman: Optional[float]
    n_samples: int
    cosine_std: float = 0.0
    spearman_std: Optional[float] = None
    n_degenerate: int = 0
    n_spearman_undefined: int = 0

    @property
    def degenerate(self):
        return self.n_samples == 0


def gradcheck_fd(f, theta, step=FD_STEP):
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(theta)`` returns ``(value, grad)``; only the value is used at the
    perturbed points. Relative error per coordinate is
    ``|g - fd| / max(|g|, |fd|, 1e-8)``.
    """
    theta = np.array(theta, dtype=np.float64).ravel()
    if step <= 0:
        raise ValueError("step must be positive")
    value, grad = f(theta)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != theta.shape:
        raise ShapeError(f"gradient has shape {grad.shape}, theta has {theta.shape}")
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise EvaluationError("f or its gradient is not finite at theta")
    worst = 0.0
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + step
        fp = f(probe)[0]
        probe[i] = theta[i] - step
        fm = f(probe)[0]
        probe[i] = theta[i]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"f is not finite near coordinate {i}")
        fd = (fp - fm) / (2.0 * step)
        err = abs(grad[i] - fd) / max(abs(grad[i]), abs(fd), _REL_FLOOR)
        worst = max(worst, err)
    return worst


def spearman(u, v):
    """Spearman rank correlation; tied values share their average rank."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.size} vs {v.size}")
    if u.size < 2:
        raise ValueError("spearman needs at least two observations")
    ru = rankdata(u) - (u.size + 1) / 2.0
    rv = rankdata(v) - (v.size + 1) / 2.0
    su, sv = np.sqrt(ru @ ru), np.sqrt(rv @ rv)
    if su == 0.0 or sv == 0.0:
        raise UndefinedCorrelationError("rank correlation of a constant vector is undefined")
    return float(np.clip((ru @ rv) / (su * sv), -1.0, 1.0))


def cosine(u, v):
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def eigenvector_alignment(q, epsilon=DEFAULT_EPS, t_pow=POWER_MAX_ITERS):
    """Compare Linear InfSA weights with the Perron vector of ``relu(Q Q^T)/||.||_F``.

    The Perron vector comes from ``t_pow`` steps of l1-normalised power
    iteration from the uniform vector. Samples whose operator or score vector
    vanishes are flagged degenerate (``n_samples == 0``).
    """
    q = np.asarray(q, dtype=np.float64)
    if t_pow < 1:
        raise ValueError("t_pow must be >= 1")
    a_hat = build_affinity(q, q, epsilon).mat
    if not np.any(a_hat):
        return AlignmentResult(float("nan"), None, 0, n_degenerate=1)
    try:
        v, _, _ = power_iteration(a_hat, max_iters=t_pow, tol=0.0)
    except DegenerateOperatorError:
        return AlignmentResult(float("nan"), None, 0, n_degenerate=1)
    a, cache = layers.linfsa_weights_forward(q, epsilon)
    if cache is None:
        return AlignmentResult(float("nan"), None, 0, n_degenerate=1)
    try:
        rho = spearman(v, a)
        undefined = 0
    except UndefinedCorrelationError:
        rho, undefined = None, 1
    return AlignmentResult(cosine(v, a), rho, 1, n_spearman_undefined=undefined)


def alignment_batch(samples, epsilon=DEFAULT_EPS, t_pow=POWER_MAX_ITERS):
    """Aggregate :func:`eigenvector_alignment` over samples, in sample order."""
    results = [eigenvector_alignment(q, epsilon, t_pow) for q in samples]
    valid = [r for r in results if not r.degenerate]
    cos = np.array([r.cosine for r in valid])
    rhos = np.array([r.spearman for r in valid if r.spearman is not None])
    return AlignmentResult(
        cosine=float(cos.mean()) if cos.size else float("nan"),
        spearman=float(rhos.mean()) if rhos.size else None,
        n_samples=len(valid),
        cosine_std=float(cos.std()) if cos.size else 0.0,
        spearman_std=float(rhos.std()) if rhos.size else None,
        n_degenerate=len(results) - len(valid),
        n_spearman_undefined=sum(r.n_spearman_undefined for r in valid),
    )


def random_nonnegative_queries(n_samples, n_tokens=16, d_h=12, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random((n_tokens, d_h)) for _ in range(n_samples)]


def perron_alignment(q, epsilon=DEFAULT_EPS, t_pow=POWER_MAX_ITERS):
    """Cosine between the limit of ``iterate_F`` and the power-iteration Perron vector."""
    it = layers.iterate_F(q, epsilon, max_iters=t_pow)
    v, _, _ = power_iteration(build_affinity(q, q, epsilon).mat, max_iters=t_pow)
    return cosine(it.v, v), it


# ----------------------------------------------------------------------------
# gradient checks for every differentiable layer operation


class _Packer:
    """Flattens named arrays (and float scalars) into one parameter vector."""

    def __init__(self, leaves):
        self.keys = [k for k, _ in leaves]
        self.shapes = [np.shape(v) for _, v in leaves]
        self.sizes = [int(np.prod(s)) for s in self.shapes]

    def pack(self, values):
        return np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for v in values])

    def unpack(self, theta):
        out, i = {}, 0
        for key, shape, size in zip(self.keys, self.shapes, self.sizes):
            chunk = theta[i:i + size]
            out[key] = float(chunk[0]) if shape == () else chunk.reshape(shape)
            i += size
        return out


def _head_fields(variant):
    return ("w_q", "w_k", "w_v") if variant == "pure" else ("w_q", "w_v", "gamma")


_BLOCK_FIELDS = ("w_o", "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift", "w1", "b1", "w2", "b2")


def _block_leaves(x, params, variant, with_norms_mlp=True):
    leaves = [("x", x)]
    for i, hp in enumerate(params.heads):
        leaves += [((i, f), getattr(hp, f)) for f in _head_fields(variant)]
    fields = _BLOCK_FIELDS if with_norms_mlp else ("w_o",)
    leaves += [(f, getattr(params, f)) for f in fields]
    return leaves


def _rebuild_block(vals, params, variant, with_norms_mlp=True):
    heads = tuple(
        dataclasses.replace(hp, **{f: vals[(i, f)] for f in _head_fields(variant)})
        for i, hp in enumerate(params.heads)
    )
    fields = _BLOCK_FIELDS if with_norms_mlp else ("w_o",)
    return dataclasses.replace(params, heads=heads, **{f: vals[f] for f in fields})


def _block_grad_values(grads, keys):
    out = []
    for key in keys:
        if isinstance(key, tuple):
            out.append(grads["heads"][key[0]][key[1]])
        else:
            out.append(grads[key])
    return out


def _objective(out, weights):
    return float(np.sum(out * weights))


def _gradcheck_block(rng, variant, full_block, step=FD_STEP):
    cfg = layers.MultiHeadConfig(n_heads=2, d_h=4, d_model=8)
    params = layers.init_block_params(cfg, variant, rng, d_ff=12, jitter_norms=True)
    x = rng.standard_normal((6, cfg.d_model))
    leaves = _block_leaves(x, params, variant, full_block)
    packer = _Packer(leaves)
    out_shape = (6, cfg.d_model)
    weights = rng.standard_normal(out_shape)

    def f(theta):
        vals = packer.unpack(theta)
        p = _rebuild_block(vals, params, variant, full_block)
        if full_block:
            out, cache = layers.block_forward(vals["x"], p, variant)
            grads = layers.block_backward(weights, cache)
        else:
            out, cache = layers.attention_forward(vals["x"], p, variant)
            grads = layers.attention_backward(weights, cache)
        return _objective(out, weights), packer.pack(_block_grad_values(grads, packer.keys))

    return gradcheck_fd(f, packer.pack([v for _, v in leaves]), step)


def _gradcheck_linfsa_weights(rng, step=FD_STEP):
    q = rng.standard_normal((6, 4))
    weights = rng.standard_normal(6)

    def f(theta):
        a, cache = layers.linfsa_weights_forward(theta.reshape(q.shape))
        dq = layers.linfsa_weights_backward(weights, cache)
        return _objective(a, weights), (np.zeros(q.size) if dq is None else dq.ravel())

    return gradcheck_fd(f, q.ravel(), step)


def _gradcheck_linfsa_head(rng, step=FD_STEP):
    x = rng.standard_normal((5, 6))
    head = layers.LinfsaHeadParams(rng.standard_normal((6, 4)) / 2, rng.standard_normal((6, 4)) / 2)
    leaves = [("x", x), ("w_q", head.w_q), ("w_v", head.w_v), ("gamma", head.gamma)]
    packer = _Packer(leaves)
    weights = rng.standard_normal(4)

    def f(theta):
        v = packer.unpack(theta)
        hp = layers.LinfsaHeadParams(v["w_q"], v["w_v"], v["gamma"], head.epsilon)
        (h, _), cache = layers.linfsa_head_forward_cached(v["x"], hp)
        g = layers.linfsa_head_backward(weights, cache)
        return _objective(h, weights), packer.pack([g[k] for k in packer.keys])

    return gradcheck_fd(f, packer.pack([v for _, v in leaves]), step)


def _gradcheck_pure_head(rng, step=FD_STEP):
    x = rng.standard_normal((5, 6))
    head = layers.PureHeadParams(*(rng.standard_normal((6, 4)) / 2 for _ in range(3)))
    leaves = [("x", x), ("w_q", head.w_q), ("w_k", head.w_k), ("w_v", head.w_v)]
    packer = _Packer(leaves)
    weights = rng.standard_normal((5, 4))

    def f(theta):
        v = packer.unpack(theta)
        hp = layers.PureHeadParams(v["w_q"], v["w_k"], v["w_v"], head.epsilon)
        z, cache = layers.pure_head_forward(v["x"], hp)
        g = layers.pure_head_backward(weights, cache)
        return _objective(z, weights), packer.pack([g[k] for k in packer.keys])

    return gradcheck_fd(f, packer.pack([v for _, v in leaves]), step)


def _gradcheck_affinity(rng, step=FD_STEP):
    q = rng.standard_normal((5, 3))
    k = rng.standard_normal((5, 3))
    packer = _Packer([("q", q), ("k", k)])
    weights = rng.standard_normal((5, 5))

    def f(theta):
        v = packer.unpack(theta)
        a, cache = layers.affinity_forward(v["q"], v["k"])
        g = layers.affinity_backward(weights, cache)
        return _objective(a, weights), packer.pack([g["q"], g["k"]])

    return gradcheck_fd(f, packer.pack([q, k]), step)


def _gradcheck_layer_norm(rng, step=FD_STEP):
    vals = [rng.standard_normal((4, 6)), 1 + 0.1 * rng.standard_normal(6), 0.1 * rng.standard_normal(6)]
    packer = _Packer(list(zip(["x", "scale", "shift"], vals)))
    theta0 = packer.pack(vals)
    weights = rng.standard_normal((4, 6))

    def f(theta):
        v = packer.unpack(theta)
        y, cache = layers.layer_norm_forward(v["x"], v["scale"], v["shift"])
        g = layers.layer_norm_backward(weights, cache)
        return _objective(y, weights), packer.pack([g["x"], g["scale"], g["shift"]])

    return gradcheck_fd(f, theta0, step)


def _gradcheck_mlp(rng, step=FD_STEP):
    vals = [rng.standard_normal((4, 5)), rng.standard_normal((5, 7)) / 2, 0.1 * rng.standard_normal(7),
            rng.standard_normal((7, 5)) / 2, 0.1 * rng.standard_normal(5)]
    keys = ["x", "w1", "b1", "w2", "b2"]
    packer = _Packer(list(zip(keys, vals)))
    weights = rng.standard_normal((4, 5))

    def f(theta):
        v = packer.unpack(theta)
        y, cache = layers.mlp_forward(*(v[k] for k in keys))
        g = layers.mlp_backward(weights, cache)
        return _objective(y, weights), packer.pack([g[k] for k in keys])

    return gradcheck_fd(f, packer.pack(vals), step)


GRADCHECKS = {
    "affinity": _gradcheck_affinity,
    "pure_infsa_head": _gradcheck_pure_head,
    "pure_infsa_layer": lambda rng, step=FD_STEP: _gradcheck_block(rng, "pure", False, step),
    "linfsa_weights": _gradcheck_linfsa_weights,
    "linfsa_head_forward": _gradcheck_linfsa_head,
    "linear_attention_layer": lambda rng, step=FD_STEP: _gradcheck_block(rng, "linear", False, step),
    "layer_norm": _gradcheck_layer_norm,
    "mlp": _gradcheck_mlp,
    "block_pure": lambda rng, step=FD_STEP: _gradcheck_block(rng, "pure", True, step),
    "block_linear": lambda rng, step=FD_STEP: _gradcheck_block(rng, "linear", True, step),
}


def layer_gradchecks(seed, ops=None, step=FD_STEP):
    """Max relative FD error for each differentiable layer operation at ``seed``.

    Each operation draws its instance from ``default_rng([seed, k])`` with ``k``
    its position in :data:`GRADCHECKS`, so subsets reproduce the full run.
    """
    order = list(GRADCHECKS)
    names = order if ops is None else list(ops)
    return {name: GRADCHECKS[name](np.random.default_rng([seed, order.index(name)]), step)
            for name in names}
