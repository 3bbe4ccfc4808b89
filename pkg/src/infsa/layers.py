"""Pure and Linear InfSA layers with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)`` and has a ``*_backward`` that
maps an output cotangent and that cache to a dict of gradients. The public
entry points (``pure_infsa_layer``, ``linfsa_head_forward``,
``multihead_block_forward``, ...) are thin wrappers that drop the cache.

Block layout is pre-LN::

    y   = x + Attn(LN1(x))
    out = y + W2 gelu(W1 LN2(y) + b1) + b2

Pure heads compute ``Z = A_hat V`` with ``A_hat = relu(Q K^T) / (||.||_F + eps)``.
Linear heads tie ``K = Q``, compute one position-shared weight vector ``a``
and broadcast the pooled context ``h = V^T (gamma a)`` to every token.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from infsa.errors import ConfigError, ShapeError
from infsa.graph import DEFAULT_EPS, activation, gelu, gelu_grad
from infsa.paths import DEFAULT_GAMMA
from infsa.tensor import as_matrix

log = logging.getLogger(__name__)

LN_EPS = 1e-6


@dataclass(frozen=True)
class PureHeadParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    epsilon: float = DEFAULT_EPS


@dataclass(frozen=True)
class LinfsaHeadParams:
    w_q: np.ndarray
    w_v: np.ndarray
    gamma: float = DEFAULT_GAMMA
    epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass(frozen=True)
class MultiHeadConfig:
    n_heads: int = 64
    d_h: int = 12
    d_model: int = 768

    def __post_init__(self):
        if self.n_heads * self.d_h != self.d_model:
            raise ConfigError(
                f"n_heads * d_h = {self.n_heads} * {self.d_h} != d_model = {self.d_model}"
            )


@dataclass(frozen=True)
class BlockParams:
    heads: tuple
    w_o: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class PerronIterate:
    v: np.ndarray
    iters: int
    converged: bool
    degenerate: bool


# ----------------------------------------------------------------------------
# parameter construction


def _variant(variant):
    if variant not in ("pure", "linear"):
        raise ValueError(f"variant must be 'pure' or 'linear', got {variant!r}")
    return variant


def init_block_params(cfg, variant, rng=None, d_ff=None, gamma=DEFAULT_GAMMA,
                      epsilon=DEFAULT_EPS, jitter_norms=False):
    """Random block parameters with 1/sqrt(fan_in) weights.

    ``jitter_norms`` perturbs the layer-norm affine parameters and biases away
    from (1, 0) so that gradient checks exercise every term.
    """
    _variant(variant)
    rng = np.random.default_rng(rng)
    d, dh = cfg.d_model, cfg.d_h
    d_ff = 4 * d if d_ff is None else d_ff

    def w(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    heads = []
    for _ in range(cfg.n_heads):
        if variant == "pure":
            heads.append(PureHeadParams(w(d, dh), w(d, dh), w(d, dh), epsilon))
        else:
            heads.append(LinfsaHeadParams(w(d, dh), w(d, dh), gamma, epsilon))

    def affine(size, center):
        if jitter_norms:
            return center + 0.1 * rng.standard_normal(size)
        return np.full(size, float(center))

    return BlockParams(
        heads=tuple(heads),
        w_o=w(d, d),
        ln1_scale=affine(d, 1.0),
        ln1_shift=affine(d, 0.0),
        ln2_scale=affine(d, 1.0),
        ln2_shift=affine(d, 0.0),
        w1=w(d, d_ff),
        b1=affine(d_ff, 0.0),
        w2=w(d_ff, d),
        b2=affine(d, 0.0),
    )


def zero_block_params(cfg, variant, d_ff=None, gamma=DEFAULT_GAMMA, epsilon=DEFAULT_EPS):
    """All-zero weights: the block reduces to its residual path."""
    _variant(variant)
    d, dh = cfg.d_model, cfg.d_h
    d_ff = 4 * d if d_ff is None else d_ff
    z = np.zeros
    if variant == "pure":
        heads = tuple(PureHeadParams(z((d, dh)), z((d, dh)), z((d, dh)), epsilon)
                      for _ in range(cfg.n_heads))
    else:
        heads = tuple(LinfsaHeadParams(z((d, dh)), z((d, dh)), gamma, epsilon)
                      for _ in range(cfg.n_heads))
    return BlockParams(heads, z((d, d)), z(d), z(d), z(d), z(d), z((d, d_ff)), z(d_ff),
                       z((d_ff, d)), z(d))


# ----------------------------------------------------------------------------
# layer norm and MLP


def layer_norm_forward(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv, scale)


def layer_norm_backward(dy, cache):
    xhat, inv, scale = cache
    dscale = (dy * xhat).sum(axis=0)
    dshift = dy.sum(axis=0)
    dxhat = dy * scale
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return {"x": dx, "scale": dscale, "shift": dshift}


def mlp_forward(x, w1, b1, w2, b2):
    pre = x @ w1 + b1
    hid = gelu(pre)
    return hid @ w2 + b2, (x, pre, hid, w1, w2)


def mlp_backward(dy, cache):
    x, pre, hid, w1, w2 = cache
    dhid = dy @ w2.T
    dpre = dhid * gelu_grad(pre)
    return {
        "x": dpre @ w1.T,
        "w1": x.T @ dpre,
        "b1": dpre.sum(axis=0),
        "w2": hid.T @ dy,
        "b2": dy.sum(axis=0),
    }


# ----------------------------------------------------------------------------
# pure InfSA


def affinity_forward(q, k, epsilon=DEFAULT_EPS, act="relu"):
    phi, dphi = activation(act)
    scores = q @ k.T
    gated = phi(scores)
    norm = float(np.sqrt(np.sum(gated * gated)))
    denom = norm + epsilon
    return gated / denom, (q, k, scores, gated, norm, denom, dphi)


def affinity_backward(da, cache):
    q, k, scores, gated, norm, denom, dphi = cache
    dgated = da / denom
    if norm > 0.0:
        dgated -= (np.sum(da * gated) / (denom * denom * norm)) * gated
    dscores = dgated * dphi(scores)
    return {"q": dscores @ k, "k": dscores.T @ q}


def pure_head_forward(x, head, act="relu"):
    q = x @ head.w_q
    k = x @ head.w_k
    v = x @ head.w_v
    a_hat, acache = affinity_forward(q, k, head.epsilon, act)
    return a_hat @ v, (x, head, v, a_hat, acache)


def pure_head_backward(dz, cache):
    x, head, v, a_hat, acache = cache
    dv = a_hat.T @ dz
    g = affinity_backward(dz @ v.T, acache)
    dq, dk = g["q"], g["k"]
    return {
        "x": dq @ head.w_q.T + dk @ head.w_k.T + dv @ head.w_v.T,
        "w_q": x.T @ dq,
        "w_k": x.T @ dk,
        "w_v": x.T @ dv,
    }


def pure_infsa_head(x, head, act="relu"):
    """Per-head Pure InfSA output ``Z = A_hat V`` (``N x d_h``)."""
    return pure_head_forward(as_matrix(x, "x"), head, act)[0]


def pure_attention_streaming(q, k, v, epsilon=DEFAULT_EPS, block_rows=256):
    """``A_hat V`` in row blocks, never materialising the ``N x N`` operator.

    The Frobenius norm and the unnormalised product are accumulated in the same
    pass, so memory stays ``O(block_rows * N)`` while time is ``O(N^2 d)``.
    Returns ``(Z, ||A_hat||_F)``.
    """
    n = q.shape[0]
    z = np.empty((n, v.shape[1]))
    sumsq = 0.0
    for r0 in range(0, n, block_rows):
        s = q[r0:r0 + block_rows] @ k.T
        np.maximum(s, 0.0, out=s)
        sumsq += float(np.einsum("ij,ij->", s, s))
        z[r0:r0 + block_rows] = s @ v
    norm = np.sqrt(sumsq)
    denom = norm + epsilon
    return z / denom, norm / denom


# ----------------------------------------------------------------------------
# linear InfSA


def linfsa_weights_forward(q, epsilon=DEFAULT_EPS, act="relu"):
    phi, dphi = activation(act)
    n = q.shape[0]
    e = np.sqrt(np.sum(q * q, axis=1))
    esum = float(e.sum()) + epsilon
    alpha = e / esum
    qbar = alpha @ q
    s = q @ qbar
    scores = phi(s)
    total = float(scores.sum())
    if total <= 0.0:
        log.debug("linfsa_weights: all scores vanished; using uniform weights")
        return np.full(n, 1.0 / n), None
    # the uniform fallback already guards total == 0, so the final l1
    # normalisation is exact and non-degenerate weights always sum to one
    a = scores / total
    return a, (q, e, esum, alpha, qbar, s, scores, total, dphi)


def linfsa_weights_backward(da, cache):
    if cache is None:
        # uniform fallback does not depend on q
        return None
    q, e, esum, alpha, qbar, s, scores, total, dphi = cache
    dscores = (da - np.dot(da, scores) / total) / total
    ds = dscores * dphi(s)
    dq = np.outer(ds, qbar)
    dqbar = q.T @ ds
    dq += np.outer(alpha, dqbar)
    dalpha = q @ dqbar
    de = dalpha / esum - np.dot(dalpha, e) / (esum * esum)
    nz = e > 0
    dq[nz] += (de[nz] / e[nz])[:, None] * q[nz]
    return dq


def linfsa_weights(q, epsilon=DEFAULT_EPS, act="relu"):
    """Position-shared token weights ``a`` computed from tied queries/keys.

    energies ``e_i = ||Q_i||``, ``alpha = e / (sum e + eps)``, central query
    ``qbar = alpha @ Q``, scores ``S = relu(Q qbar)``, ``a = S / sum S``. When every
    score vanishes the weights fall back to uniform ``1/N``.
    """
    q = as_matrix(q, "q")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return linfsa_weights_forward(q, epsilon, act)[0]


def linfsa_head_forward_cached(x, head, act="relu"):
    q = x @ head.w_q
    v = x @ head.w_v
    a, wcache = linfsa_weights_forward(q, head.epsilon, act)
    h = v.T @ (head.gamma * a)
    return (h, a), (x, head, v, a, wcache)


def linfsa_head_backward(dh, cache):
    x, head, v, a, wcache = cache
    dv = np.outer(head.gamma * a, dh)
    va = v @ dh
    dgamma = float(np.dot(a, va))
    dq = linfsa_weights_backward(head.gamma * va, wcache)
    dx = dv @ head.w_v.T
    dw_q = np.zeros_like(head.w_q)
    if dq is not None:
        dx = dx + dq @ head.w_q.T
        dw_q = x.T @ dq
    return {"x": dx, "w_q": dw_q, "w_v": x.T @ dv, "gamma": dgamma}


def linfsa_head_forward(x, head, act="relu"):
    """Pooled context ``h = V^T (gamma a)`` and the weights ``a`` for one head.

    The head's token output is ``h`` broadcast to every position (rank one);
    see :func:`broadcast`.
    """
    x = as_matrix(x, "x")
    if x.shape[1] != head.w_q.shape[0]:
        raise ShapeError(f"x has width {x.shape[1]}, projection expects {head.w_q.shape[0]}")
    return linfsa_head_forward_cached(x, head, act)[0]


def broadcast(h, n_tokens):
    return np.broadcast_to(h, (n_tokens, h.shape[0])).copy()


def linfsa_attention_batched(q, v, gamma=DEFAULT_GAMMA, epsilon=DEFAULT_EPS):
    """Linear InfSA for a stack of heads: ``q, v`` are ``(H, N, d_h)``, result ``(H, d_h)``.

    Same arithmetic as :func:`linfsa_weights` per head, vectorised over heads;
    every step is ``O(H N d_h)``. Returns ``(h, a)``.
    """
    n = q.shape[1]
    e = np.sqrt(np.einsum("hnd,hnd->hn", q, q))
    alpha = e / (e.sum(axis=1, keepdims=True) + epsilon)
    qbar = np.einsum("hn,hnd->hd", alpha, q)
    scores = np.maximum(np.einsum("hnd,hd->hn", q, qbar), 0.0)
    total = scores.sum(axis=1, keepdims=True)
    a = np.where(total > 0.0, scores / np.where(total > 0.0, total, 1.0), 1.0 / n)
    return np.einsum("hnd,hn->hd", v, gamma * a), a


# ----------------------------------------------------------------------------
# multi-head attention and the pre-LN block


def _check_heads(params, variant, d_model):
    kind = PureHeadParams if variant == "pure" else LinfsaHeadParams
    for hp in params.heads:
        if not isinstance(hp, kind):
            raise ConfigError(f"{variant} block expects {kind.__name__} heads, got {type(hp).__name__}")
        if hp.w_q.shape[0] != d_model:
            raise ShapeError(f"head projection expects width {hp.w_q.shape[0]}, x has {d_model}")


def attention_forward(x, params, variant, act="relu"):
    """Concatenate per-head outputs and apply the output projection."""
    n = x.shape[0]
    outs, caches = [], []
    for hp in params.heads:
        if variant == "pure":
            z, c = pure_head_forward(x, hp, act)
        else:
            (h, _), c = linfsa_head_forward_cached(x, hp, act)
            z = broadcast(h, n)
        outs.append(z)
        caches.append(c)
    concat = np.concatenate(outs, axis=1)
    return concat @ params.w_o, (variant, concat, caches, params)


def attention_backward(dout, cache):
    variant, concat, caches, params = cache
    dconcat = dout @ params.w_o.T
    grads = {"w_o": concat.T @ dout, "x": 0.0, "heads": []}
    col = 0
    for c, hp in zip(caches, params.heads):
        dh_cols = dconcat[:, col:col + hp.w_v.shape[1]]
        col += hp.w_v.shape[1]
        if variant == "pure":
            g = pure_head_backward(dh_cols, c)
        else:
            g = linfsa_head_backward(dh_cols.sum(axis=0), c)
        grads["x"] = grads["x"] + g.pop("x")
        grads["heads"].append(g)
    return grads


def pure_infsa_layer(x, params, act="relu"):
    """Multi-head Pure InfSA: per-head ``A_hat V``, concatenated and projected."""
    x = as_matrix(x, "x")
    _check_heads(params, "pure", x.shape[1])
    return attention_forward(x, params, "pure", act)[0]


def block_forward(x, params, variant, act="relu"):
    h1, ln1 = layer_norm_forward(x, params.ln1_scale, params.ln1_shift)
    att, acache = attention_forward(h1, params, variant, act)
    y = x + att
    h2, ln2 = layer_norm_forward(y, params.ln2_scale, params.ln2_shift)
    m, mcache = mlp_forward(h2, params.w1, params.b1, params.w2, params.b2)
    return y + m, (ln1, acache, ln2, mcache)


def block_backward(dout, cache):
    ln1, acache, ln2, mcache = cache
    gm = mlp_backward(dout, mcache)
    gln2 = layer_norm_backward(gm["x"], ln2)
    dy = dout + gln2["x"]
    ga = attention_backward(dy, acache)
    gln1 = layer_norm_backward(ga["x"], ln1)
    return {
        "x": dy + gln1["x"],
        "heads": ga["heads"],
        "w_o": ga["w_o"],
        "ln1_scale": gln1["scale"],
        "ln1_shift": gln1["shift"],
        "ln2_scale": gln2["scale"],
        "ln2_shift": gln2["shift"],
        "w1": gm["w1"],
        "b1": gm["b1"],
        "w2": gm["w2"],
        "b2": gm["b2"],
    }


def multihead_block_forward(x, cfg, params, variant, act="relu"):
    """Pre-LN transformer block with Pure or Linear InfSA attention."""
    _variant(variant)
    x = as_matrix(x, "x")
    if x.shape[1] != cfg.d_model:
        raise ShapeError(f"x has width {x.shape[1]}, config d_model is {cfg.d_model}")
    if len(params.heads) != cfg.n_heads:
        raise ConfigError(f"config has {cfg.n_heads} heads, params carry {len(params.heads)}")
    for hp in params.heads:
        if hp.w_q.shape[1] != cfg.d_h:
            raise ConfigError(f"head width {hp.w_q.shape[1]} != d_h = {cfg.d_h}")
    _check_heads(params, variant, cfg.d_model)
    return block_forward(x, params, variant, act)[0]


# ----------------------------------------------------------------------------
# the nonlinear Perron map behind Linear InfSA


def _perron_step(x, q):
    s = x.sum()
    if s <= 0.0:
        raise ValueError("x must be nonnegative and nonzero")
    qbar = (x / s) @ q
    scores = np.maximum(q @ qbar, 0.0)
    total = float(scores.sum())
    if total <= 0.0:
        return np.full(q.shape[0], 1.0 / q.shape[0]), True
    return scores / total, False


def perron_map_F(x, q, epsilon=DEFAULT_EPS):
    """``F(x) = relu(Q qbar(x)) / ||relu(Q qbar(x))||_1`` with ``qbar(x) = Q^T x / ||x||_1``.

    The central query is the current weight vector applied to the tied
    queries/keys, so for nonnegative ``Q`` iterating ``F`` is exactly power
    iteration on ``Q Q^T``. One application to the energy weights ``alpha``
    reproduces :func:`linfsa_weights`. Scale-free in ``x``. ``epsilon`` only
    enters through ``alpha``; the l1 normalisation here is exact.
    """
    q = as_matrix(q, "q")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (q.shape[0],):
        raise ShapeError(f"x must have length {q.shape[0]}")
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    return _perron_step(x, q)[0]


def energy_weights(q, epsilon=DEFAULT_EPS):
    e = np.sqrt(np.sum(q * q, axis=1))
    return e / (e.sum() + epsilon)


def iterate_F(q, epsilon=DEFAULT_EPS, max_iters=200, tol=1e-10, x0: Optional[np.ndarray] = None):
    """Iterate :func:`perron_map_F` to its fixed direction.

    Starts from the energy weights (so the first iterate is the Linear InfSA
    weight vector) unless ``x0`` is given. ``iters`` counts applications of
    ``F`` before the iterate stopped moving by ``tol`` in l1. A run that hits
    ``max_iters`` returns the last iterate with ``converged=False``.
    """
    q = as_matrix(q, "q")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x = energy_weights(q, epsilon) if x0 is None else np.asarray(x0, dtype=np.float64)
    if x.sum() <= 0.0:
        n = q.shape[0]
        return PerronIterate(np.full(n, 1.0 / n), 0, True, True)
    for k in range(max_iters):
        nxt, degenerate = _perron_step(x, q)
        if degenerate:
            return PerronIterate(nxt, k, True, True)
        if np.sum(np.abs(nxt - x)) < tol:
            return PerronIterate(nxt, k, True, False)
        x = nxt
    return PerronIterate(x, max_iters, False, False)
