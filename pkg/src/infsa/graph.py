"""Content-adaptive token graph: gated, Frobenius-normalised affinities.

``build_affinity`` computes ``phi(Q K^T) / (||phi(Q K^T)||_F + eps)``. No
``1/sqrt(d)`` temperature is applied: any positive pre-scale cancels in the
normalisation, so it would only perturb the eps floor.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from infsa.errors import DegenerateOperatorError, ShapeError
from infsa.tensor import as_matrix, as_square, frobenius_norm, power_iteration

DEFAULT_EPS = 1e-6


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0).astype(np.float64)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def abs_grad(x):
    return np.sign(x)


# name -> (activation, derivative). Only relu and abs keep the operator nonnegative.
ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "gelu": (gelu, gelu_grad),
    "abs": (np.abs, abs_grad),
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass(frozen=True)
class AffinityMatrix:
    mat: np.ndarray
    epsilon: float = DEFAULT_EPS

    @property
    def n(self):
        return self.mat.shape[0]


def normalize_affinity(raw, epsilon=DEFAULT_EPS, act="relu"):
    """Gate a raw score matrix with ``act`` and divide by its Frobenius norm plus eps."""
    raw = as_square(raw, "raw scores")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    gated = activation(act)[0](raw)
    return AffinityMatrix(gated / (frobenius_norm(gated) + epsilon), epsilon)


def build_affinity(q, k, epsilon=DEFAULT_EPS, act="relu"):
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if q.shape != k.shape:
        raise ShapeError(f"q and k must share a shape, got {q.shape} and {k.shape}")
    return normalize_affinity(q @ k.T, epsilon, act)


def diffuse(a_hat, v):
    """One diffusion step ``Y = A V``."""
    mat = a_hat.mat if isinstance(a_hat, AffinityMatrix) else as_square(a_hat, "a_hat")
    v = as_matrix(v, "v")
    if v.shape[0] != mat.shape[0]:
        raise ShapeError(f"v has {v.shape[0]} tokens, operator is {mat.shape[0]}x{mat.shape[0]}")
    return mat @ v


def spectral_radius_estimate(a):
    """rho(A) via power iteration; 0 when the operator annihilates the iterate."""
    a = a.mat if isinstance(a, AffinityMatrix) else as_square(a, "a")
    if not np.any(a):
        return 0.0
    try:
        _, lam, _ = power_iteration(a)
    except DegenerateOperatorError:
        return 0.0
    return lam


def assert_contractive(a_hat, gamma):
    """Return ``(gamma * rho < 1, rho)`` for the discounted operator ``gamma * A``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rho = spectral_radius_estimate(a_hat)
    return gamma * rho < 1.0, rho
