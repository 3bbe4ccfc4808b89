"""Discounted path sums on the attention graph.

``C = sum_{t>=1} (gamma A)^t = (I - gamma A)^{-1} - I``: brute-force walk
enumeration, per-depth scores, the truncated series, its closed form, token
centrality and the layer-wise accumulation used by stacked Pure InfSA layers.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from infsa._backend import kernels
from infsa.errors import ArityError, CapacityError, DivergentSeriesError, ShapeError
from infsa.graph import AffinityMatrix, spectral_radius_estimate
from infsa.tensor import as_matrix, as_square, solve_linear

DEFAULT_GAMMA = 0.7
# closed forms are refused this close to the convergence boundary
CONTRACTION_MARGIN = 1e-9
MAX_BRUTE_N = 8
MAX_BRUTE_T = 5


@dataclass(frozen=True)
class CentralityReport:
    kernel: np.ndarray
    scores: np.ndarray
    per_depth: Optional[list] = None


def _mat(a):
    return a.mat if isinstance(a, AffinityMatrix) else as_square(a, "a")


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return float(gamma)


def path_sum_bruteforce(a, i, j, t):
    """Sum of edge-weight products over every length-``t`` walk from ``i`` to ``j``.

    Enumerates all ``N**(t-1)`` intermediate sequences, so it is an oracle for
    ``(A**t)[i, j]``, not a production path.
    """
    a = _mat(a)
    n = a.shape[0]
    if t < 1:
        raise ValueError("t must be >= 1")
    if n > MAX_BRUTE_N or t > MAX_BRUTE_T:
        raise CapacityError(
            f"brute-force enumeration limited to N <= {MAX_BRUTE_N}, t <= {MAX_BRUTE_T} "
            f"(got N={n}, t={t})"
        )
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"token index out of range for N={n}")
    return kernels.path_sum(np.ascontiguousarray(a), int(i), int(j), int(t))


def depth_score(a, t):
    """Row sums of ``A**t``: each token's total weight over length-``t`` walks."""
    a = _mat(a)
    if t < 1:
        raise ValueError("t must be >= 1")
    c = np.ones(a.shape[0])
    for _ in range(t):
        c = a @ c
    return c


def truncated_neumann(a, gamma, depth):
    a = _mat(a)
    gamma = _check_gamma(gamma)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    ga = gamma * a
    eye = np.eye(a.shape[0])
    p = np.zeros_like(a)
    for _ in range(depth):
        p = ga @ (p + eye)
    return p


def closed_form_kernel(a, gamma):
    """``(I - gamma A)^{-1} - I``, defined only while ``gamma * rho(A) < 1``."""
    a = _mat(a)
    gamma = _check_gamma(gamma)
    rho = spectral_radius_estimate(a)
    if gamma * rho >= 1.0 - CONTRACTION_MARGIN:
        raise DivergentSeriesError(
            f"gamma * rho(A) = {gamma} * {rho:.6g} = {gamma * rho:.6g} >= 1; series diverges"
        )
    n = a.shape[0]
    eye = np.eye(n)
    kernel = solve_linear(eye - gamma * a, eye) - eye
    if np.all(a >= 0) and np.any(kernel < -1e-12):
        # a nonnegative operator inside its radius has a nonnegative resolvent
        raise DivergentSeriesError("negative resolvent entries: spectral radius underestimated")
    return kernel


def token_centrality(kernel):
    kernel = as_square(kernel, "kernel")
    return kernel.sum(axis=1)


def centrality_report(a, gamma=DEFAULT_GAMMA, per_depth=0):
    """Kernel, scores and (optionally) the first ``per_depth`` depth scores."""
    kernel = closed_form_kernel(a, gamma)
    depths = None
    if per_depth:
        depths = [depth_score(a, t) for t in range(1, per_depth + 1)]
    return CentralityReport(kernel, token_centrality(kernel), depths)


def layerwise_accumulate(layer_outputs, gamma):
    """``S_L = sum_l gamma**l Z_l`` over post-attention outputs ``Z_1..Z_L``."""
    gamma = _check_gamma(gamma)
    outs = [as_matrix(z, "layer output") for z in layer_outputs]
    if not outs:
        raise ArityError("layerwise_accumulate needs at least one layer output")
    shape = outs[0].shape
    total = np.zeros(shape)
    weight = 1.0
    for z in outs:
        if z.shape != shape:
            raise ShapeError(f"layer output shape {z.shape} differs from {shape}")
        weight *= gamma
        total = total + weight * z
    return total


def accumulation_bound(gamma, depth):
    """``gamma (1 - gamma**L) / (1 - gamma)``, the geometric weight mass of L layers."""
    if gamma == 1.0:
        return float(depth)
    return gamma * (1.0 - gamma**depth) / (1.0 - gamma)
