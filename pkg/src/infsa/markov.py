"""Absorbing-Markov-chain reading of the discounted path kernel.

Tokens are transient states with transitions ``M = gamma * A_hat``; each row
leaks ``R_i = 1 - sum_j M_ij`` into a single absorbing state. The fundamental
matrix ``N = (I - M)^{-1}`` counts expected visits, and ``N - I`` is exactly
the path kernel of :func:`infsa.paths.closed_form_kernel`.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from infsa._backend import kernels
from infsa.errors import DivergentSeriesError, InvalidChainError, SingularMatrixError
from infsa.graph import AffinityMatrix, normalize_affinity, spectral_radius_estimate
from infsa.tensor import as_square, solve_linear

MAX_WALK_STEPS = 10**6
STOCHASTIC_TOL = 1e-12

# Five-token graph with the topology 1->0, 2->0, 0->3, 3->4. One-hop incoming
# weight favours token 0; the chain 0->3->4 moves multi-hop mass to token 4.
# Chain weight 1.75 was picked from a grid over [1.0, 2.0]: the split appears
# for every weight >= 1.25 at gamma = 0.7, and 1.75 sits well inside that range.
FIG3_CHAIN_WEIGHT = 1.75
FIG3_GAMMA = 0.7


def fig3_raw_weights(chain_weight=FIG3_CHAIN_WEIGHT):
    w = np.zeros((5, 5))
    w[1, 0] = w[2, 0] = 1.0
    w[0, 3] = w[3, 4] = chain_weight
    return w


def fig3_fixture(chain_weight=FIG3_CHAIN_WEIGHT):
    return normalize_affinity(fig3_raw_weights(chain_weight))


@dataclass(frozen=True)
class AbsorbingChain:
    m: np.ndarray
    r: np.ndarray
    gamma: float

    @property
    def n(self):
        return self.m.shape[0]

    def canonical(self):
        """Row-stochastic ``(N+1)x(N+1)`` matrix ``[[M, R], [0, 1]]``."""
        n = self.n
        p = np.zeros((n + 1, n + 1))
        p[:n, :n] = self.m
        p[:n, n] = self.r
        p[n, n] = 1.0
        return p


@dataclass(frozen=True)
class FundamentalMatrix:
    n: np.ndarray


@dataclass(frozen=True)
class WalkEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    num_walks: int


def build_absorbing_chain(a_hat, gamma):
    a = a_hat.mat if isinstance(a_hat, AffinityMatrix) else as_square(a_hat, "a_hat")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if np.any(a < 0):
        raise ValueError("transition weights must be nonnegative")
    m = gamma * a
    sigma = a.sum(axis=1)
    r = 1.0 - m.sum(axis=1)
    bad = np.flatnonzero(r < -STOCHASTIC_TOL)
    if bad.size:
        i = int(bad[0])
        raise InvalidChainError(i, float(sigma[i]), gamma)
    r = np.maximum(r, 0.0)
    chain = AbsorbingChain(m, r, float(gamma))
    rows = chain.canonical().sum(axis=1)
    assert np.all(np.abs(rows - 1.0) <= STOCHASTIC_TOL), rows
    return chain


def fundamental_matrix(chain):
    n = chain.n
    if spectral_radius_estimate(chain.m) >= 1.0:
        raise DivergentSeriesError("rho(M) >= 1: the walk is not absorbed almost surely")
    eye = np.eye(n)
    try:
        return FundamentalMatrix(solve_linear(eye - chain.m, eye))
    except SingularMatrixError as exc:
        raise DivergentSeriesError(f"I - M is singular: {exc}") from exc


def walk_centralities(fm):
    """Outgoing (row-sum) and incoming (column-sum) expected-visit centralities."""
    n = fm.n if isinstance(fm, FundamentalMatrix) else as_square(fm, "fundamental matrix")
    return n.sum(axis=1), n.sum(axis=0)


def _threads(threads):
    if threads is None:
        threads = int(os.environ.get("INFSA_THREADS", "1") or 1)
    return max(1, int(threads))


def walk_statistics(chain, start, num_walks, seed, threads=None):
    """Monte-Carlo estimate of row ``start`` of the fundamental matrix.

    Walk ``w`` draws its uniforms from a counter-based stream keyed by
    ``(seed, w, step)``, so the estimate depends only on ``(seed, num_walks)``:
    splitting walks across threads cannot change a single bit. The start
    state is counted once at step 0.
    """
    if not 0 <= start < chain.n:
        raise IndexError(f"start {start} out of range for {chain.n} states")
    if num_walks < 1:
        raise ValueError("num_walks must be >= 1")
    # inverse-CDF over [M_i0, ..., M_i(N-1), R_i]; falling past the row means absorption
    cdf = np.cumsum(chain.m, axis=1)
    nthreads = min(_threads(threads), num_walks)
    bounds = np.linspace(0, num_walks, nthreads + 1).astype(np.int64)
    parts = list(zip(bounds[:-1], bounds[1:]))

    def run(part):
        return kernels.walk_counts(cdf, seed, int(start), int(part[0]), int(part[1]), MAX_WALK_STEPS)

    if nthreads == 1:
        results = [run(parts[0])]
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            results = list(pool.map(run, parts))
    sums = np.zeros(chain.n, dtype=np.int64)
    sumsq = np.zeros(chain.n, dtype=np.int64)
    for s, sq in results:
        sums += s
        sumsq += sq
    mean = sums / num_walks
    if num_walks > 1:
        var = (sumsq - num_walks * mean * mean) / (num_walks - 1)
        stderr = np.sqrt(np.maximum(var, 0.0) / num_walks)
    else:
        stderr = np.full(chain.n, np.inf)
    return WalkEstimate(mean, stderr, int(num_walks))


def simulate_walks(chain, start, num_walks, seed, threads=None):
    """Mean visit count per token over ``num_walks`` absorbing walks from ``start``."""
    return walk_statistics(chain, start, num_walks, seed, threads).mean


def rank_desc(scores, rel_tol=1e-12):
    """Indices by descending score; scores equal up to ``rel_tol`` tie to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    scale = float(np.max(np.abs(scores))) if scores.size else 0.0
    if scale == 0.0:
        return np.arange(scores.size)
    key = np.round(scores / scale / rel_tol)
    return np.lexsort((np.arange(scores.size), -key))


def one_hop_vs_multihop_ranking(a_hat, gamma):
    """Ranking by one-hop incoming attention vs. by incoming visit centrality."""
    a = a_hat.mat if isinstance(a_hat, AffinityMatrix) else as_square(a_hat, "a_hat")
    chain = build_absorbing_chain(a, gamma)
    _, c_in = walk_centralities(fundamental_matrix(chain))
    return rank_desc(a.sum(axis=0)), rank_desc(c_in)
