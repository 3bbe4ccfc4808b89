"""Infinite self-attention: discounted path kernels on attention graphs,
their absorbing-Markov-chain reading, and Pure / Linear InfSA layers."""

from infsa._backend import BACKEND
from infsa.errors import (
    ArityError,
    CapacityError,
    ConfigError,
    DegenerateOperatorError,
    DivergentSeriesError,
    EvaluationError,
    FormatError,
    InfsaError,
    InvalidChainError,
    ShapeError,
    SingularMatrixError,
    UndefinedCorrelationError,
    UsageError,
    WalkCapError,
)
from infsa.graph import (
    AffinityMatrix,
    assert_contractive,
    build_affinity,
    diffuse,
    normalize_affinity,
    spectral_radius_estimate,
)
from infsa.layers import (
    BlockParams,
    LinfsaHeadParams,
    MultiHeadConfig,
    PerronIterate,
    PureHeadParams,
    broadcast,
    init_block_params,
    iterate_F,
    linfsa_head_forward,
    linfsa_weights,
    multihead_block_forward,
    perron_map_F,
    pure_infsa_head,
    pure_infsa_layer,
    zero_block_params,
)
from infsa.markov import (
    AbsorbingChain,
    FundamentalMatrix,
    WalkEstimate,
    build_absorbing_chain,
    fig3_fixture,
    fundamental_matrix,
    one_hop_vs_multihop_ranking,
    simulate_walks,
    walk_centralities,
    walk_statistics,
)
from infsa.paths import (
    CentralityReport,
    accumulation_bound,
    centrality_report,
    closed_form_kernel,
    depth_score,
    layerwise_accumulate,
    path_sum_bruteforce,
    token_centrality,
    truncated_neumann,
)
from infsa.tensor import frobenius_norm, lu_factor, matmul, power_iteration, solve_linear
from infsa.tensorio import load_tensor, store_tensor
from infsa.validation import (
    AlignmentResult,
    eigenvector_alignment,
    gradcheck_fd,
    layer_gradchecks,
    spearman,
)

__version__ = "0.1.0"
