"""LID-calibrated graph index for approximate nearest neighbor search.

Construction estimates each node's local intrinsic dimensionality, maps it
to a per-node pruning strength, and refines a bounded-degree navigable
graph. Queries run best-first beam search, optionally sizing their budget
from an in-situ LID probe. Indexes serialize to a block-aligned file with
a disk-resident read path.
"""

from .data import (
    GroundTruth,
    VectorDataset,
    compute_ground_truth,
    generate_synthetic,
    generate_with_queries,
    read_ivecs,
    read_vecs,
    write_ivecs,
    write_vecs,
)
from .disk import DiskIndexReader, load_index, open_disk_index, save_index
from .errors import (
    DegenerateInputError,
    IndexFormatError,
    LidannError,
    ParameterError,
    ParseError,
    RecordSizeError,
)
from .geometry import (
    check_inclusion,
    emst_edges,
    exact_knn,
    l2_distance,
    rng_edges,
    write_edge_set,
)
from .graph import (
    BuildParams,
    Graph,
    adaptive_prune,
    bfs_reachable,
    build,
    greedy_search_build,
    init_random_graph,
)
from .lid import (
    LidProfile,
    MappingConfig,
    calibrate,
    compute_alphas,
    estimate_lid_mle,
    load_profile,
    map_alpha,
    profile_to_csv,
    save_profile,
    uniform_alphas,
    z_score,
)
from .search import (
    MemorySource,
    SearchParams,
    SearchResult,
    SearchStats,
    adaptive_beam_search,
    beam_search,
    estimate_query_lid,
    recall_at_k,
    routing_difficulty_experiment,
)

__version__ = "0.1.0"
