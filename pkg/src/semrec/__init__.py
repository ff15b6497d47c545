"""Recommender engine for typed semantic networks.

Pipeline: a typed entity/relationship dataset is normalized per relation,
aggregated into one weighted symmetric adjacency matrix, decomposed into a
truncated spectral model, and served through a clustered inner-product index.
"""

__version__ = "0.1.0"

from .aggregate import (
    AggregationError,
    RelationshipWeights,
    UnifiedMatrix,
    build_unified,
    is_auxiliary,
    load_weights,
    reduce_hyperedges,
    save_weights,
)
from .decompose import (
    ConvergenceError,
    DecompositionError,
    KernelError,
    KernelSpec,
    LatentModel,
    apply_kernel,
    decompose,
    load_model,
    reconstruction_error,
    save_model,
    update,
)
from .graph import (
    EntityType,
    GraphError,
    ParseError,
    RelationType,
    Schema,
    SemanticDataset,
    SparseMatrix,
    load_dataset,
    load_schema,
    save_dataset,
)
from .index import (
    IndexingError,
    Recommendation,
    RecommenderIndex,
    StaleIndexError,
    brute_force_topk,
    build_index,
    load_index,
    measure_recall,
    query,
    save_index,
)
from .iptv import GenerationError, IptvGenParams, generate_iptv, iptv_schema
from .learn import (
    HoldoutSplit,
    LearnError,
    LearnResult,
    SearchSpec,
    evaluate,
    learn_weights,
    split_holdout,
)
from .manifest import StaleInputError, verify_inputs, write_manifest
from .normalize import NormalizationError, NormalizationParams

__all__ = [
    "AggregationError",
    "ConvergenceError",
    "DecompositionError",
    "EntityType",
    "GenerationError",
    "GraphError",
    "HoldoutSplit",
    "IndexingError",
    "IptvGenParams",
    "KernelError",
    "KernelSpec",
    "LatentModel",
    "LearnError",
    "LearnResult",
    "NormalizationError",
    "NormalizationParams",
    "ParseError",
    "Recommendation",
    "RecommenderIndex",
    "RelationType",
    "RelationshipWeights",
    "Schema",
    "SearchSpec",
    "SemanticDataset",
    "SparseMatrix",
    "StaleIndexError",
    "StaleInputError",
    "UnifiedMatrix",
    "apply_kernel",
    "brute_force_topk",
    "build_index",
    "build_unified",
    "decompose",
    "evaluate",
    "generate_iptv",
    "iptv_schema",
    "is_auxiliary",
    "learn_weights",
    "load_dataset",
    "load_index",
    "load_model",
    "load_schema",
    "load_weights",
    "measure_recall",
    "query",
    "reconstruction_error",
    "reduce_hyperedges",
    "save_dataset",
    "save_index",
    "save_model",
    "save_weights",
    "split_holdout",
    "update",
    "verify_inputs",
    "write_manifest",
    "__version__",
]
