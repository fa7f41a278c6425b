"""Segment-graph memory engine for long token streams.

Builds per-segment similarity graphs over token embeddings, compresses each
segment into a summary node, maintains a thresholded summary graph that
supports incremental append, and answers queries by retrieving the top-K
summaries and reasoning only inside their local graphs. A dense full-document
oracle and an instrumented benchmark harness verify the complexity and
approximation-error claims empirically.
"""

from .config import EngineConfig, resolve_config
from .embedding import EmbedderSpec, cosine, embed_tokens
from .errors import (
    CorpusFormatError,
    CorruptStateError,
    DegenerateVectorError,
    DimensionMismatchError,
    EmptyMemoryError,
    EngineError,
    InvalidConfigError,
    InvalidQueryError,
    ResourceLimitError,
    SequencingError,
    SnapshotFormatError,
    TransportError,
)
from .local_graph import (
    LocalGraph,
    ThresholdPolicy,
    adaptive_threshold,
    build_local_graph,
    pairwise_similarities,
)
from .memory import (
    AggregatorParams,
    GlobalMemory,
    GlobalThresholdConfig,
    SummaryNode,
    aggregate_summary,
    append_segment,
    build_document,
    build_memory,
    cache_hit_rate,
    global_threshold,
    memories_equivalent,
)
from .metrics import MetricCounters
from .oracle import (
    DenseAdjacency,
    ErrorReport,
    build_full_adjacency,
    complexity_probe,
    error_bound,
    error_report,
    query_speedup_probe,
    reconstruct_memory_adjacency,
    sliding_window_baseline,
)
from .persist import CorpusRecord, load_corpus, load_snapshot, save_snapshot
from .query import (
    GcnParams,
    QueryResult,
    answer_query,
    encode_query,
    local_gcn,
    top_k,
)
from .segmenter import Segment, segment, sliding_windows

__version__ = "0.1.0"
