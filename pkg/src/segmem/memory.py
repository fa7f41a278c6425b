"""The two-tier memory: summary nodes over local graphs, built batch or streaming.

Each segment is compressed to one summary vector (mean + elementwise max +
cross-attention over previously built summaries, through a small MLP). The
summary tier is itself a thresholded similarity graph. Appending a segment
touches only the new segment's local graph and the new summary's edges; all
existing structure is reused untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import EngineConfig, derive_seed
from .embedding import EmbedderSpec, embed_tokens
from .errors import (
    DegenerateVectorError,
    DimensionMismatchError,
    EngineError,
    InvalidConfigError,
    SequencingError,
)
from .local_graph import LocalGraph, ThresholdPolicy, build_local_graph
from .metrics import MetricCounters, cache_hit_rate

__all__ = [
    "AggregatorParams",
    "SummaryNode",
    "GlobalThresholdConfig",
    "GlobalMemory",
    "aggregate_summary",
    "global_threshold",
    "nearest_rank",
    "build_memory",
    "append_segment",
    "build_document",
    "memories_equivalent",
    "cache_hit_rate",
    "MetricCounters",
]


@dataclass
class AggregatorParams:
    """Weights for the summary aggregator.

    The MLP is linear -> ReLU -> linear (d -> hidden -> d); cross-attention is
    single-head scaled dot-product with scale 1/sqrt(d). identity_mode forces
    MLP(x) = x and exists so tests can reason about exact values.
    """

    mlp_hidden: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    attention_scale: float
    identity_mode: bool = False
    seed: int = 0

    @classmethod
    def create(
        cls,
        dimension: int,
        hidden: int | None = None,
        seed: int = 0,
        identity_mode: bool = False,
    ) -> "AggregatorParams":
        """Deterministic Gaussian init scaled by 1/sqrt(fan-in), biases zero."""
        if dimension < 1:
            raise InvalidConfigError(f"dimension must be >= 1, got {dimension}")
        hidden = dimension if hidden is None else hidden
        if hidden < 1:
            raise InvalidConfigError(f"mlp_hidden must be >= 1, got {hidden}")
        rng = np.random.Generator(np.random.PCG64(seed & ((1 << 64) - 1)))
        w1 = rng.standard_normal((hidden, dimension)) / math.sqrt(dimension)
        w2 = rng.standard_normal((dimension, hidden)) / math.sqrt(hidden)
        return cls(
            mlp_hidden=hidden,
            w1=w1,
            b1=np.zeros(hidden),
            w2=w2,
            b2=np.zeros(dimension),
            attention_scale=1.0 / math.sqrt(dimension),
            identity_mode=identity_mode,
            seed=seed,
        )

    @classmethod
    def from_config(cls, config: EngineConfig) -> "AggregatorParams":
        return cls.create(
            dimension=config.embedder.dimension,
            hidden=config.aggregator_hidden,
            seed=derive_seed(config.seed, "aggregator"),
            identity_mode=config.aggregator_identity,
        )


@dataclass
class SummaryNode:
    """One segment compressed to a single d-vector."""

    segment_index: int
    vector: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, SummaryNode):
            return NotImplemented
        return self.segment_index == other.segment_index and np.array_equal(
            self.vector, other.vector
        )


@dataclass(frozen=True)
class GlobalThresholdConfig:
    """How the summary-graph threshold is chosen and whether appends refresh it."""

    percentile: float = 85.0
    margin: float = 0.01
    fallback: float = 0.1
    fixed: float | None = None
    recompute_on_append: bool = False

    @classmethod
    def from_config(cls, config: EngineConfig) -> "GlobalThresholdConfig":
        return cls(
            percentile=config.global_percentile,
            margin=config.global_margin,
            fallback=config.global_fallback,
            fixed=config.global_fixed,
            recompute_on_append=config.global_recompute,
        )


@dataclass
class GlobalMemory:
    """Summary nodes, their thresholded edges, and the frozen build context.

    ``delta_g`` is fixed at build time; appends compare new summaries against
    it so that existing edges can never be retroactively invalidated (unless
    recompute-on-append is explicitly enabled in the config snapshot).
    """

    summaries: list[SummaryNode] = field(default_factory=list)
    global_edges: list[tuple[int, int, float]] = field(default_factory=list)
    delta_g: float = 0.1
    config_snapshot: EngineConfig = field(default_factory=EngineConfig)
    metrics: MetricCounters = field(default_factory=MetricCounters)

    @property
    def segment_count(self) -> int:
        return len(self.summaries)

    def summary_matrix(self) -> np.ndarray:
        d = self.config_snapshot.embedder.dimension
        if not self.summaries:
            return np.empty((0, d), dtype=np.float64)
        return np.stack([s.vector for s in self.summaries])


def _attach_segment_context(exc: EngineError, index: int) -> None:
    # Mutates args in place so the exception type and attributes survive.
    head = exc.args[0] if exc.args else exc
    exc.args = (f"segment {index}: {head}",) + tuple(exc.args[1:])


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise DegenerateVectorError("summary vector has zero norm")
    return vector / norm


def _pair_similarity(unit_a: np.ndarray, unit_b: np.ndarray) -> float:
    # One shared kernel for every summary-pair cosine: batch construction and
    # incremental append must produce bit-identical edge weights.
    return min(1.0, max(-1.0, float(np.dot(unit_a, unit_b))))


def _cross_attention(
    nodes: np.ndarray, u_matrix: np.ndarray, scale: float
) -> np.ndarray:
    if u_matrix.shape[0] == 0:
        return np.zeros(nodes.shape[1])
    if u_matrix.shape[1] != nodes.shape[1]:
        raise DimensionMismatchError(
            f"nodes have dimension {nodes.shape[1]} but summaries have "
            f"{u_matrix.shape[1]}"
        )
    scores = (nodes @ u_matrix.T) * scale
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    attended = weights @ u_matrix
    return attended.mean(axis=0)


def _mlp(x: np.ndarray, params: AggregatorParams) -> np.ndarray:
    if params.identity_mode:
        return x
    hidden = np.maximum(params.w1 @ x + params.b1, 0.0)
    return params.w2 @ hidden + params.b2


def aggregate_summary(
    nodes: np.ndarray,
    u_prev: Sequence[SummaryNode],
    params: AggregatorParams,
    segment_index: int | None = None,
) -> SummaryNode:
    """Compress one segment's node vectors into a summary node.

    mean + elementwise max + cross-attention over u_prev, through the MLP.
    Attention uses the segment nodes as queries and the existing summaries as
    keys and values; the attended rows are averaged over the query axis to a
    single d-vector. With no previous summaries the attention term is zero.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.shape[0] == 0:
        raise InvalidConfigError("cannot summarize an empty segment")
    if u_prev:
        u_matrix = np.stack([s.vector for s in u_prev])
    else:
        u_matrix = np.empty((0, nodes.shape[1]), dtype=np.float64)
    pooled = (
        nodes.mean(axis=0)
        + nodes.max(axis=0)
        + _cross_attention(nodes, u_matrix, params.attention_scale)
    )
    vector = _mlp(pooled, params)
    index = len(u_prev) if segment_index is None else segment_index
    return SummaryNode(segment_index=index, vector=vector)


def nearest_rank(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise InvalidConfigError("percentile of an empty sample")
    rank = max(1, math.ceil(percentile / 100.0 * values.size))
    return float(values[min(rank, values.size) - 1])


def global_threshold(
    summaries: Sequence[SummaryNode],
    percentile: float = 85.0,
    margin: float = 0.01,
    fallback: float = 0.1,
) -> float:
    """Summary-graph threshold: percentile of pairwise similarities plus margin.

    With fewer than two summaries there is no similarity sample, so the
    configured fallback is returned as-is.
    """
    if not 0.0 <= percentile <= 100.0:
        raise InvalidConfigError(f"percentile must be in [0, 100], got {percentile}")
    if len(summaries) < 2:
        return fallback
    units = [_unit(s.vector) for s in summaries]
    sims = [
        _pair_similarity(units[p], units[q])
        for p in range(len(units))
        for q in range(p + 1, len(units))
    ]
    return nearest_rank(np.asarray(sims), percentile) + margin


def _resolve_delta_g(
    summaries: Sequence[SummaryNode],
    pair_sims: Sequence[float],
    gt: GlobalThresholdConfig,
) -> float:
    if gt.fixed is not None:
        return float(gt.fixed)
    if len(summaries) < 2:
        return gt.fallback
    return nearest_rank(np.asarray(pair_sims), gt.percentile) + gt.margin


def build_memory(
    segments: Sequence,
    embedder: EmbedderSpec,
    policy: ThresholdPolicy,
    params: AggregatorParams,
    gt: GlobalThresholdConfig,
    config: EngineConfig | None = None,
) -> tuple[GlobalMemory, list[LocalGraph]]:
    """One-shot construction over a document's segments, in index order.

    Each summary sees exactly the previously built summaries, so the loop is
    inherently sequential; per-segment graph construction is independent.
    The summary-graph threshold is computed once over all summaries (or
    pinned via the config) and frozen into the memory for later appends.
    """
    if config is None:
        config = EngineConfig(embedder=embedder, threshold=policy)
    counters = MetricCounters()
    summaries: list[SummaryNode] = []
    graphs: list[LocalGraph] = []
    for segment in segments:
        try:
            nodes = embed_tokens(segment.tokens, embedder)
            graphs.append(build_local_graph(nodes, segment.index, policy, counters))
            summaries.append(
                aggregate_summary(nodes, summaries, params, segment_index=segment.index)
            )
        except EngineError as exc:
            _attach_segment_context(exc, segment.index)
            raise

    m = len(summaries)
    pairs: list[tuple[int, int]] = []
    pair_sims: list[float] = []
    if m >= 2:
        units = [_unit(s.vector) for s in summaries]
        for p in range(m):
            for q in range(p + 1, m):
                pairs.append((p, q))
                pair_sims.append(_pair_similarity(units[p], units[q]))
        counters.similarity_evals += m * (m - 1) // 2

    delta_g = _resolve_delta_g(summaries, pair_sims, gt)
    edges = [
        (p, q, w) for (p, q), w in zip(pairs, pair_sims) if w >= delta_g
    ]
    edges.sort()
    counters.edges_built += len(edges)
    memory = GlobalMemory(
        summaries=summaries,
        global_edges=edges,
        delta_g=delta_g,
        config_snapshot=config,
        metrics=counters,
    )
    return memory, graphs


def append_segment(
    memory: GlobalMemory,
    graphs: list[LocalGraph],
    segment,
    embedder: EmbedderSpec,
    policy: ThresholdPolicy,
    params: AggregatorParams,
) -> tuple[GlobalMemory, list[LocalGraph]]:
    """Integrate one new segment without recomputing any existing structure.

    Builds the new local graph and summary, then compares the new summary
    against each existing one under the frozen threshold. Existing edges are
    counted as reused; similarity work grows by pairs-within-segment plus one
    evaluation per existing summary, never re-touching old pairs.
    """
    expected = memory.segment_count
    if segment.index != expected:
        raise SequencingError(
            f"segment index {segment.index} arrived, expected {expected}"
        )
    nodes = embed_tokens(segment.tokens, embedder)
    graph = build_local_graph(nodes, segment.index, policy, memory.metrics)
    summary = aggregate_summary(
        nodes, memory.summaries, params, segment_index=segment.index
    )

    new_unit = _unit(summary.vector)
    existing_units = [_unit(s.vector) for s in memory.summaries]
    sims = [_pair_similarity(u, new_unit) for u in existing_units]
    memory.metrics.similarity_evals += len(sims)

    delta = memory.delta_g
    if memory.config_snapshot.global_recompute and len(memory.summaries) >= 1:
        # Optional refresh: the percentile is recomputed over all pairs
        # including the new summary. This costs a full pairwise pass and can
        # shift the operating point of future appends; existing edges are
        # still left untouched.
        all_sims = list(sims)
        for p in range(len(existing_units)):
            for q in range(p + 1, len(existing_units)):
                all_sims.append(_pair_similarity(existing_units[p], existing_units[q]))
        memory.metrics.similarity_evals += (
            len(existing_units) * (len(existing_units) - 1) // 2
        )
        if len(all_sims) >= 1:
            gt = GlobalThresholdConfig.from_config(memory.config_snapshot)
            delta = nearest_rank(np.asarray(all_sims), gt.percentile) + gt.margin
            memory.delta_g = delta

    memory.metrics.edges_reused += len(memory.global_edges)
    new_edges = [
        (i, segment.index, w) for i, w in enumerate(sims) if w >= delta
    ]
    memory.metrics.edges_built += len(new_edges)
    memory.summaries.append(summary)
    memory.global_edges.extend(new_edges)
    memory.global_edges.sort()
    memory.metrics.appends += 1
    graphs.append(graph)
    return memory, graphs


def build_document(
    tokens: Sequence[str], config: EngineConfig
) -> tuple[GlobalMemory, list[LocalGraph]]:
    """Segment a raw token sequence and build its memory per the config."""
    from .segmenter import segment as split

    segments = split(tokens, config.k)
    return build_memory(
        segments,
        config.embedder,
        config.threshold,
        AggregatorParams.from_config(config),
        GlobalThresholdConfig.from_config(config),
        config=config,
    )


def memories_equivalent(
    a: GlobalMemory,
    b: GlobalMemory,
    include_metrics: bool = False,
) -> bool:
    """Structural equality: summaries bit-exact, edges, threshold, config."""
    if a.segment_count != b.segment_count:
        return False
    for sa, sb in zip(a.summaries, b.summaries):
        if sa != sb:
            return False
    if a.global_edges != b.global_edges:
        return False
    if a.delta_g != b.delta_g:
        return False
    if a.config_snapshot != b.config_snapshot:
        return False
    if include_metrics and a.metrics != b.metrics:
        return False
    return True
