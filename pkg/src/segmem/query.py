"""Query answering: retrieve top-K summaries, reason locally, merge by attention.

The query never touches more than the K retrieved local graphs; everything is
read-only over the memory, so any number of queries may run concurrently
against an immutable snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import EngineConfig, derive_seed
from .embedding import EmbedderSpec, cosine, embed_tokens
from .errors import (
    CorruptStateError,
    DegenerateVectorError,
    DimensionMismatchError,
    EmptyMemoryError,
    InvalidConfigError,
    InvalidQueryError,
)
from .local_graph import LocalGraph
from .memory import GlobalMemory
from .metrics import MetricCounters


@dataclass
class GcnParams:
    """A stack of residual graph-convolution layers.

    Layer update: activation(W @ mean(neighbor states) + own state). Neighbor
    sets exclude the node itself; the residual term carries self-information.
    identity_mode pins W to the identity and the activation to identity so
    hand-computed cases are exact.
    """

    layers: int
    weights: list[np.ndarray]
    activation: str = "relu"
    identity_mode: bool = False

    def __post_init__(self):
        if len(self.weights) != self.layers:
            raise InvalidConfigError(
                f"expected {self.layers} weight matrices, got {len(self.weights)}"
            )
        if self.activation not in ("relu", "identity"):
            raise InvalidConfigError(f"unknown activation: {self.activation!r}")

    @classmethod
    def create(
        cls,
        dimension: int,
        layers: int = 2,
        seed: int = 0,
        activation: str = "relu",
        identity_mode: bool = False,
    ) -> "GcnParams":
        if identity_mode:
            return cls(
                layers=layers,
                weights=[np.eye(dimension) for _ in range(layers)],
                activation="identity",
                identity_mode=True,
            )
        rng = np.random.Generator(np.random.PCG64(seed & ((1 << 64) - 1)))
        weights = [
            rng.standard_normal((dimension, dimension)) / math.sqrt(dimension)
            for _ in range(layers)
        ]
        return cls(layers=layers, weights=weights, activation=activation)

    @classmethod
    def from_config(cls, config: EngineConfig) -> "GcnParams":
        return cls.create(
            dimension=config.embedder.dimension,
            layers=config.gcn_layers,
            seed=derive_seed(config.seed, "gcn"),
            activation=config.gcn_activation,
            identity_mode=config.gcn_identity,
        )


@dataclass
class QueryResult:
    """Merged answer vector plus retrieval provenance.

    ``retrieved`` lists segment indices in descending similarity order and
    ``weights`` holds the matching softmax attention weights (sum to 1).
    """

    vector: np.ndarray
    retrieved: list[int]
    weights: list[float]

    def to_dict(self) -> dict:
        return {
            "vector": [float(x) for x in self.vector],
            "retrieved": list(self.retrieved),
            "weights": [float(w) for w in self.weights],
        }


def encode_query(query_tokens: Sequence[str], embedder: EmbedderSpec) -> np.ndarray:
    """Mean of the query's token embeddings, scaled to unit length."""
    if len(query_tokens) == 0:
        raise InvalidQueryError("query has no tokens")
    vectors = embed_tokens(query_tokens, embedder)
    mean = vectors.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise DegenerateVectorError("query tokens average to the zero vector")
    return mean / norm


def top_k(
    q_enc: np.ndarray,
    memory: GlobalMemory,
    K: int,
    counters: MetricCounters | None = None,
) -> list[tuple[int, float]]:
    """The min(K, M) summaries most similar to the query, best first.

    Ties break toward the lower segment index so results are reproducible.
    """
    if K < 1:
        raise InvalidConfigError(f"K must be >= 1, got {K}")
    if memory.segment_count == 0:
        raise EmptyMemoryError("memory holds no summaries")
    sims = [cosine(q_enc, s.vector) for s in memory.summaries]
    if counters is not None:
        counters.similarity_evals += len(sims)
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    return [(i, sims[i]) for i in order[: min(K, len(sims))]]


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    return x


def local_gcn(
    graph: LocalGraph,
    params: GcnParams,
    counters: MetricCounters | None = None,
) -> np.ndarray:
    """Run the layer stack over one local graph; returns final node states.

    A node with no neighbors uses the zero vector as its neighbor mean, so
    isolated nodes are carried through by the residual alone. Zero layers
    return the input nodes unchanged.
    """
    states = np.array(graph.nodes, dtype=np.float64, copy=True)
    n, d = states.shape
    if params.layers == 0:
        return states
    if params.weights[0].shape != (d, d):
        raise DimensionMismatchError(
            f"GCN weights are {params.weights[0].shape}, nodes have dimension {d}"
        )
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for j, k, _ in graph.edges:
        neighbors[j].append(k)
        neighbors[k].append(j)
    for w in params.weights:
        pooled = np.zeros_like(states)
        for node, nbrs in enumerate(neighbors):
            if nbrs:
                pooled[node] = states[nbrs].mean(axis=0)
        states = _activate(pooled @ w.T + states, params.activation)
        if counters is not None:
            counters.node_updates += n
    return states


def _softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def answer_query(
    memory: GlobalMemory,
    graphs: Sequence[LocalGraph],
    query_tokens: Sequence[str],
    K: int,
    gcn: GcnParams,
    embedder: EmbedderSpec,
    counters: MetricCounters | None = None,
) -> QueryResult:
    """Full query pipeline: encode, retrieve, reason over K graphs, merge.

    Attention weights are the softmax of the retrieved summaries' raw query
    similarities; the result is the weight-averaged mean of each retrieved
    graph's final node states.
    """
    q_enc = encode_query(query_tokens, embedder)
    retrieved = top_k(q_enc, memory, K, counters)
    by_index = {g.segment_index: g for g in graphs}
    segment_means = []
    for index, _ in retrieved:
        graph = by_index.get(index)
        if graph is None:
            raise CorruptStateError(f"no local graph for retrieved segment {index}")
        states = local_gcn(graph, gcn, counters)
        segment_means.append(states.mean(axis=0))
    sims = np.asarray([s for _, s in retrieved], dtype=np.float64)
    weights = _softmax(sims)
    vector = np.zeros(memory.config_snapshot.embedder.dimension)
    for w, mean in zip(weights, segment_means):
        vector = vector + w * mean
    return QueryResult(
        vector=vector,
        retrieved=[i for i, _ in retrieved],
        weights=[float(w) for w in weights],
    )
