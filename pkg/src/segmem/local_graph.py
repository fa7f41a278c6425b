"""Per-segment similarity graphs with adaptive or fixed edge thresholds.

A segment of n token vectors produces all n(n-1)/2 pairwise cosines; pairs at
or above the threshold become undirected weighted edges. The threshold is
either a fixed value or mean + std scaled by (alpha, beta) over the segment's
own similarity distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, InvalidConfigError
from .metrics import MetricCounters

MODE_ADAPTIVE = "adaptive"
MODE_FIXED = "fixed"

# Threshold recorded for segments with no token pairs: nothing can clear it.
SINGLE_NODE_THRESHOLD = math.inf


@dataclass(frozen=True)
class ThresholdPolicy:
    """How a segment's edge threshold is chosen.

    Adaptive mode reads alpha and beta; fixed mode reads delta_fixed. The
    fixed value is intentionally not range-restricted: -1 keeps the complete
    graph and anything above 1 prunes every edge, both useful for oracles.
    """

    mode: str = MODE_ADAPTIVE
    alpha: float = 1.0
    beta: float = 0.5
    delta_fixed: float = 0.2

    def __post_init__(self):
        if self.mode not in (MODE_ADAPTIVE, MODE_FIXED):
            raise InvalidConfigError(f"unknown threshold mode: {self.mode!r}")

    @classmethod
    def adaptive(cls, alpha: float = 1.0, beta: float = 0.5) -> "ThresholdPolicy":
        return cls(mode=MODE_ADAPTIVE, alpha=alpha, beta=beta)

    @classmethod
    def fixed(cls, delta: float) -> "ThresholdPolicy":
        return cls(mode=MODE_FIXED, delta_fixed=delta)


@dataclass
class LocalGraph:
    """One segment's graph: token-vector nodes plus thresholded cosine edges.

    Edges are stored undirected as (j, k, weight) with j < k, sorted, without
    duplicates or self-loops, so serialization is canonical.
    """

    segment_index: int
    nodes: np.ndarray
    edges: list[tuple[int, int, float]] = field(default_factory=list)
    threshold_used: float = SINGLE_NODE_THRESHOLD

    def __eq__(self, other) -> bool:
        if not isinstance(other, LocalGraph):
            return NotImplemented
        return (
            self.segment_index == other.segment_index
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and self.edges == other.edges
            and (
                self.threshold_used == other.threshold_used
                or (math.isnan(self.threshold_used) and math.isnan(other.threshold_used))
            )
        )

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]


def _normalized_rows(nodes: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(nodes, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateVectorError(f"zero-norm node at index {int(bad[0])}")
    return nodes / norms[:, None]


def pairwise_similarities(
    nodes: np.ndarray, counters: MetricCounters | None = None
) -> np.ndarray:
    """All n(n-1)/2 upper-triangle cosines in row-major order (j asc, then k asc).

    Each call counts exactly n(n-1)/2 similarity evaluations.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    n = nodes.shape[0]
    if counters is not None:
        counters.similarity_evals += n * (n - 1) // 2
    if n < 2:
        return np.empty(0, dtype=np.float64)
    unit = _normalized_rows(nodes)
    sims = unit @ unit.T
    j, k = np.triu_indices(n, 1)
    return np.clip(sims[j, k], -1.0, 1.0)


def adaptive_threshold(similarities: np.ndarray, policy: ThresholdPolicy) -> float:
    """Threshold for one segment given its similarity sample.

    Adaptive mode: alpha * mean + beta * population std. An empty sample
    (single-node segment) yields the +inf sentinel instead of dividing by
    zero. Fixed mode ignores the sample entirely.
    """
    if policy.mode == MODE_FIXED:
        return float(policy.delta_fixed)
    similarities = np.asarray(similarities, dtype=np.float64)
    if similarities.size == 0:
        return SINGLE_NODE_THRESHOLD
    mean = float(np.mean(similarities))
    std = float(np.std(similarities))  # population std: defined for one value
    return policy.alpha * mean + policy.beta * std


def build_local_graph(
    segment_nodes: np.ndarray,
    segment_index: int,
    policy: ThresholdPolicy,
    counters: MetricCounters | None = None,
) -> LocalGraph:
    """Build one segment's graph: exactly the pairs with cosine >= threshold."""
    nodes = np.asarray(segment_nodes, dtype=np.float64)
    if nodes.shape[0] == 0:
        raise InvalidConfigError("cannot build a local graph over an empty segment")
    sims = pairwise_similarities(nodes, counters)
    threshold = adaptive_threshold(sims, policy)
    n = nodes.shape[0]
    edges: list[tuple[int, int, float]] = []
    if sims.size:
        j, k = np.triu_indices(n, 1)
        keep = np.flatnonzero(sims >= threshold)
        edges = [(int(j[i]), int(k[i]), float(sims[i])) for i in keep]
    return LocalGraph(
        segment_index=segment_index,
        nodes=nodes,
        edges=edges,
        threshold_used=threshold,
    )
