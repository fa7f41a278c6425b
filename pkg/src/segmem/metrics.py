"""Operation counters used to verify the engine's complexity claims.

Counters are plain integers, cheap to bump from hot loops, and mergeable so
parallel per-segment work can tally locally and fold results back in.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class MetricCounters:
    """Monotonically non-decreasing tallies of the work the engine performed.

    ``similarity_evals`` counts cosine evaluations between token or summary
    vectors. ``edges_built`` / ``edges_reused`` track summary-graph edges only:
    they feed the cache-hit metric for incremental appends, where reuse means
    an existing summary edge survived an append untouched. ``node_updates``
    counts per-node graph-convolution updates on the query path.
    """

    similarity_evals: int = 0
    edges_built: int = 0
    edges_reused: int = 0
    appends: int = 0
    node_updates: int = 0

    def merge(self, other: "MetricCounters") -> None:
        self.similarity_evals += other.similarity_evals
        self.edges_built += other.edges_built
        self.edges_reused += other.edges_reused
        self.appends += other.appends
        self.node_updates += other.node_updates

    def copy(self) -> "MetricCounters":
        return MetricCounters(
            similarity_evals=self.similarity_evals,
            edges_built=self.edges_built,
            edges_reused=self.edges_reused,
            appends=self.appends,
            node_updates=self.node_updates,
        )


def cache_hit_rate(metrics: MetricCounters) -> float:
    """Fraction of summary edges reused rather than rebuilt across appends.

    Defined as reused / (reused + built). Before any edge work has happened
    the ratio is 0/0; that is reported as 1.0 (an empty cache misses nothing).
    """
    total = metrics.edges_reused + metrics.edges_built
    if total == 0:
        return 1.0
    return metrics.edges_reused / total
