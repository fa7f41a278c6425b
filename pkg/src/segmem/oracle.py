"""Ground-truth baselines and theory checks.

The dense oracle is the unthresholded all-pairs cosine matrix of a whole
document. Against it the engine verifies its approximation-error bound and
its operation-count scaling, and provides the sliding-window baseline for
comparisons.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.linalg.blas import dsyrk

from .config import EngineConfig, derive_seed
from .embedding import EmbedderSpec, embed_tokens
from .errors import (
    CorruptStateError,
    DegenerateVectorError,
    InvalidConfigError,
    ResourceLimitError,
)
from .local_graph import LocalGraph, ThresholdPolicy, build_local_graph
from .memory import GlobalMemory, build_document
from .metrics import MetricCounters
from .query import GcnParams, answer_query
from .segmenter import sliding_windows

MODE_FULL = "full"
MODE_HIER_SQRT = "hier-sqrt"
MODE_HIER_FIXED = "hier-fixed"
PROBE_MODES = (MODE_FULL, MODE_HIER_SQRT, MODE_HIER_FIXED)

_BLOCK = 2048


@dataclass
class DenseAdjacency:
    """Symmetric n x n cosine matrix with an exactly zero diagonal."""

    n: int
    values: np.ndarray


@dataclass
class ErrorReport:
    """Measured reconstruction error against the dense oracle."""

    frobenius_error: float
    relative_error: float
    bound: float
    satisfied: bool
    gamma_l: float
    gamma_g: float

    def to_dict(self) -> dict:
        return {
            "frobenius_error": self.frobenius_error,
            "relative_error": self.relative_error,
            "bound": self.bound,
            "satisfied": self.satisfied,
            "gamma_l": self.gamma_l,
            "gamma_g": self.gamma_g,
        }


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateVectorError(f"zero-norm vector at index {int(bad[0])}")
    return vectors / norms[:, None]


def _dense_cosine(unit: np.ndarray) -> np.ndarray:
    """All-pairs cosine of unit rows, exactly symmetric, zero diagonal.

    Uses a symmetric rank-k product for the upper triangle and mirrors it,
    blockwise, so large documents stay cache-friendly.
    """
    n = unit.shape[0]
    a = dsyrk(1.0, np.ascontiguousarray(unit), lower=0)
    for s in range(0, n, _BLOCK):
        e = min(s + _BLOCK, n)
        if s:
            a[s:e, :s] = a[:s, s:e].T
        block = a[s:e, s:e]
        low = np.tril_indices(e - s, -1)
        block[low] = block.T[low]
    np.clip(a, -1.0, 1.0, out=a)
    np.fill_diagonal(a, 0.0)
    return a


def build_full_adjacency(
    tokens: Sequence[str],
    embedder: EmbedderSpec,
    cap: int = 20000,
    counters: MetricCounters | None = None,
) -> DenseAdjacency:
    """The dense oracle: unthresholded cosine of every token pair."""
    n = len(tokens)
    if n < 1:
        raise InvalidConfigError("dense oracle needs at least one token")
    if n > cap:
        raise ResourceLimitError(
            f"document has {n} tokens, dense-oracle cap is {cap}"
        )
    unit = _unit_rows(embed_tokens(tokens, embedder))
    if counters is not None:
        counters.similarity_evals += n * (n - 1) // 2
    return DenseAdjacency(n=n, values=_dense_cosine(unit))


def reconstruct_memory_adjacency(
    memory: GlobalMemory, graphs: Sequence[LocalGraph], n: int
) -> DenseAdjacency:
    """Rebuild the adjacency the memory implies, token-indexed like the oracle.

    Intra-segment entries are the surviving local edge weights. For segment
    pairs joined in the summary graph, every cross-token entry carries that
    edge's summary similarity; unjoined pairs contribute zero. With a single
    unthresholded segment this reproduces the dense oracle exactly.
    """
    ordered = sorted(graphs, key=lambda g: g.segment_index)
    if [g.segment_index for g in ordered] != list(range(len(ordered))):
        raise CorruptStateError("local graph indices are not contiguous from 0")
    if len(ordered) != memory.segment_count:
        raise CorruptStateError(
            f"{len(ordered)} local graphs but {memory.segment_count} summaries"
        )
    sizes = [g.node_count for g in ordered]
    if sum(sizes) != n:
        raise CorruptStateError(
            f"graphs cover {sum(sizes)} tokens, document has {n}"
        )
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    values = np.zeros((n, n))
    for graph, offset in zip(ordered, offsets[:-1]):
        for j, k, w in graph.edges:
            values[offset + j, offset + k] = w
            values[offset + k, offset + j] = w
    for p, q, w in memory.global_edges:
        values[offsets[p]:offsets[p + 1], offsets[q]:offsets[q + 1]] = w
        values[offsets[q]:offsets[q + 1], offsets[p]:offsets[p + 1]] = w
    return DenseAdjacency(n=n, values=values)


def error_bound(gamma_l: float, gamma_g: float) -> float:
    """Closed-form relative-error bound sqrt(2(1-gl^2)) + sqrt(2(1-gg^2))."""
    if not 0.0 <= gamma_l <= 1.0 or not 0.0 <= gamma_g <= 1.0:
        raise InvalidConfigError(
            f"bound arguments must be in [0, 1], got ({gamma_l}, {gamma_g})"
        )
    return math.sqrt(2.0 * (1.0 - gamma_l**2)) + math.sqrt(2.0 * (1.0 - gamma_g**2))


def error_report(
    a_full: DenseAdjacency,
    a_approx: DenseAdjacency,
    gamma_l: float,
    gamma_g: float,
) -> ErrorReport:
    """Frobenius error of the reconstruction, relative to the oracle's norm."""
    if a_full.n != a_approx.n:
        raise CorruptStateError(
            f"matrix sizes differ: {a_full.n} vs {a_approx.n}"
        )
    frob = float(np.linalg.norm(a_full.values - a_approx.values))
    denom = float(np.linalg.norm(a_full.values))
    relative = frob / denom if denom > 0.0 else 0.0
    bound = error_bound(gamma_l, gamma_g)
    return ErrorReport(
        frobenius_error=frob,
        relative_error=relative,
        bound=bound,
        satisfied=relative <= bound,
        gamma_l=gamma_l,
        gamma_g=gamma_g,
    )


def operating_gammas(
    memory: GlobalMemory, graphs: Sequence[LocalGraph]
) -> tuple[float, float]:
    """Identify the bound's gammas with the operating thresholds.

    The local gamma is the smallest finite per-segment threshold (the loosest
    pruning actually applied), the global gamma is the frozen summary
    threshold; both clamped into the bound's [0, 1] domain. Segments with no
    token pairs prune nothing and are ignored; if no segment has pairs the
    local tier introduces no error and gamma_l is 1.
    """
    finite = [
        g.threshold_used
        for g in graphs
        if math.isfinite(g.threshold_used) and g.node_count > 1
    ]
    gamma_l = min(finite) if finite else 1.0
    gamma_g = memory.delta_g
    clamp = lambda x: min(1.0, max(0.0, x))
    return clamp(gamma_l), clamp(gamma_g)


def synthetic_tokens(n: int, seed: int, vocab_size: int | None = None) -> list[str]:
    """Deterministic synthetic document: n draws from a bounded vocabulary."""
    if vocab_size is None:
        vocab_size = max(16, min(4096, n // 8)) if n >= 32 else max(2, n)
    rng = np.random.Generator(np.random.PCG64(seed & ((1 << 64) - 1)))
    ids = rng.integers(0, vocab_size, size=n)
    return [f"w{int(i):05d}" for i in ids]


@dataclass
class ProbePoint:
    n: int
    similarity_evals: int
    seconds: float
    snapshot_bytes: int


@dataclass
class ProbeResult:
    mode: str
    points: list[ProbePoint]
    slope: float


def fit_loglog_slope(ns: Sequence[int], counts: Sequence[int]) -> float:
    """Least-squares slope of log(count) against log(n)."""
    xs = np.log(np.asarray(ns, dtype=np.float64))
    ys = np.log(np.maximum(np.asarray(counts, dtype=np.float64), 1.0))
    return float(np.polyfit(xs, ys, 1)[0])


def complexity_probe(
    doc_lengths: Sequence[int], mode: str, config: EngineConfig
) -> ProbeResult:
    """Run construction at each document length and record similarity counts.

    hier-sqrt uses k = ceil(sqrt(N)) per point, hier-fixed uses the config's
    k, full builds the dense oracle. Counts come from the live instrumentation
    counters, not closed forms, so tests can check them against the theory.
    """
    lengths = list(doc_lengths)
    if len(lengths) < 4:
        raise InvalidConfigError("complexity probe needs at least 4 lengths")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise InvalidConfigError("probe lengths must be strictly ascending")
    if mode not in PROBE_MODES:
        raise InvalidConfigError(f"unknown probe mode: {mode!r}")

    points: list[ProbePoint] = []
    for n in lengths:
        tokens = synthetic_tokens(n, derive_seed(config.seed, f"probe-{n}"))
        start = time.perf_counter()
        if mode == MODE_FULL:
            counters = MetricCounters()
            dense = build_full_adjacency(
                tokens, config.embedder, cap=config.oracle_cap, counters=counters
            )
            seconds = time.perf_counter() - start
            size = dense.values.nbytes
            del dense
            evals = counters.similarity_evals
        else:
            k = math.ceil(math.sqrt(n)) if mode == MODE_HIER_SQRT else config.k
            mem, graphs = build_document(tokens, replace(config, k=k))
            seconds = time.perf_counter() - start
            evals = mem.metrics.similarity_evals
            from .persist import snapshot_bytes as _snapshot_bytes

            size = len(_snapshot_bytes(mem, graphs))
        points.append(
            ProbePoint(
                n=n, similarity_evals=evals, seconds=seconds, snapshot_bytes=size
            )
        )
    slope = fit_loglog_slope([p.n for p in points], [p.similarity_evals for p in points])
    return ProbeResult(mode=mode, points=points, slope=slope)


def sliding_window_baseline(
    tokens: Sequence[str],
    window: int,
    overlap: int,
    embedder: EmbedderSpec,
    delta: float,
    counters: MetricCounters | None = None,
) -> list[LocalGraph]:
    """Local graphs over overlapping fixed-size windows, no summary tier."""
    policy = ThresholdPolicy.fixed(delta)
    graphs = []
    for win in sliding_windows(tokens, window, overlap):
        nodes = embed_tokens(win.tokens, embedder)
        graphs.append(build_local_graph(nodes, win.index, policy, counters))
    return graphs


@dataclass
class SpeedupReport:
    """Query-path operation counts: tiered retrieval vs full-graph baseline.

    Ops are similarity evaluations plus per-node convolution updates on the
    answer path. Construction work is reported separately; wall-clock times
    are informational (hardware-bound).
    """

    n: int
    k: int
    top_k: int
    layers: int
    hier_similarity_evals: int
    hier_node_updates: int
    full_similarity_evals: int
    full_node_updates: int
    op_ratio: float
    hier_seconds: float
    full_seconds: float
    wall_ratio: float
    full_build_similarity_evals: int

    @property
    def hier_ops(self) -> int:
        return self.hier_similarity_evals + self.hier_node_updates

    @property
    def full_ops(self) -> int:
        return self.full_similarity_evals + self.full_node_updates

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "k": self.k,
            "top_k": self.top_k,
            "layers": self.layers,
            "hier_similarity_evals": self.hier_similarity_evals,
            "hier_node_updates": self.hier_node_updates,
            "hier_ops": self.hier_ops,
            "full_similarity_evals": self.full_similarity_evals,
            "full_node_updates": self.full_node_updates,
            "full_ops": self.full_ops,
            "op_ratio": self.op_ratio,
            "hier_seconds": self.hier_seconds,
            "full_seconds": self.full_seconds,
            "wall_ratio": self.wall_ratio,
            "full_build_similarity_evals": self.full_build_similarity_evals,
        }
        return d


def _full_scan_gcn(
    unit: np.ndarray,
    q_enc: np.ndarray,
    delta: float,
    gcn: GcnParams,
    counters: MetricCounters,
) -> np.ndarray:
    """Baseline answer path: score every token, convolve the whole-document graph."""
    n = unit.shape[0]
    scan = unit @ q_enc
    counters.similarity_evals += n

    mask = np.empty((n, n), dtype=bool)
    for s in range(0, n, _BLOCK):
        e = min(s + _BLOCK, n)
        sims = unit[s:e] @ unit.T
        block = sims >= delta
        block[np.arange(e - s), np.arange(s, e)] = False
        mask[s:e] = block
    degrees = mask.sum(axis=1)

    states = unit.copy()
    for w in gcn.weights:
        pooled = np.empty_like(states)
        for s in range(0, n, _BLOCK):
            e = min(s + _BLOCK, n)
            pooled[s:e] = mask[s:e] @ states
        pooled /= np.maximum(degrees, 1)[:, None]
        pooled[degrees == 0] = 0.0
        act = pooled @ w.T + states
        states = np.maximum(act, 0.0) if gcn.activation == "relu" else act
        counters.node_updates += n

    attn = np.exp(scan - scan.max())
    attn /= attn.sum()
    return attn @ states


def query_speedup_probe(
    n: int,
    config: EngineConfig,
    query_token_count: int = 8,
) -> SpeedupReport:
    """Measure answer-path work: tiered memory vs one whole-document graph.

    Both sides share the same embeddings, threshold, and convolution weights.
    The baseline's graph-construction cost is excluded from its query ops and
    reported on its own.
    """
    tokens = synthetic_tokens(n, derive_seed(config.seed, "speedup-doc"))
    query_rng = np.random.Generator(
        np.random.PCG64(derive_seed(config.seed, "speedup-query"))
    )
    picks = query_rng.integers(0, len(tokens), size=query_token_count)
    query_tokens = [tokens[int(i)] for i in picks]

    memory, graphs = build_document(tokens, config)
    gcn = GcnParams.from_config(config)

    hier_counters = MetricCounters()
    start = time.perf_counter()
    answer_query(
        memory, graphs, query_tokens, config.top_k, gcn, config.embedder,
        counters=hier_counters,
    )
    hier_seconds = time.perf_counter() - start

    if config.threshold.mode == "fixed":
        delta = config.threshold.delta_fixed
    else:
        # Adaptive mode would need full-document similarity statistics; the
        # baseline graph uses the grid's middle local threshold instead.
        delta = 0.2
    unit = _unit_rows(embed_tokens(tokens, config.embedder))

    from .query import encode_query

    q_enc = encode_query(query_tokens, config.embedder)
    full_counters = MetricCounters()
    start = time.perf_counter()
    _full_scan_gcn(unit, q_enc, delta, gcn, full_counters)
    full_seconds = time.perf_counter() - start

    hier_ops = hier_counters.similarity_evals + hier_counters.node_updates
    full_ops = full_counters.similarity_evals + full_counters.node_updates
    return SpeedupReport(
        n=n,
        k=config.k,
        top_k=config.top_k,
        layers=config.gcn_layers,
        hier_similarity_evals=hier_counters.similarity_evals,
        hier_node_updates=hier_counters.node_updates,
        full_similarity_evals=full_counters.similarity_evals,
        full_node_updates=full_counters.node_updates,
        op_ratio=full_ops / hier_ops if hier_ops else math.inf,
        hier_seconds=hier_seconds,
        full_seconds=full_seconds,
        wall_ratio=full_seconds / hier_seconds if hier_seconds > 0 else math.inf,
        full_build_similarity_evals=n * (n - 1) // 2,
    )
