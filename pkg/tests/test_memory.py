from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from segmem.config import EngineConfig
from segmem.embedding import EmbedderSpec, cosine
from segmem.errors import DimensionMismatchError, SequencingError
from segmem.local_graph import ThresholdPolicy
from segmem.memory import (
    AggregatorParams,
    GlobalThresholdConfig,
    SummaryNode,
    aggregate_summary,
    append_segment,
    build_document,
    build_memory,
    cache_hit_rate,
    global_threshold,
    memories_equivalent,
    nearest_rank,
)
from segmem.metrics import MetricCounters
from segmem.segmenter import segment

from conftest import make_tokens, small_config


def identity_params(dimension: int) -> AggregatorParams:
    return AggregatorParams.create(dimension, identity_mode=True)


def test_aggregate_identity_duplicate_nodes():
    v = np.array([0.5, -1.0, 2.0, 0.25])
    out = aggregate_summary(np.stack([v, v]), [], identity_params(4))
    # mean = v, elementwise max = v, attention term = 0
    assert np.array_equal(out.vector, v + v)


def test_aggregate_identity_hand_case():
    nodes = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = aggregate_summary(nodes, [], identity_params(2))
    assert np.allclose(out.vector, [1.5, 1.5], atol=1e-12)


def test_aggregate_single_summary_attention_is_that_summary():
    # softmax over one key is 1 for every query row, so the attention term
    # is exactly the lone summary vector
    u = SummaryNode(0, np.array([0.25, -0.5, 1.0]))
    nodes = np.array([[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]])
    out = aggregate_summary(nodes, [u], identity_params(3), segment_index=1)
    expected = nodes.mean(axis=0) + nodes.max(axis=0) + u.vector
    assert np.array_equal(out.vector, expected)
    assert out.segment_index == 1


def test_aggregate_orthogonal_singletons_double_and_stay_disconnected():
    dim = 6
    params = identity_params(dim)
    vectors = np.eye(dim)[:4]
    summaries = [
        aggregate_summary(vectors[i : i + 1], [], params, segment_index=i)
        for i in range(4)
    ]
    for i, s in enumerate(summaries):
        assert np.array_equal(s.vector, 2.0 * vectors[i])
    assert global_threshold(summaries, percentile=85.0, margin=0.0, fallback=0.1) == 0.0
    for p in range(4):
        for q in range(p + 1, 4):
            assert cosine(summaries[p].vector, summaries[q].vector) == 0.0


def test_aggregate_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        aggregate_summary(
            np.ones((2, 4)), [SummaryNode(0, np.ones(6))], identity_params(4)
        )


def test_aggregator_params_deterministic_and_composable():
    a = AggregatorParams.create(8, hidden=5, seed=42)
    b = AggregatorParams.create(8, hidden=5, seed=42)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)
    assert a.w1.shape == (5, 8) and a.w2.shape == (8, 5)
    assert a.attention_scale == 1.0 / math.sqrt(8)
    x = np.random.default_rng(0).standard_normal(8)
    out = a.w2 @ np.maximum(a.w1 @ x + a.b1, 0.0) + a.b2
    assert out.shape == (8,)


def test_nearest_rank_hand_case():
    values = np.round(np.arange(0.1, 1.05, 0.1), 10)
    assert len(values) == 10
    # ceil(0.85 * 10) = 9, so the 9th smallest value
    assert abs(nearest_rank(values, 85.0) - 0.9) < 1e-12


def test_global_threshold_two_summaries():
    a = SummaryNode(0, np.array([1.0, 0.0]))
    b = SummaryNode(1, np.array([1.0, 1.0]))
    s = cosine(a.vector, b.vector)
    got = global_threshold([a, b], percentile=85.0, margin=0.01)
    assert abs(got - (s + 0.01)) < 1e-12


def test_global_threshold_fallback():
    only = SummaryNode(0, np.ones(4))
    assert global_threshold([only], fallback=0.1) == 0.1
    assert global_threshold([], fallback=0.1) == 0.1


def _build(tokens, config):
    return build_document(tokens, config)


def test_build_empty_document():
    memory, graphs = _build([], small_config())
    assert memory.segment_count == 0
    assert memory.global_edges == []
    assert graphs == []
    assert memory.delta_g == 0.1  # fallback


def test_build_single_segment():
    config = small_config(k=16)
    memory, graphs = _build(["a"] * 10, config)
    assert memory.segment_count == 1
    assert memory.global_edges == []
    assert len(graphs) == 1


def test_build_duplicate_segments_identity_mode():
    config = small_config(k=4, aggregator_identity=True, global_fixed=1.0)
    memory, _ = _build(["p", "q", "r", "s"] * 2, config)
    assert memory.segment_count == 2
    sim = cosine(memory.summaries[0].vector, memory.summaries[1].vector)
    assert sim >= 1.0 - 1e-12
    assert [(p, q) for p, q, _ in memory.global_edges] == [(0, 1)]
    assert memory.global_edges[0][2] >= 1.0 - 1e-12


def test_build_global_edges_match_recomputed_cosines(rng):
    config = small_config(k=8, global_fixed=0.0)
    memory, _ = _build(make_tokens(rng, 64, 6), config)
    edges = {(p, q): w for p, q, w in memory.global_edges}
    m = memory.segment_count
    for p in range(m):
        for q in range(p + 1, m):
            true = cosine(memory.summaries[p].vector, memory.summaries[q].vector)
            if true >= memory.delta_g:
                assert (p, q) in edges
                assert abs(edges[(p, q)] - true) < 1e-9
            else:
                assert (p, q) not in edges


def test_build_counts_local_plus_global_evals(rng):
    config = small_config(k=8)
    tokens = make_tokens(rng, 60, 10)
    memory, graphs = _build(tokens, config)
    sizes = [g.node_count for g in graphs]
    expected = sum(n * (n - 1) // 2 for n in sizes)
    m = len(sizes)
    expected += m * (m - 1) // 2
    assert memory.metrics.similarity_evals == expected


def _build_incremental(tokens, config):
    params = AggregatorParams.from_config(config)
    gt = GlobalThresholdConfig.from_config(config)
    memory, graphs = build_memory(
        [], config.embedder, config.threshold, params, gt, config=config
    )
    for seg in segment(tokens, config.k):
        append_segment(memory, graphs, seg, config.embedder, config.threshold, params)
    return memory, graphs


def test_append_to_empty_memory():
    config = small_config(k=4, global_fixed=0.1)
    memory, graphs = _build_incremental(["a", "b", "c"], config)
    assert memory.segment_count == 1
    assert memory.global_edges == []
    assert cache_hit_rate(memory.metrics) == 1.0  # nothing to reuse yet
    assert memory.metrics.appends == 1
    assert len(graphs) == 1


def test_append_duplicate_segment_gets_unit_edge():
    config = small_config(k=4, aggregator_identity=True, global_fixed=0.5)
    tokens = ["p", "q", "r", "s"]
    memory, graphs = _build_incremental(tokens, config)
    params = AggregatorParams.from_config(config)
    seg = segment(tokens, 4)[0]
    dup = replace(seg, index=1)
    append_segment(memory, graphs, dup, config.embedder, config.threshold, params)
    assert [(p, q) for p, q, _ in memory.global_edges] == [(0, 1)]
    assert memory.global_edges[0][2] >= 1.0 - 1e-12


def test_append_out_of_order_rejected():
    config = small_config(k=4)
    memory, graphs = _build_incremental(["a", "b"], config)
    params = AggregatorParams.from_config(config)
    bad = segment(["x", "y"], 4)[0]  # index 0, but memory expects 1
    with pytest.raises(SequencingError):
        append_segment(memory, graphs, bad, config.embedder, config.threshold, params)


def test_append_work_is_new_pairs_plus_one_per_existing_summary(rng):
    config = small_config(k=8, global_fixed=0.0)
    tokens = make_tokens(rng, 48, 8)
    memory, graphs = _build(tokens, config)
    before = memory.metrics.copy()
    edges_before = len(memory.global_edges)
    params = AggregatorParams.from_config(config)
    new_tokens = make_tokens(rng, 8, 8)
    seg = segment(new_tokens, 8)[0]
    seg = replace(seg, index=memory.segment_count)
    m_before = memory.segment_count
    append_segment(memory, graphs, seg, config.embedder, config.threshold, params)
    delta_evals = memory.metrics.similarity_evals - before.similarity_evals
    assert delta_evals == 8 * 7 // 2 + m_before
    assert memory.metrics.edges_reused - before.edges_reused == edges_before


@pytest.mark.parametrize("seed", range(8))
def test_incremental_equals_batch(seed):
    g = np.random.default_rng(seed)
    config = small_config(
        k=int(g.integers(2, 9)), seed=seed, global_fixed=float(g.uniform(-0.2, 0.6))
    )
    tokens = make_tokens(g, int(g.integers(1, 80)), int(g.integers(2, 12)))
    batch_memory, batch_graphs = _build(tokens, config)
    inc_memory, inc_graphs = _build_incremental(tokens, config)
    assert len(batch_memory.summaries) == len(inc_memory.summaries)
    for a, b in zip(batch_memory.summaries, inc_memory.summaries):
        assert a.segment_index == b.segment_index
        assert np.array_equal(a.vector, b.vector)  # bit-exact
    assert batch_memory.global_edges == inc_memory.global_edges
    assert batch_memory.delta_g == inc_memory.delta_g
    assert batch_graphs == inc_graphs
    assert batch_memory.metrics.similarity_evals == inc_memory.metrics.similarity_evals
    assert memories_equivalent(batch_memory, inc_memory)


def test_segment_order_changes_summaries():
    config = small_config(k=2)
    ab = _build(["a", "a", "b", "b"], config)[0]
    ba = _build(["b", "b", "a", "a"], config)[0]
    # the content "b b" sits at position 0 in one run and position 1 in the
    # other; cross-attention over previous summaries makes those differ
    assert not np.allclose(ab.summaries[1].vector, ba.summaries[0].vector)


def test_cache_hit_rate_values():
    assert cache_hit_rate(MetricCounters(edges_reused=82, edges_built=18)) == 0.82
    assert cache_hit_rate(MetricCounters()) == 1.0
    assert cache_hit_rate(MetricCounters(edges_reused=3, edges_built=1)) == 0.75


def test_metrics_monotone_across_appends(rng):
    config = small_config(k=4, global_fixed=0.0)
    tokens = make_tokens(rng, 40, 5)
    params = AggregatorParams.from_config(config)
    gt = GlobalThresholdConfig.from_config(config)
    memory, graphs = build_memory(
        [], config.embedder, config.threshold, params, gt, config=config
    )
    previous = memory.metrics.copy()
    for seg in segment(tokens, config.k):
        append_segment(memory, graphs, seg, config.embedder, config.threshold, params)
        current = memory.metrics
        assert current.similarity_evals >= previous.similarity_evals
        assert current.edges_built >= previous.edges_built
        assert current.edges_reused >= previous.edges_reused
        assert current.appends == previous.appends + 1
        previous = current.copy()


def test_recompute_on_append_moves_threshold(rng):
    config = small_config(k=4, global_recompute=True)
    tokens = make_tokens(rng, 32, 4)
    memory, graphs = _build(tokens, config)
    params = AggregatorParams.from_config(config)
    delta_before = memory.delta_g
    seg = segment(make_tokens(rng, 4, 4), 4)[0]
    seg = replace(seg, index=memory.segment_count)
    append_segment(memory, graphs, seg, config.embedder, config.threshold, params)
    # refreshed percentile over a new sample; almost surely a different value
    assert memory.delta_g != delta_before
