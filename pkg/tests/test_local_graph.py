from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segmem.embedding import EmbedderSpec, cosine, embed_tokens
from segmem.errors import DegenerateVectorError, InvalidConfigError
from segmem.local_graph import (
    SINGLE_NODE_THRESHOLD,
    ThresholdPolicy,
    adaptive_threshold,
    build_local_graph,
    pairwise_similarities,
)
from segmem.metrics import MetricCounters

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])


def test_pairwise_single_node_empty():
    assert pairwise_similarities(np.ones((1, 3))).size == 0


def test_pairwise_three_nodes_three_values():
    nodes = np.random.default_rng(0).standard_normal((3, 5))
    sims = pairwise_similarities(nodes)
    assert sims.shape == (3,)
    # row-major upper triangle: (0,1), (0,2), (1,2)
    assert abs(sims[0] - cosine(nodes[0], nodes[1])) < 1e-9
    assert abs(sims[1] - cosine(nodes[0], nodes[2])) < 1e-9
    assert abs(sims[2] - cosine(nodes[1], nodes[2])) < 1e-9


def test_pairwise_axis_vectors():
    sims = pairwise_similarities(np.stack([E1, E1, E2]))
    assert np.allclose(sims, [1.0, 0.0, 0.0], atol=1e-12)


def test_pairwise_counter():
    counters = MetricCounters()
    pairwise_similarities(np.random.default_rng(1).standard_normal((7, 4)), counters)
    assert counters.similarity_evals == 7 * 6 // 2


def test_pairwise_zero_norm_names_index():
    nodes = np.ones((3, 4))
    nodes[2] = 0.0
    with pytest.raises(DegenerateVectorError, match="index 2"):
        pairwise_similarities(nodes)


def test_adaptive_threshold_zero_variance():
    policy = ThresholdPolicy.adaptive(alpha=1.0, beta=1.0)
    c = 0.37
    assert abs(adaptive_threshold(np.array([c, c, c]), policy) - c) < 1e-12


def test_adaptive_threshold_hand_case():
    # mean of [0, 1] is 0.5, population std is 0.5
    policy = ThresholdPolicy.adaptive(alpha=1.0, beta=1.0)
    assert abs(adaptive_threshold(np.array([0.0, 1.0]), policy) - 1.0) < 1e-12


def test_fixed_threshold_ignores_input():
    policy = ThresholdPolicy.fixed(0.2)
    assert adaptive_threshold(np.array([0.9, 0.9]), policy) == 0.2
    assert adaptive_threshold(np.array([]), policy) == 0.2


def test_adaptive_empty_input_sentinel():
    policy = ThresholdPolicy.adaptive()
    assert adaptive_threshold(np.array([]), policy) == SINGLE_NODE_THRESHOLD


def test_build_identical_nodes():
    v = np.random.default_rng(2).standard_normal(6)
    graph = build_local_graph(np.stack([v, v]), 0, ThresholdPolicy.fixed(0.9))
    assert len(graph.edges) == 1
    j, k, w = graph.edges[0]
    assert (j, k) == (0, 1)
    assert abs(w - 1.0) < 1e-12


def test_build_threshold_above_one_prunes_all():
    nodes = np.random.default_rng(3).standard_normal((5, 4))
    graph = build_local_graph(nodes, 0, ThresholdPolicy.fixed(1.5))
    assert graph.edges == []


def test_build_axis_vectors_brute_force():
    graph = build_local_graph(np.stack([E1, E1, E2]), 0, ThresholdPolicy.fixed(0.5))
    assert [(j, k) for j, k, _ in graph.edges] == [(0, 1)]


def test_single_node_segment():
    graph = build_local_graph(np.ones((1, 4)), 3, ThresholdPolicy.adaptive())
    assert graph.edges == []
    assert graph.threshold_used == math.inf
    assert graph.segment_index == 3


def test_empty_segment_rejected():
    with pytest.raises(InvalidConfigError):
        build_local_graph(np.empty((0, 4)), 0, ThresholdPolicy.fixed(0.0))


def test_unknown_mode_rejected():
    with pytest.raises(InvalidConfigError):
        ThresholdPolicy(mode="magic")


@given(st.integers(0, 2**32), st.integers(2, 24))
@settings(max_examples=60, deadline=None)
def test_edge_monotonicity_and_extremes(seed, n):
    nodes = np.random.default_rng(seed).standard_normal((n, 6))
    low = build_local_graph(nodes, 0, ThresholdPolicy.fixed(-1.0))
    assert len(low.edges) == n * (n - 1) // 2  # complete graph at delta = -1
    high = build_local_graph(nodes, 0, ThresholdPolicy.fixed(1.0000001))
    assert high.edges == []
    previous = None
    for delta in (-1.0, -0.3, 0.0, 0.3, 0.8):
        edges = {(j, k) for j, k, _ in build_local_graph(
            nodes, 0, ThresholdPolicy.fixed(delta)).edges}
        if previous is not None:
            assert edges <= previous  # raising delta never adds an edge
        previous = edges


@given(st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_edge_weights_match_recomputed_cosine(seed):
    g = np.random.default_rng(seed)
    nodes = g.standard_normal((10, 5))
    graph = build_local_graph(nodes, 0, ThresholdPolicy.fixed(-1.0))
    for j, k, w in graph.edges:
        assert j < k
        assert abs(w - cosine(nodes[j], nodes[k])) < 1e-9
        assert w >= graph.threshold_used


def test_counter_tracks_per_segment_quadratic_cost():
    spec = EmbedderSpec(dimension=8, seed=5)
    counters = MetricCounters()
    for n in (1, 4, 9):
        nodes = embed_tokens([f"t{i}" for i in range(n)], spec)
        build_local_graph(nodes, 0, ThresholdPolicy.fixed(0.0), counters)
    assert counters.similarity_evals == 0 + 6 + 36
