from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segmem.errors import InvalidConfigError
from segmem.segmenter import segment, sliding_windows


def test_segment_lengths():
    tokens = [str(i) for i in range(10)]
    segments = segment(tokens, 4)
    assert [len(s) for s in segments] == [4, 4, 2]
    assert [s.index for s in segments] == [0, 1, 2]


def test_segment_empty_document():
    assert segment([], 4) == []


def test_segment_single_full_segment():
    tokens = [str(i) for i in range(256)]
    segments = segment(tokens, 256)
    assert len(segments) == 1
    assert segments[0].start == 0 and segments[0].end == 256


def test_segment_k_zero_rejected():
    with pytest.raises(InvalidConfigError):
        segment(["a"], 0)


@given(st.integers(0, 100_000), st.integers(1, 4096))
@settings(max_examples=200, deadline=None)
def test_segment_coverage_partition(n, k):
    tokens = list(map(str, range(n)))
    segments = segment(tokens, k)
    # spans tile the document exactly and reproduce it on concatenation
    assert len(segments) == -(-n // k)
    cursor = 0
    rebuilt: list[str] = []
    for i, s in enumerate(segments):
        assert s.index == i
        assert s.start == cursor
        assert s.end - s.start >= 1
        assert s.end - s.start <= k
        if i < len(segments) - 1:
            assert s.end - s.start == k
        cursor = s.end
        rebuilt.extend(s.tokens)
    assert cursor == n
    assert rebuilt == tokens


def test_segment_is_pure():
    tokens = ["a", "b", "c"]
    assert segment(tokens, 2) == segment(tokens, 2)


def test_sliding_window_starts():
    tokens = [str(i) for i in range(512)]
    windows = sliding_windows(tokens, 256, 128)
    assert [w.start for w in windows] == [0, 128, 256, 384]
    assert windows[-1].end == 512


def test_sliding_window_short_document():
    windows = sliding_windows([str(i) for i in range(100)], 256, 128)
    assert len(windows) == 1
    assert (windows[0].start, windows[0].end) == (0, 100)


def test_sliding_window_overlap_equal_window_rejected():
    with pytest.raises(InvalidConfigError):
        sliding_windows(["a", "b"], 4, 4)
