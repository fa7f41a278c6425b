"""Splitting a token sequence into contiguous fixed-capacity segments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidConfigError


@dataclass(frozen=True)
class Segment:
    """A contiguous run of tokens: half-open span [start, end) of the document."""

    index: int
    start: int
    end: int
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return self.end - self.start


def segment(tokens: Sequence[str], k: int) -> list[Segment]:
    """Partition tokens into ceil(N/k) segments of capacity k.

    Segments tile the document exactly; only the last one may be shorter.
    The remainder is kept as its own segment rather than padded.
    """
    if k < 1:
        raise InvalidConfigError(f"segment size must be >= 1, got {k}")
    out = []
    for index, start in enumerate(range(0, len(tokens), k)):
        end = min(start + k, len(tokens))
        out.append(Segment(index, start, end, tuple(tokens[start:end])))
    return out


def sliding_windows(tokens: Sequence[str], window: int, overlap: int) -> list[Segment]:
    """Overlapping windows starting at multiples of (window - overlap).

    Used only by the sliding-window baseline; unlike segment(), windows may
    cover tokens twice and the last window may be short.
    """
    if window < 1:
        raise InvalidConfigError(f"window must be >= 1, got {window}")
    if overlap < 0 or overlap >= window:
        raise InvalidConfigError(
            f"overlap must satisfy 0 <= overlap < window, got {overlap} vs {window}"
        )
    stride = window - overlap
    out = []
    for index, start in enumerate(range(0, len(tokens), stride)):
        end = min(start + window, len(tokens))
        out.append(Segment(index, start, end, tuple(tokens[start:end])))
    return out
