from __future__ import annotations

import numpy as np
import pytest

from segmem.config import EngineConfig
from segmem.embedding import EmbedderSpec


def make_tokens(rng: np.random.Generator, n: int, vocab: int) -> list[str]:
    return [f"w{int(i)}" for i in rng.integers(0, vocab, size=n)]


def small_config(
    dimension: int = 16,
    k: int = 8,
    seed: int = 0,
    **overrides,
) -> EngineConfig:
    return EngineConfig(
        embedder=EmbedderSpec(dimension=dimension, seed=seed),
        k=k,
        seed=seed,
        **overrides,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
