"""Token and query vectors, plus the cosine kernel used everywhere.

Two embedder backends share one interface:

* ``deterministic-hash`` is the built-in, desk-scale backend. Each token is
  embedded as a pure function of (token string, seed, dimension): the token
  is keyed-hashed with BLAKE2b, the 128-bit digest seeds a NumPy PCG64
  generator, ``dimension`` standard normals are drawn (ziggurat method) and
  the vector is scaled to unit length. The PRNG pipeline is fixed so that
  snapshots and golden files stay comparable across builds.
* ``external-service`` posts token batches to an HTTP endpoint speaking the
  JSON contract documented in the README, so a real encoder can replace the
  hash backend without touching any other module.
"""

from __future__ import annotations

import hashlib
import json
import math
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateVectorError,
    DimensionMismatchError,
    InvalidConfigError,
    TransportError,
)

KIND_HASH = "deterministic-hash"
KIND_EXTERNAL = "external-service"

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EmbedderSpec:
    """Which embedder to use and how it is parameterized."""

    kind: str = KIND_HASH
    dimension: int = 64
    seed: int = 0
    endpoint: str | None = None

    def __post_init__(self):
        if self.kind not in (KIND_HASH, KIND_EXTERNAL):
            raise InvalidConfigError(f"unknown embedder kind: {self.kind!r}")
        if self.dimension < 2:
            raise InvalidConfigError(
                f"embedding dimension must be >= 2, got {self.dimension}"
            )
        if (self.endpoint is not None) != (self.kind == KIND_EXTERNAL):
            raise InvalidConfigError(
                "endpoint must be given exactly when kind is external-service"
            )


def _token_vector(token: str, seed: int, dimension: int) -> np.ndarray:
    key = (seed & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16, key=key).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vec = rng.standard_normal(dimension)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateVectorError(f"hash embedding collapsed to zero for {token!r}")
    return vec / norm


def _embed_external(tokens: Sequence[str], spec: EmbedderSpec, timeout: float) -> np.ndarray:
    assert spec.endpoint is not None
    payload = json.dumps({"model": "default", "texts": list(tokens)}).encode("utf-8")
    request = urllib.request.Request(
        spec.endpoint,
        data=payload,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            if not 200 <= response.status < 300:
                raise TransportError(
                    f"embedding service returned HTTP {response.status}", spec.endpoint
                )
            body = json.loads(response.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        raise TransportError(
            f"embedding service returned HTTP {exc.code}", spec.endpoint
        ) from exc
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise TransportError(
            f"embedding service unreachable: {exc}", spec.endpoint
        ) from exc

    dim = body.get("dim")
    vectors = body.get("vectors")
    if dim != spec.dimension:
        raise DimensionMismatchError(
            f"embedding service returned dim={dim}, expected {spec.dimension}"
        )
    if not isinstance(vectors, list) or len(vectors) != len(tokens):
        raise TransportError(
            f"embedding service returned {len(vectors) if isinstance(vectors, list) else '??'} "
            f"vectors for {len(tokens)} tokens",
            spec.endpoint,
        )
    out = np.asarray(vectors, dtype=np.float64)
    if out.shape != (len(tokens), spec.dimension):
        raise DimensionMismatchError(
            f"embedding service returned shape {out.shape}, "
            f"expected {(len(tokens), spec.dimension)}"
        )
    return out


def embed_tokens(
    tokens: Sequence[str], spec: EmbedderSpec, *, timeout: float = 30.0
) -> np.ndarray:
    """Embed a token sequence into an (n, dimension) float64 array.

    Hash mode memoizes repeated tokens within the call; identical tokens
    always yield identical rows. External mode sends one request per call.
    """
    if len(tokens) == 0:
        return np.empty((0, spec.dimension), dtype=np.float64)
    if spec.kind == KIND_EXTERNAL:
        return _embed_external(tokens, spec, timeout)

    out = np.empty((len(tokens), spec.dimension), dtype=np.float64)
    cache: dict[str, np.ndarray] = {}
    for i, token in enumerate(tokens):
        vec = cache.get(token)
        if vec is None:
            vec = _token_vector(token, spec.seed, spec.dimension)
            cache[token] = vec
        out[i] = vec
    return out


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1] so threshold comparisons stay exact.

    Raises instead of silently returning 0 for zero-norm inputs: a missing
    direction is a data bug upstream, not an orthogonal vector.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"cosine of shapes {u.shape} and {v.shape}")
    uu = float(np.dot(u, u))
    vv = float(np.dot(v, v))
    if uu == 0.0 or vv == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    # sqrt of the product (not product of sqrts) keeps cosine(v, v) == 1 exact
    value = float(np.dot(u, v)) / math.sqrt(uu * vv)
    return min(1.0, max(-1.0, value))
