"""Engine configuration: defaults, flat-file parsing, env and CLI overrides.

The on-disk format is a flat ``key = value`` text file whose keys mirror the
field names below (nested embedder/threshold fields use an underscore
prefix). Precedence, lowest to highest: built-in defaults, config file,
``SEGMEM_*`` environment variables, CLI flags.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .embedding import EmbedderSpec
from .errors import InvalidConfigError
from .local_graph import ThresholdPolicy

ENV_PREFIX = "SEGMEM_"

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, label: str) -> int:
    """Stable sub-seed for one component, keyed off the master seed."""
    key = (master & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class EngineConfig:
    """Everything needed to rebuild a memory deterministically.

    ``global_fixed`` pins the summary-graph threshold to an exact value
    (grid sweeps, batch-vs-incremental comparisons); when None the threshold
    is the configured percentile of summary similarities plus the margin,
    falling back to ``global_fallback`` when fewer than two summaries exist.
    """

    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    k: int = 256
    threshold: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    global_percentile: float = 85.0
    global_margin: float = 0.01
    global_fallback: float = 0.1
    global_fixed: float | None = None
    global_recompute: bool = False
    top_k: int = 5
    gcn_layers: int = 2
    gcn_activation: str = "relu"
    gcn_identity: bool = False
    aggregator_hidden: int | None = None
    aggregator_identity: bool = False
    seed: int = 0
    oracle_cap: int = 20000

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfigError(f"segment size k must be >= 1, got {self.k}")
        if self.top_k < 1:
            raise InvalidConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.global_percentile <= 100.0:
            raise InvalidConfigError(
                f"global_percentile must be in [0, 100], got {self.global_percentile}"
            )
        if self.gcn_layers < 0:
            raise InvalidConfigError(f"gcn_layers must be >= 0, got {self.gcn_layers}")
        if self.gcn_activation not in ("relu", "identity"):
            raise InvalidConfigError(
                f"gcn_activation must be relu or identity, got {self.gcn_activation!r}"
            )
        if self.oracle_cap < 1:
            raise InvalidConfigError(f"oracle_cap must be >= 1, got {self.oracle_cap}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "embedder_kind": self.embedder.kind,
            "embedder_dimension": self.embedder.dimension,
            "embedder_seed": self.embedder.seed,
            "embedder_endpoint": self.embedder.endpoint,
            "k": self.k,
            "threshold_mode": self.threshold.mode,
            "threshold_alpha": self.threshold.alpha,
            "threshold_beta": self.threshold.beta,
            "threshold_delta_fixed": self.threshold.delta_fixed,
            "global_percentile": self.global_percentile,
            "global_margin": self.global_margin,
            "global_fallback": self.global_fallback,
            "global_fixed": self.global_fixed,
            "global_recompute": self.global_recompute,
            "top_k": self.top_k,
            "gcn_layers": self.gcn_layers,
            "gcn_activation": self.gcn_activation,
            "gcn_identity": self.gcn_identity,
            "aggregator_hidden": self.aggregator_hidden,
            "aggregator_identity": self.aggregator_identity,
            "seed": self.seed,
            "oracle_cap": self.oracle_cap,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EngineConfig":
        unknown = set(data) - set(_FIELD_PARSERS)
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = cls().to_dict()
        merged.update(data)
        embedder = EmbedderSpec(
            kind=merged["embedder_kind"],
            dimension=merged["embedder_dimension"],
            seed=merged["embedder_seed"],
            endpoint=merged["embedder_endpoint"],
        )
        threshold = ThresholdPolicy(
            mode=merged["threshold_mode"],
            alpha=merged["threshold_alpha"],
            beta=merged["threshold_beta"],
            delta_fixed=merged["threshold_delta_fixed"],
        )
        return cls(
            embedder=embedder,
            k=merged["k"],
            threshold=threshold,
            global_percentile=merged["global_percentile"],
            global_margin=merged["global_margin"],
            global_fallback=merged["global_fallback"],
            global_fixed=merged["global_fixed"],
            global_recompute=merged["global_recompute"],
            top_k=merged["top_k"],
            gcn_layers=merged["gcn_layers"],
            gcn_activation=merged["gcn_activation"],
            gcn_identity=merged["gcn_identity"],
            aggregator_hidden=merged["aggregator_hidden"],
            aggregator_identity=merged["aggregator_identity"],
            seed=merged["seed"],
            oracle_cap=merged["oracle_cap"],
        )

    def with_seed(self, seed: int) -> "EngineConfig":
        """Override the master seed and re-derive the embedder seed from it."""
        return replace(
            self,
            seed=seed,
            embedder=replace(self.embedder, seed=seed),
        )


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise InvalidConfigError(f"not a boolean: {text!r}")


def _parse_optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _parse_optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _parse_optional_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


_FIELD_PARSERS: dict[str, Any] = {
    "embedder_kind": str.strip,
    "embedder_dimension": int,
    "embedder_seed": int,
    "embedder_endpoint": _parse_optional_str,
    "k": int,
    "threshold_mode": str.strip,
    "threshold_alpha": float,
    "threshold_beta": float,
    "threshold_delta_fixed": float,
    "global_percentile": float,
    "global_margin": float,
    "global_fallback": float,
    "global_fixed": _parse_optional_float,
    "global_recompute": _parse_bool,
    "top_k": int,
    "gcn_layers": int,
    "gcn_activation": str.strip,
    "gcn_identity": _parse_bool,
    "aggregator_hidden": _parse_optional_int,
    "aggregator_identity": _parse_bool,
    "seed": int,
    "oracle_cap": int,
}


def parse_config_text(text: str, *, source: str = "<config>") -> dict[str, Any]:
    """Parse flat key=value lines into typed config values."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{source}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise InvalidConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = parser(value.strip())
        except InvalidConfigError:
            raise
        except ValueError as exc:
            raise InvalidConfigError(f"{source}:{lineno}: bad value for {key}: {exc}")
    return values


def load_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    """Collect SEGMEM_<KEY> overrides from an environment mapping."""
    values: dict[str, Any] = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        parser = _FIELD_PARSERS.get(key)
        if parser is None:
            raise InvalidConfigError(f"unknown config key in env var {name}")
        try:
            values[key] = parser(raw)
        except InvalidConfigError:
            raise
        except ValueError as exc:
            raise InvalidConfigError(f"bad value in env var {name}: {exc}")
    return values


def resolve_config(
    file_path: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> EngineConfig:
    """Merge defaults, file, environment, and explicit overrides, in that order."""
    merged: dict[str, Any] = {}
    if file_path is not None:
        merged.update(load_config_file(file_path))
    if environ is not None:
        merged.update(env_overrides(environ))
    if overrides:
        merged.update(overrides)
    return EngineConfig.from_dict(merged)
