"""Durable state: corpus files, memory snapshots, metrics logs.

Corpus files are UTF-8 JSON-lines, one document per line. Snapshots are a
single binary file with length-prefixed sections and a trailing SHA-256:

    magic   8 bytes  b"SGMEMSNP"
    version u16 major, u16 minor (little-endian)
    section u64 length + payload, in fixed order:
        1. engine config as canonical JSON (sorted keys, compact separators)
        2. summaries: u32 count, u32 dim, then count*dim float64
        3. summary graph: float64 frozen threshold, u32 edge count, then
           (u32 p, u32 q, float64 weight) per edge
        4. local graphs: u32 count, then per graph u32 segment_index, u32 n,
           u32 dim, float64 threshold, n*dim float64 nodes, u32 edge_count,
           (u32 j, u32 k, float64 weight) per edge
        5. counters: five u64 (similarity_evals, edges_built, edges_reused,
           appends, node_updates)
    sha256  32 bytes over everything above

All floats are IEEE-754 64-bit little-endian, so save -> load -> save is
byte-identical. A reader refuses files whose major version differs.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import EngineConfig
from .errors import CorpusFormatError, SnapshotFormatError
from .local_graph import LocalGraph
from .memory import GlobalMemory, SummaryNode
from .metrics import MetricCounters

FORMAT_MAGIC = b"SGMEMSNP"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0

METRICS_LOG_COLUMNS = (
    "timestamp_ms",
    "append_index",
    "cache_hit_rate",
    "similarity_evals",
    "edges_built",
    "edges_reused",
)


@dataclass
class CorpusRecord:
    doc_id: str
    tokens: list[str]


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    """Read a JSON-lines corpus; raw text fields are whitespace-tokenized.

    Every record needs a unique doc_id and exactly one of "tokens" (list of
    strings) or "text" (string). Problems are reported with line numbers.
    """
    path = Path(path)
    records: list[CorpusRecord] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}")
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"{path}:{lineno}: record is not an object")
            doc_id = obj.get("doc_id")
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusFormatError(f"{path}:{lineno}: missing or empty doc_id")
            if doc_id in seen:
                raise CorpusFormatError(
                    f"{path}:{lineno}: duplicate doc_id {doc_id!r} "
                    f"(first seen on line {seen[doc_id]})"
                )
            seen[doc_id] = lineno
            has_tokens = "tokens" in obj
            has_text = "text" in obj
            if has_tokens == has_text:
                raise CorpusFormatError(
                    f"{path}:{lineno}: need exactly one of 'tokens' or 'text'"
                )
            if has_tokens:
                tokens = obj["tokens"]
                if not isinstance(tokens, list) or not all(
                    isinstance(t, str) for t in tokens
                ):
                    raise CorpusFormatError(
                        f"{path}:{lineno}: 'tokens' must be a list of strings"
                    )
                tokens = list(tokens)
            else:
                if not isinstance(obj["text"], str):
                    raise CorpusFormatError(f"{path}:{lineno}: 'text' must be a string")
                tokens = obj["text"].split()
            records.append(CorpusRecord(doc_id=doc_id, tokens=tokens))
    return records


def _pack_section(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def _config_payload(config: EngineConfig) -> bytes:
    return json.dumps(
        config.to_dict(), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")


def _summaries_payload(memory: GlobalMemory) -> bytes:
    dim = memory.config_snapshot.embedder.dimension
    parts = [struct.pack("<II", memory.segment_count, dim)]
    for node in memory.summaries:
        parts.append(np.asarray(node.vector, dtype="<f8").tobytes())
    return b"".join(parts)


def _edges_payload(edges: Sequence[tuple[int, int, float]]) -> bytes:
    parts = [struct.pack("<I", len(edges))]
    for p, q, w in edges:
        parts.append(struct.pack("<IId", p, q, w))
    return b"".join(parts)


def _graphs_payload(graphs: Sequence[LocalGraph]) -> bytes:
    parts = [struct.pack("<I", len(graphs))]
    for graph in sorted(graphs, key=lambda g: g.segment_index):
        n, dim = graph.nodes.shape
        parts.append(struct.pack("<IIId", graph.segment_index, n, dim, graph.threshold_used))
        parts.append(np.asarray(graph.nodes, dtype="<f8").tobytes())
        parts.append(_edges_payload(graph.edges))
    return b"".join(parts)


def _counters_payload(metrics: MetricCounters) -> bytes:
    return struct.pack(
        "<QQQQQ",
        metrics.similarity_evals,
        metrics.edges_built,
        metrics.edges_reused,
        metrics.appends,
        metrics.node_updates,
    )


def snapshot_bytes(memory: GlobalMemory, graphs: Sequence[LocalGraph]) -> bytes:
    """Serialize a memory and its local graphs into the snapshot format."""
    body = b"".join(
        (
            FORMAT_MAGIC,
            struct.pack("<HH", FORMAT_MAJOR, FORMAT_MINOR),
            _pack_section(_config_payload(memory.config_snapshot)),
            _pack_section(_summaries_payload(memory)),
            _pack_section(
                struct.pack("<d", memory.delta_g) + _edges_payload(memory.global_edges)
            ),
            _pack_section(_graphs_payload(graphs)),
            _pack_section(_counters_payload(memory.metrics)),
        )
    )
    return body + hashlib.sha256(body).digest()


def save_snapshot(
    memory: GlobalMemory, graphs: Sequence[LocalGraph], path: str | Path
) -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    path = Path(path)
    data = snapshot_bytes(memory, graphs)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


class _Reader:
    def __init__(self, data: bytes, context: str):
        self.data = data
        self.offset = 0
        self.context = context

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise SnapshotFormatError(f"{self.context}: truncated file")
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def section(self) -> "_Reader":
        (length,) = self.unpack("<Q")
        return _Reader(self.take(length), self.context)

    def expect_end(self):
        if self.offset != len(self.data):
            raise SnapshotFormatError(f"{self.context}: trailing bytes in section")


def _read_edges(reader: _Reader) -> list[tuple[int, int, float]]:
    (count,) = reader.unpack("<I")
    edges = []
    for _ in range(count):
        p, q, w = reader.unpack("<IId")
        edges.append((p, q, w))
    return edges


def load_snapshot(path: str | Path) -> tuple[GlobalMemory, list[LocalGraph]]:
    """Read a snapshot back; verifies magic, major version, and checksum."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(FORMAT_MAGIC) + 4 + 32:
        raise SnapshotFormatError(f"{path}: truncated file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SnapshotFormatError(f"{path}: checksum mismatch")

    reader = _Reader(body, str(path))
    if reader.take(len(FORMAT_MAGIC)) != FORMAT_MAGIC:
        raise SnapshotFormatError(f"{path}: not a snapshot file")
    major, _minor = reader.unpack("<HH")
    if major != FORMAT_MAJOR:
        raise SnapshotFormatError(
            f"{path}: format major version {major} is not supported "
            f"(engine writes {FORMAT_MAJOR})"
        )

    config_reader = reader.section()
    try:
        config = EngineConfig.from_dict(
            json.loads(config_reader.data.decode("utf-8"))
        )
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SnapshotFormatError(f"{path}: bad config section: {exc}")

    summaries_reader = reader.section()
    count, dim = summaries_reader.unpack("<II")
    summaries = []
    for index in range(count):
        raw = summaries_reader.take(dim * 8)
        vector = np.frombuffer(raw, dtype="<f8").copy()
        summaries.append(SummaryNode(segment_index=index, vector=vector))
    summaries_reader.expect_end()

    edges_reader = reader.section()
    (delta_g,) = edges_reader.unpack("<d")
    global_edges = _read_edges(edges_reader)
    edges_reader.expect_end()

    graphs_reader = reader.section()
    (graph_count,) = graphs_reader.unpack("<I")
    graphs = []
    for _ in range(graph_count):
        segment_index, n, gdim, threshold = graphs_reader.unpack("<IIId")
        raw = graphs_reader.take(n * gdim * 8)
        nodes = np.frombuffer(raw, dtype="<f8").reshape(n, gdim).copy()
        edges = _read_edges(graphs_reader)
        graphs.append(
            LocalGraph(
                segment_index=segment_index,
                nodes=nodes,
                edges=edges,
                threshold_used=threshold,
            )
        )
    graphs_reader.expect_end()

    counters_reader = reader.section()
    evals, built, reused, appends, updates = counters_reader.unpack("<QQQQQ")
    counters_reader.expect_end()
    reader.expect_end()

    memory = GlobalMemory(
        summaries=summaries,
        global_edges=global_edges,
        delta_g=delta_g,
        config_snapshot=config,
        metrics=MetricCounters(
            similarity_evals=evals,
            edges_built=built,
            edges_reused=reused,
            appends=appends,
            node_updates=updates,
        ),
    )
    return memory, graphs


def write_metrics_header(handle) -> None:
    handle.write(",".join(METRICS_LOG_COLUMNS) + "\n")


def format_metrics_row(
    timestamp_ms: int, append_index: int, rate: float, metrics: MetricCounters
) -> str:
    return (
        f"{timestamp_ms},{append_index},{rate!r},{metrics.similarity_evals},"
        f"{metrics.edges_built},{metrics.edges_reused}\n"
    )
