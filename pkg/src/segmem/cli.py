"""Operator commands: build, append, query, bench, compare, sweep.

Every command is deterministic given its inputs, config, and seed, except
for wall-clock measurement columns, which are explicitly labeled as such.
File outputs are written to a temp file and renamed, so a failed command
never leaves a partial artifact at the final path.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import oracle, persist
from .config import EngineConfig, resolve_config
from .errors import EngineError
from .local_graph import ThresholdPolicy
from .memory import (
    AggregatorParams,
    append_segment,
    build_document,
    cache_hit_rate,
)
from .query import GcnParams, answer_query
from .segmenter import Segment, segment as split_tokens

BENCH_COLUMNS = (
    "n",
    "mode",
    "similarity_evals",
    "wall_seconds",
    "peak_snapshot_bytes",
    "fitted_slope",
)
SWEEP_COLUMNS = (
    "delta_l",
    "delta_g",
    "k",
    "top_k",
    "relative_error",
    "similarity_evals",
    "edges_built",
)
DEFAULT_DELTA_L_GRID = (0.1, 0.2, 0.3)
DEFAULT_DELTA_G_GRID = (0.05, 0.1, 0.15)


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        _atomic_write_text(Path(out), text)


def _load_config(args: argparse.Namespace) -> EngineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides["embedder_seed"] = args.seed
    if getattr(args, "k", None) is not None:
        overrides["k"] = args.k
    return resolve_config(args.config, os.environ, overrides)


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def cmd_build(args: argparse.Namespace) -> int:
    config = _load_config(args)
    records = persist.load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for record in records:
        try:
            memory, graphs = build_document(record.tokens, config)
        except EngineError as exc:
            print(f"error: doc={record.doc_id}: {exc}", file=sys.stderr)
            return 1
        persist.save_snapshot(memory, graphs, out_dir / f"{record.doc_id}.snap")
        m = memory.metrics
        print(
            f"doc={record.doc_id} M={memory.segment_count} "
            f"global_edges={len(memory.global_edges)} delta_g={memory.delta_g!r} "
            f"sim_evals={m.similarity_evals} edges_built={m.edges_built}"
        )
    print(f"{len(records)} documents")
    return 0


def cmd_append(args: argparse.Namespace) -> int:
    memory, graphs = persist.load_snapshot(args.snapshot)
    config = memory.config_snapshot
    records = persist.load_corpus(args.corpus)
    params = AggregatorParams.from_config(config)

    rows = [",".join(persist.METRICS_LOG_COLUMNS) + "\n"]
    step = 0
    for record in records:
        for chunk in split_tokens(record.tokens, config.k):
            index = memory.segment_count
            seg = Segment(index, chunk.start, chunk.end, chunk.tokens)
            try:
                append_segment(
                    memory, graphs, seg, config.embedder, config.threshold, params
                )
            except EngineError as exc:
                print(f"error: doc={record.doc_id}: {exc}", file=sys.stderr)
                return 1
            # Logical stream clock: rows are spaced exactly interval_ms apart,
            # which keeps the log byte-deterministic across runs.
            rows.append(
                persist.format_metrics_row(
                    step * args.interval_ms, index,
                    cache_hit_rate(memory.metrics), memory.metrics,
                )
            )
            step += 1
    persist.save_snapshot(memory, graphs, args.out)
    _emit("".join(rows), args.metrics_log)
    print(
        f"appended {step} segments: M={memory.segment_count} "
        f"cache_hit_rate={cache_hit_rate(memory.metrics)!r}"
    )
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    memory, graphs = persist.load_snapshot(args.snapshot)
    config = memory.config_snapshot
    k = args.k if args.k is not None else config.top_k
    result = answer_query(
        memory,
        graphs,
        args.query.split(),
        k,
        GcnParams.from_config(config),
        config.embedder,
    )
    payload = json.dumps(result.to_dict(), sort_keys=True) + "\n"
    _emit(payload, args.out)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = _load_config(args)
    lengths = _parse_int_list(args.lengths)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    rows = []
    for mode in sorted(modes):
        probe = oracle.complexity_probe(lengths, mode, config)
        slope = repr(probe.slope) if len(probe.points) >= 4 else ""
        for point in probe.points:
            rows.append(
                f"{point.n},{mode},{point.similarity_evals},"
                f"{point.seconds!r},{point.snapshot_bytes},{slope}\n"
            )
        print(f"mode={mode} slope={probe.slope!r}")
    _emit(",".join(BENCH_COLUMNS) + "\n" + "".join(rows), args.out)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = _load_config(args)
    records = persist.load_corpus(args.corpus)
    reports = []
    for record in records:
        memory, graphs = build_document(record.tokens, config)
        dense = oracle.build_full_adjacency(
            record.tokens, config.embedder, cap=config.oracle_cap
        )
        approx = oracle.reconstruct_memory_adjacency(
            memory, graphs, len(record.tokens)
        )
        gamma_l, gamma_g = oracle.operating_gammas(memory, graphs)
        report = oracle.error_report(dense, approx, gamma_l, gamma_g)
        reports.append({"doc_id": record.doc_id, **report.to_dict()})
    _emit(json.dumps(reports, sort_keys=True, indent=2) + "\n", args.out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    records = persist.load_corpus(args.corpus)
    delta_l_grid = _parse_float_list(args.delta_l) if args.delta_l else list(DEFAULT_DELTA_L_GRID)
    delta_g_grid = _parse_float_list(args.delta_g) if args.delta_g else list(DEFAULT_DELTA_G_GRID)
    k_grid = _parse_int_list(args.k_grid) if args.k_grid else [config.k]
    top_k_grid = _parse_int_list(args.top_k_grid) if args.top_k_grid else [config.top_k]

    dense_cache = {
        record.doc_id: oracle.build_full_adjacency(
            record.tokens, config.embedder, cap=config.oracle_cap
        )
        for record in records
    }

    rows = []
    for k in k_grid:
        for top_k in top_k_grid:
            for delta_l in delta_l_grid:
                for delta_g in delta_g_grid:
                    point = replace(
                        config,
                        k=k,
                        top_k=top_k,
                        threshold=ThresholdPolicy.fixed(delta_l),
                        global_fixed=delta_g,
                    )
                    rel_errors = []
                    sim_evals = 0
                    edges_built = 0
                    for record in records:
                        memory, graphs = build_document(record.tokens, point)
                        approx = oracle.reconstruct_memory_adjacency(
                            memory, graphs, len(record.tokens)
                        )
                        report = oracle.error_report(
                            dense_cache[record.doc_id], approx, delta_l, delta_g
                        )
                        rel_errors.append(report.relative_error)
                        sim_evals += memory.metrics.similarity_evals
                        edges_built += len(memory.global_edges) + sum(
                            len(g.edges) for g in graphs
                        )
                    mean_rel = (
                        sum(rel_errors) / len(rel_errors) if rel_errors else 0.0
                    )
                    rows.append(
                        f"{delta_l!r},{delta_g!r},{k},{top_k},"
                        f"{mean_rel!r},{sim_evals},{edges_built}\n"
                    )
    _emit(",".join(SWEEP_COLUMNS) + "\n" + "".join(rows), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segmem",
        description=(
            "Segment-graph memory engine: build tiered memories over token "
            "streams, append incrementally, query them, and verify the "
            "complexity/error theory against dense oracles."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, out_help: str) -> None:
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override all seeds")
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("build", help="build one snapshot per corpus document")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=None, help="override segment size")
    common(p, out_help="output directory for snapshots")
    p.set_defaults(func=cmd_build)
    p.set_defaults(out="snapshots")

    p = sub.add_parser("append", help="stream new segments into a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--corpus", required=True, help="records to append as segments")
    p.add_argument("--interval-ms", type=int, default=100, dest="interval_ms")
    p.add_argument("--metrics-log", default=None, dest="metrics_log")
    p.add_argument("--out", required=True, help="path for the updated snapshot")
    p.set_defaults(func=cmd_append)

    p = sub.add_parser("query", help="answer a query against a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=None, help="top-K retrieval size")
    p.add_argument("--out", default=None, help="write the JSON result here")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="operation-count scaling over document lengths")
    p.add_argument("--lengths", default="1000,2000,4000,8000,16000")
    p.add_argument(
        "--modes", default=f"{oracle.MODE_HIER_SQRT},{oracle.MODE_FULL}",
        help=f"comma list from {oracle.PROBE_MODES}",
    )
    common(p, out_help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="reconstruction error vs the dense oracle")
    p.add_argument("--corpus", required=True)
    common(p, out_help="JSON output path (default stdout)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="grid sweep over thresholds and sizes")
    p.add_argument("--corpus", required=True)
    p.add_argument("--delta-l", default=None, dest="delta_l", help="comma list")
    p.add_argument("--delta-g", default=None, dest="delta_g", help="comma list")
    p.add_argument("--k-grid", default=None, dest="k_grid", help="comma list")
    p.add_argument("--top-k-grid", default=None, dest="top_k_grid", help="comma list")
    common(p, out_help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
