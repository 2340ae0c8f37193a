"""Command-line surface: ingest a log, query a snapshot, evaluate, stats.

Precedence for engine parameters: built-in defaults, then the config file
(--config or $LGR_CONFIG), then command-line flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Optional, Sequence

from .embedding import EmbeddingProvider, FixtureProvider, HashProvider, load_fixture_table
from .evalharness import evaluate, load_qa_items
from .logio import LogParseError, load_log
from .model import Config, Pose
from .router import Router, RuleBasedPlanner, fallback_percentage
from .snapshot import SessionState, SnapshotError, load_snapshot, save_snapshot
from .tools import t_position, t_semantic, t_time

CONFIG_ENV_VAR = "LGR_CONFIG"

QUERY_TOOLS = (
    "semantic",
    "position",
    "time",
    "captions-text",
    "captions-position",
    "captions-time",
    "route",
)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (also $LGR_CONFIG)")
    parser.add_argument("--delta-p", type=float, help="spatial dedup radius, meters")
    parser.add_argument("--delta-e", type=float, help="semantic dedup threshold")
    parser.add_argument("--period", type=float, help="subsampling period, seconds")
    parser.add_argument("--k", type=int, help="default top-k")
    parser.add_argument("--seed", type=int, default=0, help="hash-provider seed")
    parser.add_argument(
        "--provider",
        default=None,
        help="embedding provider: 'hash' or 'fixture:<table path>'",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgr",
        description="dual-level memory engine: entity graph + caption store",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build both stores from a log")
    p_ingest.add_argument("log", help="observation log (JSON lines)")
    p_ingest.add_argument("--out", required=True, help="snapshot output path")
    _common_flags(p_ingest)

    p_query = sub.add_parser("query", help="run one retrieval tool on a snapshot")
    p_query.add_argument("snapshot")
    p_query.add_argument("tool", help="one of: " + ", ".join(QUERY_TOOLS))
    p_query.add_argument("--query", help="text query (semantic, captions-text, route)")
    p_query.add_argument("--x", type=float)
    p_query.add_argument("--y", type=float)
    p_query.add_argument("--z", type=float, default=0.0)
    p_query.add_argument("--hh", type=int)
    p_query.add_argument("--mm", type=int)
    p_query.add_argument("--ss", type=int)
    p_query.add_argument("--t", type=float, help="session seconds (captions-time)")
    p_query.add_argument(
        "--update-snapshot",
        action="store_true",
        help="persist updated session stats back into the snapshot (route only)",
    )
    _common_flags(p_query)

    p_eval = sub.add_parser("eval", help="score QA items against a snapshot")
    p_eval.add_argument("snapshot")
    p_eval.add_argument("qa", help="QA items file (JSON lines)")
    p_eval.add_argument("--format", choices=("json", "table"), default="json")
    p_eval.add_argument(
        "--update-snapshot",
        action="store_true",
        help="persist updated session stats back into the snapshot",
    )
    _common_flags(p_eval)

    p_stats = sub.add_parser("stats", help="print store sizes and fallback rate")
    p_stats.add_argument("snapshot")
    _common_flags(p_stats)

    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    values = Config().to_dict()
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
        values.update(Config.from_dict(file_values).to_dict())
    overrides = {
        "delta_p": getattr(args, "delta_p", None),
        "delta_e": getattr(args, "delta_e", None),
        "subsample_period": getattr(args, "period", None),
        "default_k": getattr(args, "k", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config.from_dict(values)


def resolve_provider(spec: Optional[str], cfg: Config, seed: int) -> EmbeddingProvider:
    spec = spec or "hash"
    if spec == "hash":
        return HashProvider(seed=seed, dim=cfg.embedding_dim)
    if spec.startswith("fixture:"):
        table_path = spec.split(":", 1)[1]
        if not table_path:
            raise ValueError("fixture provider needs a path: fixture:<table path>")
        table = load_fixture_table(table_path)
        fallback = HashProvider(seed=seed, dim=cfg.embedding_dim)
        return FixtureProvider(table, fallback=fallback, dim=cfg.embedding_dim)
    raise ValueError(f"unknown provider spec: {spec!r}")


def _print(obj: object) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    provider = resolve_provider(args.provider, cfg, args.seed)
    state = SessionState.new(cfg, provider)
    t0 = time.perf_counter()
    observations = created = updated = inserted = 0
    for obs in load_log(args.log, cfg, provider):
        report = state.graph.ingest_observation(obs)
        created += len(report.created)
        updated += len(report.updated)
        if obs.caption is not None:
            state.captions.insert_caption(obs)
            inserted += 1
        observations += 1
    save_snapshot(state, args.out)
    _print(
        {
            "observations": observations,
            "nodes_created": created,
            "node_updates": updated,
            "captions_inserted": inserted,
            "wall_time_s": round(time.perf_counter() - t0, 6),
            "snapshot": args.out,
        }
    )
    return 0


def _require(args: argparse.Namespace, names: Sequence[str], tool: str) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValueError(f"tool {tool!r} needs --" + ", --".join(missing))


def cmd_query(args: argparse.Namespace) -> int:
    if args.tool not in QUERY_TOOLS:
        print(f"unknown tool: {args.tool!r} (expected one of {', '.join(QUERY_TOOLS)})",
              file=sys.stderr)
        return 2
    state = load_snapshot(args.snapshot)
    cfg = state.cfg
    provider = state.provider
    if args.provider is not None:
        provider = resolve_provider(args.provider, cfg, args.seed)
    k = args.k if args.k is not None else cfg.default_k
    tool = args.tool
    if tool == "semantic":
        _require(args, ("query",), tool)
        hits = t_semantic(state.graph, provider, args.query, k)
        _print([h.to_dict() for h in hits])
    elif tool == "position":
        _require(args, ("x", "y"), tool)
        hits = t_position(state.graph, args.x, args.y, args.z, k)
        _print([h.to_dict() for h in hits])
    elif tool == "time":
        _require(args, ("hh", "mm", "ss"), tool)
        hits = t_time(state.graph, args.hh, args.mm, args.ss, k)
        _print([h.to_dict() for h in hits])
    elif tool == "captions-text":
        _require(args, ("query",), tool)
        hits = state.captions.query_text(provider.embed(args.query), k)
        _print([h.to_dict() for h in hits])
    elif tool == "captions-position":
        _require(args, ("x", "y"), tool)
        hits = state.captions.query_position(Pose(args.x, args.y, args.z), k)
        _print([h.to_dict() for h in hits])
    elif tool == "captions-time":
        _require(args, ("t",), tool)
        hits = state.captions.query_time(args.t, k)
        _print([h.to_dict() for h in hits])
    else:  # route
        _require(args, ("query",), tool)
        router = Router(
            state.graph,
            state.captions,
            provider,
            RuleBasedPlanner(k=k),
            cfg=cfg,
            stats=state.stats,
        )
        answer = router.answer_query(args.query)
        _print(answer.to_dict())
        if args.update_snapshot:
            save_snapshot(state, args.snapshot)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    state = load_snapshot(args.snapshot)
    items = load_qa_items(args.qa)
    k = args.k if args.k is not None else state.cfg.default_k
    router = Router(
        state.graph,
        state.captions,
        state.provider,
        RuleBasedPlanner(k=k),
        cfg=state.cfg,
        stats=state.stats,
    )
    report = evaluate(router, items)
    if args.format == "table":
        print(report.to_table())
    else:
        _print(report.to_dict())
    if args.update_snapshot:
        save_snapshot(state, args.snapshot)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    state = load_snapshot(args.snapshot)
    stats = state.stats
    _print(
        {
            "nodes": state.graph.node_count(),
            "caption_records": state.captions.record_count(),
            "n_queries": stats.n_queries,
            "n_vector_calls": stats.n_vector_calls,
            "fallback": fallback_percentage(stats) if stats.n_queries else None,
        }
    )
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "ingest": cmd_ingest,
        "query": cmd_query,
        "eval": cmd_eval,
        "stats": cmd_stats,
    }
    try:
        return handlers[args.command](args)
    except (LogParseError, SnapshotError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
