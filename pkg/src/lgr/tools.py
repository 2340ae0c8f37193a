"""On-graph retrieval tools: semantic, positional, and temporal top-k.

These are the callable surface a planner invokes. Pure top-k, no
relevance threshold: filtering weak hits is planner policy, not tool
policy. All three read one consistent graph snapshot per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingProvider
from .graph import MemoryGraph
from .model import Pose


@dataclass(frozen=True)
class RetrievalHit:
    """One scored node. Score semantics per tool: cosine similarity for
    semantic search (descending), meters for positional (ascending),
    seconds for temporal (ascending)."""

    node_id: int
    label_text: str
    pose: Pose
    last_seen: float
    score: float

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "label_text": self.label_text,
            "pose": self.pose.to_dict(),
            "last_seen": self.last_seen,
            "score": self.score,
        }


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


def _hits(pairs) -> list[RetrievalHit]:
    return [
        RetrievalHit(
            node_id=node.node_id,
            label_text=node.label_text,
            pose=node.pose,
            last_seen=node.last_seen,
            score=score,
        )
        for node, score in pairs
    ]


def t_semantic(
    graph: MemoryGraph, provider: EmbeddingProvider, query: str, k: int
) -> list[RetrievalHit]:
    """k nodes most similar to the query text, best first.

    The query is embedded with the session provider and compared against
    node label embeddings; ties break toward lower node ids. An empty
    graph returns an empty list.
    """
    if not query:
        raise ValueError("query must be non-empty")
    _check_k(k)
    return _hits(graph.top_semantic(provider.embed(query), k))


def t_position(
    graph: MemoryGraph, x: float, y: float, z: float, k: int
) -> list[RetrievalHit]:
    """k nodes nearest to (x, y, z), nearest first. Yaw plays no part."""
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise ValueError(f"coordinates must be finite, got ({x}, {y}, {z})")
    _check_k(k)
    return _hits(graph.top_position(np.array((x, y, z), dtype=np.float64), k))


def time_components_to_seconds(hh: int, mm: int, ss: int) -> float:
    """Convert hh:mm:ss to session seconds.

    Hours above 23 are accepted (epoch-relative time has no day wrap);
    minutes and seconds must sit in [0, 60).
    """
    if hh < 0 or not (0 <= mm < 60) or not (0 <= ss < 60):
        raise ValueError(f"malformed time components: {hh}:{mm}:{ss}")
    return 3600.0 * hh + 60.0 * mm + float(ss)


def t_time(graph: MemoryGraph, hh: int, mm: int, ss: int, k: int) -> list[RetrievalHit]:
    """k nodes whose last-seen time is closest to hh:mm:ss, closest first."""
    t = time_components_to_seconds(hh, mm, ss)
    _check_k(k)
    return _hits(graph.top_time(t, k))
