"""Entity memory graph: gated node creation and running-mean pose updates.

A node records one physical entity as a triplet of label embedding, pose,
and last-seen time. Re-sightings fold into existing nodes when they pass
both gates: cosine similarity strictly above ``delta_e`` and straight-line
distance (x, y, z only) at most ``delta_p``. Frames containing several
instances of the same entity type create exactly as many extra nodes as
memory is missing.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .embedding import row_dots
from .model import Config, Observation, Pose, ensure_valid

_GROW = 64


@dataclass(frozen=True, eq=False)
class EntityNode:
    """One remembered entity.

    ``pose.x/y/z`` is the arithmetic mean of every matched sighting
    position; ``pose.yaw`` and ``embedding`` are fixed at creation.
    """

    node_id: int
    label_text: str
    embedding: np.ndarray
    pose: Pose
    first_seen: float
    last_seen: float
    obs_count: int


@dataclass(frozen=True)
class IngestReport:
    """Per-observation ingest outcome; created and updated never overlap."""

    created: tuple[int, ...]
    updated: tuple[int, ...]
    labels_processed: int


def apply_update(node: EntityNode, p_new: Pose, t_new: float) -> EntityNode:
    """Fold one more sighting into a node.

    Position moves to the running mean weighted by the sighting count; yaw
    and embedding stay fixed; last_seen only moves forward (slightly
    re-ordered logs never rewind it).
    """
    if not p_new.is_finite():
        raise ValueError(f"pose must be finite, got {p_new}")
    if not math.isfinite(t_new):
        raise ValueError(f"time must be finite, got {t_new!r}")
    c = node.obs_count
    pose = Pose(
        x=(c * node.pose.x + p_new.x) / (c + 1),
        y=(c * node.pose.y + p_new.y) / (c + 1),
        z=(c * node.pose.z + p_new.z) / (c + 1),
        yaw=node.pose.yaw,
    )
    return replace(
        node, pose=pose, obs_count=c + 1, last_seen=max(node.last_seen, t_new)
    )


class MemoryGraph:
    """Single-writer, many-reader store of entity nodes.

    All mutation happens under one lock and lands atomically per
    observation: a reader never sees half of a frame's creations or
    updates. Column caches (embeddings in float64, positions, times) back
    the vectorized scans used by retrieval.
    """

    def __init__(self, cfg: Config):
        self._cfg = cfg
        self._lock = threading.Lock()
        self._nodes: dict[int, EntityNode] = {}
        self._next_id = 1
        self._edges: set[tuple[int, int]] = set()
        self._size = 0
        self._emb = np.empty((0, cfg.embedding_dim), dtype=np.float64)
        self._pos = np.empty((0, 3), dtype=np.float64)
        self._time = np.empty(0, dtype=np.float64)
        self._ids = np.empty(0, dtype=np.int64)
        self._row: dict[int, int] = {}

    @property
    def cfg(self) -> Config:
        return self._cfg

    @property
    def next_id(self) -> int:
        with self._lock:
            return self._next_id

    # ------------------------------------------------------------------
    # accessors
    # ------------------------------------------------------------------

    def node_count(self) -> int:
        with self._lock:
            return len(self._nodes)

    def __len__(self) -> int:
        return self.node_count()

    def get_node(self, node_id: int) -> EntityNode:
        with self._lock:
            try:
                return self._nodes[node_id]
            except KeyError:
                raise KeyError(f"no such node: {node_id}") from None

    def all_nodes(self) -> list[EntityNode]:
        """Nodes in creation order (ascending node_id)."""
        with self._lock:
            return list(self._nodes.values())

    def co_observation_edges(self) -> set[tuple[int, int]]:
        """Node pairs seen in one frame. Inert metadata; no tool reads it."""
        with self._lock:
            return set(self._edges)

    # ------------------------------------------------------------------
    # matching and ingest
    # ------------------------------------------------------------------

    def find_matches(self, embedding: np.ndarray, pose: Pose) -> list[int]:
        """Node ids passing both gates, nearest first, id as tie-break."""
        with self._lock:
            return self._find_matches_locked(
                self._check_dim(embedding), pose.position()
            )

    def ingest_observation(self, obs: Observation) -> IngestReport:
        """Apply one observation's labels to the graph.

        Labels are grouped into same-entity groups by transitive closure
        of the similarity gate. For each group of size k matched against
        h pre-ingest nodes: all h are updated and k-h created when k >= h,
        otherwise only the k nearest are updated. A node takes at most one
        update per frame; the earliest group claims it.
        """
        ensure_valid(obs, self._cfg)
        with self._lock:
            if not obs.labels:
                return IngestReport((), (), 0)
            groups = self._group_labels(obs.labels)
            p = obs.pose.position()
            claimed: set[int] = set()
            created: list[int] = []
            updated: list[int] = []
            pending: dict[int, EntityNode] = {}
            fresh: list[EntityNode] = []
            for members in groups:
                rep = obs.labels[members[0]]
                rep_emb = self._check_dim(rep.embedding)
                matched = [
                    nid
                    for nid in self._find_matches_locked(rep_emb, p)
                    if nid not in claimed
                ]
                k = len(members)
                targets = matched if k >= len(matched) else matched[:k]
                for nid in targets:
                    pending[nid] = apply_update(self._nodes[nid], obs.pose, obs.time)
                    claimed.add(nid)
                    updated.append(nid)
                for _ in range(k - len(targets)):
                    node = EntityNode(
                        node_id=self._next_id,
                        label_text=rep.text,
                        embedding=rep.embedding,
                        pose=obs.pose,
                        first_seen=obs.time,
                        last_seen=obs.time,
                        obs_count=1,
                    )
                    self._next_id += 1
                    fresh.append(node)
                    created.append(node.node_id)
            # visibility point: apply the whole frame at once
            for nid, node in pending.items():
                self._nodes[nid] = node
                row = self._row[nid]
                self._pos[row] = (node.pose.x, node.pose.y, node.pose.z)
                self._time[row] = node.last_seen
            for node in fresh:
                self._append(node)
            touched = updated + created
            for i, u in enumerate(touched):
                for v in touched[i + 1 :]:
                    self._edges.add((min(u, v), max(u, v)))
            return IngestReport(tuple(created), tuple(updated), len(obs.labels))

    # ------------------------------------------------------------------
    # vectorized scans used by the retrieval tools
    # ------------------------------------------------------------------

    def top_semantic(self, q: np.ndarray, k: int) -> list[tuple[EntityNode, float]]:
        """k nodes with highest cosine similarity to ``q``, descending."""
        with self._lock:
            if self._size == 0:
                return []
            sims = np.clip(
                row_dots(self._emb[: self._size], self._check_dim(q)), -1.0, 1.0
            )
            order = np.lexsort((self._ids[: self._size], -sims))[:k]
            return [
                (self._nodes[int(self._ids[i])], float(sims[i])) for i in order
            ]

    def top_position(self, xyz: np.ndarray, k: int) -> list[tuple[EntityNode, float]]:
        """k nodes nearest to ``xyz`` in L2 over x, y, z, ascending."""
        with self._lock:
            if self._size == 0:
                return []
            d = np.sqrt(
                ((self._pos[: self._size] - np.asarray(xyz, dtype=np.float64)) ** 2).sum(
                    axis=1
                )
            )
            order = np.lexsort((self._ids[: self._size], d))[:k]
            return [(self._nodes[int(self._ids[i])], float(d[i])) for i in order]

    def top_time(self, t: float, k: int) -> list[tuple[EntityNode, float]]:
        """k nodes whose last_seen is closest to ``t`` in L1, ascending."""
        with self._lock:
            if self._size == 0:
                return []
            dt = np.abs(self._time[: self._size] - float(t))
            order = np.lexsort((self._ids[: self._size], dt))[:k]
            return [(self._nodes[int(self._ids[i])], float(dt[i])) for i in order]

    # ------------------------------------------------------------------
    # persistence support
    # ------------------------------------------------------------------

    @classmethod
    def restore(
        cls,
        cfg: Config,
        nodes: Iterable[EntityNode],
        edges: Iterable[tuple[int, int]] = (),
        next_id: int | None = None,
    ) -> "MemoryGraph":
        """Rebuild a graph from persisted node state without re-ingesting."""
        g = cls(cfg)
        ordered = sorted(nodes, key=lambda n: n.node_id)
        seen: set[int] = set()
        for node in ordered:
            if node.node_id in seen:
                raise ValueError(f"duplicate node_id {node.node_id}")
            seen.add(node.node_id)
            g._check_dim(node.embedding)
            g._append(node)
        g._edges = {(min(u, v), max(u, v)) for u, v in edges}
        g._next_id = next_id if next_id is not None else (max(seen) + 1 if seen else 1)
        return g

    # ------------------------------------------------------------------
    # internals (call with the lock held)
    # ------------------------------------------------------------------

    def _check_dim(self, embedding: np.ndarray) -> np.ndarray:
        e = np.asarray(embedding, dtype=np.float64)
        if e.ndim != 1 or e.shape[0] != self._cfg.embedding_dim:
            raise ValueError(
                f"embedding dimension mismatch: expected {self._cfg.embedding_dim}, "
                f"got {e.shape}"
            )
        return e

    def _find_matches_locked(self, e: np.ndarray, p: np.ndarray) -> list[int]:
        if self._size == 0:
            return []
        sims = np.clip(row_dots(self._emb[: self._size], e), -1.0, 1.0)
        d = np.sqrt(((self._pos[: self._size] - p) ** 2).sum(axis=1))
        hit = np.nonzero((sims > self._cfg.delta_e) & (d <= self._cfg.delta_p))[0]
        if hit.size == 0:
            return []
        order = np.lexsort((self._ids[hit], d[hit]))
        return [int(self._ids[hit[i]]) for i in order]

    def _group_labels(self, labels: Sequence) -> list[list[int]]:
        """Same-entity groups by transitive closure of the similarity gate.

        Groups are ordered by first appearance; the first member is the
        group representative.
        """
        n = len(labels)
        parent = list(range(n))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        mat = np.stack([self._check_dim(lab.embedding) for lab in labels])
        sims = np.clip(mat @ mat.T, -1.0, 1.0)
        for i in range(n):
            for j in range(i + 1, n):
                if sims[i, j] > self._cfg.delta_e:
                    parent[find(i)] = find(j)
        groups: dict[int, list[int]] = {}
        for i in range(n):
            groups.setdefault(find(i), []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])

    def _append(self, node: EntityNode) -> None:
        if self._size == self._emb.shape[0]:
            extra = max(_GROW, self._size)
            self._emb = np.concatenate(
                [self._emb, np.empty((extra, self._cfg.embedding_dim), np.float64)]
            )
            self._pos = np.concatenate([self._pos, np.empty((extra, 3), np.float64)])
            self._time = np.concatenate([self._time, np.empty(extra, np.float64)])
            self._ids = np.concatenate([self._ids, np.empty(extra, np.int64)])
        row = self._size
        self._emb[row] = node.embedding.astype(np.float64)
        self._pos[row] = (node.pose.x, node.pose.y, node.pose.z)
        self._time[row] = node.last_seen
        self._ids[row] = node.node_id
        self._row[node.node_id] = row
        self._nodes[node.node_id] = node
        self._size += 1
