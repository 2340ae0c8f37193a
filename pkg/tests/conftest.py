from __future__ import annotations

import numpy as np
import pytest

from lgr import Config, EntityNode, HashProvider, MemoryGraph, Pose

DIM = 64


@pytest.fixture
def cfg64() -> Config:
    return Config(embedding_dim=DIM)


@pytest.fixture
def provider64() -> HashProvider:
    return HashProvider(seed=11, dim=DIM)


def unit_rows(n: int, dim: int, seed: int) -> np.ndarray:
    """n random unit vectors as float32 rows, deterministic per seed."""
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


def random_graph(
    n: int, cfg: Config, seed: int, duplicate_every: int = 0
) -> MemoryGraph:
    """A restored graph of n nodes with random state.

    With ``duplicate_every`` set, every such node repeats an earlier
    node's embedding and pose exactly, forcing score ties that exercise
    the id tie-break.
    """
    rng = np.random.default_rng(seed + 1)
    emb = unit_rows(n, cfg.embedding_dim, seed)
    pos = rng.uniform(-80.0, 80.0, size=(n, 3))
    times = rng.uniform(0.0, 3600.0, size=n)
    counts = rng.integers(1, 6, size=n)
    nodes = []
    for i in range(n):
        j = i
        if duplicate_every and i and i % duplicate_every == 0:
            j = i - duplicate_every
        nodes.append(
            EntityNode(
                node_id=i + 1,
                label_text=f"entity-{j}",
                embedding=emb[j],
                pose=Pose(pos[j][0], pos[j][1], pos[j][2], 0.0),
                first_seen=float(times[i]),
                last_seen=float(times[j]),
                obs_count=int(counts[i]),
            )
        )
    return MemoryGraph.restore(cfg, nodes)
