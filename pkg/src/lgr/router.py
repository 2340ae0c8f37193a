"""Bounded reasoning loop over a registered tool surface.

The router runs a pluggable planner for at most ``max_planner_iterations``
actions per query, feeding every tool result back into the planner's
context. Graph tools are preferred; queries that touch any caption-store
tool at least once are counted toward the vector-fallback rate
(n_vector_calls / n_queries).
"""

from __future__ import annotations

import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

from .captions import CaptionHit, CaptionStore
from .embedding import EmbeddingProvider
from .graph import MemoryGraph
from .model import Config, Pose
from .tools import RetrievalHit, t_position, t_semantic, t_time, time_components_to_seconds

GRAPH_TOOLS = ("t_semantic", "t_position", "t_time")
VECTOR_TOOLS = ("captions_text", "captions_position", "captions_time")


# ----------------------------------------------------------------------
# planner actions and results
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CallTool:
    tool: str
    args: Mapping[str, object]


@dataclass(frozen=True)
class AnswerAction:
    text: str = ""
    pose: Optional[Pose] = None
    time: Optional[float] = None


@dataclass(frozen=True)
class GiveUpAction:
    reason: str = ""


Action = Union[CallTool, AnswerAction, GiveUpAction]


@dataclass(frozen=True)
class ToolResult:
    """Outcome of one tool call, as appended to the planner context."""

    tool: str
    args: dict
    hits: Optional[list]
    error: Optional[str]
    vector: bool

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class Answer:
    """Final response for one query, with the full tool-call trace."""

    text: str
    pose: Optional[Pose]
    time: Optional[float]
    trace: tuple[ToolResult, ...]
    elapsed: float
    gave_up: bool = False
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "pose": self.pose.to_dict() if self.pose else None,
            "time": self.time,
            "gave_up": self.gave_up,
            "truncated": self.truncated,
            "elapsed": self.elapsed,
            "trace": [
                {
                    "tool": r.tool,
                    "args": dict(r.args),
                    "error": r.error,
                    "hits": [
                        h.to_dict() if hasattr(h, "to_dict") else h for h in r.hits
                    ]
                    if r.hits is not None
                    else None,
                }
                for r in self.trace
            ],
        }


class Planner(ABC):
    """Decides the next action from the query and the tool results so far."""

    @abstractmethod
    def next_action(self, query: str, context: Sequence[ToolResult]) -> Action:
        ...


# ----------------------------------------------------------------------
# session accounting
# ----------------------------------------------------------------------


@dataclass
class SessionStats:
    """Counters behind the fallback rate, plus latency telemetry.

    ``n_vector_calls`` counts queries that touched the caption store at
    least once, not individual caption-store calls.
    """

    n_queries: int = 0
    n_vector_calls: int = 0
    latencies: list[float] = field(default_factory=list)
    traces: list[tuple[str, ...]] = field(default_factory=list)

    def record(self, trace: Sequence[str], latency: float, used_vector: bool) -> None:
        self.n_queries += 1
        if used_vector:
            self.n_vector_calls += 1
        self.latencies.append(latency)
        self.traces.append(tuple(trace))

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "n_vector_calls": self.n_vector_calls,
            "latencies": list(self.latencies),
            "traces": [list(t) for t in self.traces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionStats":
        return cls(
            n_queries=int(d.get("n_queries", 0)),
            n_vector_calls=int(d.get("n_vector_calls", 0)),
            latencies=[float(x) for x in d.get("latencies", [])],
            traces=[tuple(t) for t in d.get("traces", [])],
        )


def fallback_percentage(stats: SessionStats) -> float:
    """Fraction of queries that fell back to the caption store."""
    if stats.n_queries < 1:
        raise ValueError("no queries recorded")
    return stats.n_vector_calls / stats.n_queries


# ----------------------------------------------------------------------
# router
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class _ToolEntry:
    name: str
    schema: dict
    handler: Callable[..., list]
    vector: bool


class Router:
    """Dispatches planner actions against the two memory stores.

    The six built-in tools mirror the CLI surface one-to-one; additional
    tools can be registered so an external LLM adapter can mount the same
    loop. Tool handlers are read-only with respect to the stores.
    """

    def __init__(
        self,
        graph: MemoryGraph,
        captions: CaptionStore,
        provider: EmbeddingProvider,
        planner: Planner,
        cfg: Optional[Config] = None,
        stats: Optional[SessionStats] = None,
    ):
        self._graph = graph
        self._captions = captions
        self._provider = provider
        self._planner = planner
        self._cfg = cfg if cfg is not None else graph.cfg
        self.stats = stats if stats is not None else SessionStats()
        self._tools: dict[str, _ToolEntry] = {}
        self._register_builtin_tools()

    # -- tool registry -------------------------------------------------

    def register_tool(
        self,
        name: str,
        schema: dict,
        handler: Callable[..., list],
        vector: bool = False,
    ) -> None:
        """Mount a tool for planners to call. Names must be unique."""
        if name in self._tools:
            raise ValueError(f"tool already registered: {name}")
        self._tools[name] = _ToolEntry(name, dict(schema), handler, vector)

    def tool_schemas(self) -> list[dict]:
        """Machine-readable descriptors, one per tool, in registry order."""
        return [
            {"name": e.name, **e.schema, "vector_store": e.vector}
            for e in self._tools.values()
        ]

    # -- the loop --------------------------------------------------------

    def answer_query(self, query: str) -> Answer:
        """Run the planner loop; never raises on planner or tool trouble.

        Unknown tools and handler errors land in the trace as failed
        results and the loop continues; a planner that never answers is
        cut off after ``max_planner_iterations`` actions with a truncated
        give-up answer.
        """
        t0 = time.perf_counter()
        context: list[ToolResult] = []
        used_vector = False
        outcome: Optional[AnswerAction | GiveUpAction] = None
        truncated = False
        for _ in range(self._cfg.max_planner_iterations):
            action = self._planner.next_action(query, tuple(context))
            if isinstance(action, (AnswerAction, GiveUpAction)):
                outcome = action
                break
            result = self._dispatch(action)
            context.append(result)
            used_vector = used_vector or result.vector
        if outcome is None:
            outcome = GiveUpAction("iteration limit reached")
            truncated = True
        elapsed = time.perf_counter() - t0
        if isinstance(outcome, GiveUpAction):
            answer = Answer(
                text=outcome.reason,
                pose=None,
                time=None,
                trace=tuple(context),
                elapsed=elapsed,
                gave_up=True,
                truncated=truncated,
            )
        else:
            answer = Answer(
                text=outcome.text,
                pose=outcome.pose,
                time=outcome.time,
                trace=tuple(context),
                elapsed=elapsed,
            )
        self.stats.record([r.tool for r in context], elapsed, used_vector)
        return answer

    # -- internals -------------------------------------------------------

    def _dispatch(self, call: CallTool) -> ToolResult:
        entry = self._tools.get(call.tool)
        args = dict(call.args)
        if entry is None:
            return ToolResult(call.tool, args, None, f"unknown tool: {call.tool}", False)
        try:
            hits = entry.handler(**args)
        except Exception as exc:  # planner mistakes must not kill the loop
            return ToolResult(call.tool, args, None, str(exc), entry.vector)
        return ToolResult(call.tool, args, hits, None, entry.vector)

    def _register_builtin_tools(self) -> None:
        g, c, p = self._graph, self._captions, self._provider
        self.register_tool(
            "t_semantic",
            {
                "description": "top-k graph nodes by semantic similarity to a text query",
                "params": [
                    {"name": "query", "type": "string"},
                    {"name": "k", "type": "integer"},
                ],
            },
            lambda query, k: t_semantic(g, p, query, k),
        )
        self.register_tool(
            "t_position",
            {
                "description": "top-k graph nodes nearest to a position (meters)",
                "params": [
                    {"name": "x", "type": "number"},
                    {"name": "y", "type": "number"},
                    {"name": "z", "type": "number"},
                    {"name": "k", "type": "integer"},
                ],
            },
            lambda x, y, z, k: t_position(g, x, y, z, k),
        )
        self.register_tool(
            "t_time",
            {
                "description": "top-k graph nodes last seen closest to hh:mm:ss",
                "params": [
                    {"name": "hh", "type": "integer"},
                    {"name": "mm", "type": "integer"},
                    {"name": "ss", "type": "integer"},
                    {"name": "k", "type": "integer"},
                ],
            },
            lambda hh, mm, ss, k: t_time(g, hh, mm, ss, k),
        )
        self.register_tool(
            "captions_text",
            {
                "description": "top-k scene captions by semantic similarity to a text query",
                "params": [
                    {"name": "query", "type": "string"},
                    {"name": "k", "type": "integer"},
                ],
            },
            lambda query, k: c.query_text(p.embed(query), k),
            vector=True,
        )
        self.register_tool(
            "captions_position",
            {
                "description": "top-k scene captions recorded nearest to a position",
                "params": [
                    {"name": "x", "type": "number"},
                    {"name": "y", "type": "number"},
                    {"name": "z", "type": "number"},
                    {"name": "k", "type": "integer"},
                ],
            },
            lambda x, y, z, k: c.query_position(Pose(x, y, z), k),
            vector=True,
        )
        self.register_tool(
            "captions_time",
            {
                "description": "top-k scene captions recorded closest to a session time (seconds)",
                "params": [
                    {"name": "t", "type": "number"},
                    {"name": "k", "type": "integer"},
                ],
            },
            lambda t, k: c.query_time(t, k),
            vector=True,
        )


# ----------------------------------------------------------------------
# planners
# ----------------------------------------------------------------------

_CLOCK_RE = re.compile(r"\b(\d{1,3}):([0-5][0-9]):([0-5][0-9])\b")
_COORD_RE = re.compile(
    r"near\s*\(?\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)?"
)
_WORD_RE = re.compile(r"[a-z']+")

_STOPWORDS = frozenset(
    """
    a an the and or of is are was were be been being do does did done you your
    yours i me my we us our it its this that these those there here where when
    what which who whom how why find locate show take bring go get near nearest
    closest last latest first see seen saw observe observed look looked watch
    watched spot spotted notice noticed place position location time around at
    in on to from with by for have has had can could would should may might
    any some please tell describe
    """.split()
)


class RuleBasedPlanner(Planner):
    """Deterministic keyword router standing in for an LLM planner.

    The first action always queries the graph. If the best graph hit is
    weak (semantic score below the relevance floor) or absent, the second
    action falls back to the caption store; the answer then comes from the
    top caption record. Queries carrying an explicit hh:mm:ss clock go to
    the temporal tool, queries carrying "near (x, y, z)" coordinates to the
    positional tool, everything else to semantic search over the words
    left once routing keywords are stripped.
    """

    def __init__(self, k: int = 5, relevance_floor: float = 0.45):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self._k = k
        self._floor = relevance_floor

    def next_action(self, query: str, context: Sequence[ToolResult]) -> Action:
        kind, subject, clock, coords = self._classify(query)
        if not context:
            return self._first_call(kind, subject, clock, coords)
        last = context[-1]
        if last.tool in GRAPH_TOOLS:
            if last.ok and last.hits:
                top = last.hits[0]
                if last.tool != "t_semantic" or top.score >= self._floor:
                    return self._answer_from_node(kind, top)
            return self._fallback_call(kind, subject, clock, coords)
        if last.tool in VECTOR_TOOLS:
            if last.ok and last.hits:
                return self._answer_from_caption(last.hits[0])
            return GiveUpAction("no relevant memory found")
        return GiveUpAction(f"unexpected tool in context: {last.tool}")

    # -- routing table ---------------------------------------------------

    def _classify(self, query: str):
        q = query.lower()
        clock = _CLOCK_RE.search(q)
        coords = _COORD_RE.search(q)
        words = _WORD_RE.findall(q)
        subject = " ".join(w for w in words if w not in _STOPWORDS) or q.strip()
        if clock:
            kind = "at_time"
        elif "when" in words:
            kind = "temporal"
        elif coords:
            kind = "position"
        elif any(w in words for w in ("where", "closest", "nearest", "find", "locate")):
            kind = "spatial"
        else:
            kind = "descriptive"
        return kind, subject, clock, coords

    def _first_call(self, kind, subject, clock, coords) -> CallTool:
        if kind == "at_time":
            hh, mm, ss = (int(g) for g in clock.groups())
            return CallTool("t_time", {"hh": hh, "mm": mm, "ss": ss, "k": self._k})
        if kind == "position":
            x, y, z = (float(g) for g in coords.groups())
            return CallTool("t_position", {"x": x, "y": y, "z": z, "k": self._k})
        return CallTool("t_semantic", {"query": subject, "k": self._k})

    def _fallback_call(self, kind, subject, clock, coords) -> CallTool:
        if kind == "at_time":
            hh, mm, ss = (int(g) for g in clock.groups())
            t = time_components_to_seconds(hh, mm, ss)
            return CallTool("captions_time", {"t": t, "k": self._k})
        if kind == "position":
            x, y, z = (float(g) for g in coords.groups())
            return CallTool("captions_position", {"x": x, "y": y, "z": z, "k": self._k})
        return CallTool("captions_text", {"query": subject, "k": self._k})

    @staticmethod
    def _answer_from_node(kind: str, hit: RetrievalHit) -> AnswerAction:
        p = hit.pose
        if kind == "temporal":
            text = f"'{hit.label_text}' was last seen at {hit.last_seen:.1f} s"
        elif kind == "at_time":
            text = f"around that time: '{hit.label_text}' at ({p.x:.2f}, {p.y:.2f}, {p.z:.2f})"
        else:
            text = f"'{hit.label_text}' is at ({p.x:.2f}, {p.y:.2f}, {p.z:.2f})"
        return AnswerAction(text=text, pose=p, time=hit.last_seen)

    @staticmethod
    def _answer_from_caption(hit: CaptionHit) -> AnswerAction:
        return AnswerAction(
            text=f"recalled scene: {hit.text}", pose=hit.pose, time=hit.time
        )


class ScriptedPlanner(Planner):
    """Replays a fixed action sequence per query.

    Intended for offline traces and accounting tests: the action at index
    ``len(context)`` runs next, so scripts read as the literal sequence of
    tool calls followed by a final answer.
    """

    def __init__(
        self,
        scripts: Mapping[str, Sequence[Action]],
        default: Sequence[Action] = (),
    ):
        self._scripts = {q: tuple(a) for q, a in scripts.items()}
        self._default = tuple(default)

    def next_action(self, query: str, context: Sequence[ToolResult]) -> Action:
        script = self._scripts.get(query, self._default)
        step = len(context)
        if step < len(script):
            return script[step]
        return GiveUpAction("script exhausted")
