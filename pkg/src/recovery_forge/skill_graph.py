"""Symbolic skill graph: value iteration, failure values, and policy extraction.

The graph is a small discrete abstraction of the task. Safe states are chained
toward an absorbing goal by nominal edges; failure modes connect back to safe
states through recovery edges whose success probabilities are learned online.
A failed recovery drops into an absorbing fail sink worth ``-c_fail``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import (
    EmptyInputError,
    InvariantViolationError,
    LengthMismatchError,
    MalformedGraphError,
    NonConvergenceError,
)

DEFAULT_GAMMA = 0.99
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10000


class SymbolKind(str, Enum):
    SAFE = "SafeState"
    FAILURE_MODE = "FailureMode"
    GOAL = "Goal"
    FAIL_SINK = "FailSink"


class EdgeKind(str, Enum):
    NOMINAL = "Nominal"
    RECOVERY = "Recovery"


@dataclass(frozen=True)
class SymbolId:
    index: int
    kind: SymbolKind


@dataclass(frozen=True)
class SkillEdge:
    """Directed edge; ``success_prob`` is 1.0 for nominal edges, q_ij for recoveries."""

    src: int
    dst: int
    kind: EdgeKind
    cost: float
    success_prob: float = 1.0


@dataclass
class SymbolicGraph:
    symbols: list[SymbolId]
    edges: list[SkillEdge]
    c_fail: float
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        self._validate()

    def _validate(self) -> None:
        kinds = [s.kind for s in self.symbols]
        if kinds.count(SymbolKind.GOAL) != 1 or kinds.count(SymbolKind.FAIL_SINK) != 1:
            raise MalformedGraphError("graph needs exactly one Goal and one FailSink")
        if not (0.0 < self.gamma <= 1.0):
            raise MalformedGraphError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.c_fail <= 0.0:
            raise MalformedGraphError(f"c_fail must be positive, got {self.c_fail}")
        indices = [s.index for s in self.symbols]
        if indices != list(range(len(self.symbols))):
            raise MalformedGraphError("symbol indices must be 0..n-1 in order")
        for e in self.edges:
            if not (0 <= e.src < len(self.symbols) and 0 <= e.dst < len(self.symbols)):
                raise MalformedGraphError(f"edge {e} references unknown symbol")
            if not (0.0 <= e.success_prob <= 1.0):
                raise MalformedGraphError(f"edge {e} success_prob outside [0, 1]")
            if e.cost < 0.0:
                raise MalformedGraphError(f"edge {e} has negative cost")
            src_kind = self.symbols[e.src].kind
            if src_kind in (SymbolKind.GOAL, SymbolKind.FAIL_SINK):
                raise MalformedGraphError("absorbing symbols cannot have outgoing edges")
            if e.kind is EdgeKind.RECOVERY and src_kind is not SymbolKind.FAILURE_MODE:
                raise MalformedGraphError("recovery edges must start at a failure mode")
        self._check_nominal_acyclic()

    def _check_nominal_acyclic(self) -> None:
        adj: dict[int, list[int]] = {}
        for e in self.edges:
            if e.kind is EdgeKind.NOMINAL:
                adj.setdefault(e.src, []).append(e.dst)
        state: dict[int, int] = {}  # 0 visiting, 1 done

        def visit(u: int) -> None:
            state[u] = 0
            for v in adj.get(u, []):
                if state.get(v) == 0:
                    raise MalformedGraphError("nominal edges must form an acyclic chain")
                if v not in state:
                    visit(v)
            state[u] = 1

        for u in list(adj):
            if u not in state:
                visit(u)

    # -- convenience lookups -------------------------------------------------

    def goal_index(self) -> int:
        return next(s.index for s in self.symbols if s.kind is SymbolKind.GOAL)

    def fail_sink_index(self) -> int:
        return next(s.index for s in self.symbols if s.kind is SymbolKind.FAIL_SINK)

    def outgoing(self) -> list[list[int]]:
        """Edge indices per symbol, in edge-list order (tie-break order)."""
        out: list[list[int]] = [[] for _ in self.symbols]
        for i, e in enumerate(self.edges):
            out[e.src].append(i)
        return out

    def is_absorbing(self, index: int) -> bool:
        return self.symbols[index].kind in (SymbolKind.GOAL, SymbolKind.FAIL_SINK)

    def with_success_probs(self, probs: dict[int, float]) -> "SymbolicGraph":
        """Copy of the graph with ``edges[i].success_prob`` replaced per ``probs``."""
        edges = [
            replace(e, success_prob=float(probs[i])) if i in probs else e
            for i, e in enumerate(self.edges)
        ]
        return SymbolicGraph(list(self.symbols), edges, self.c_fail, self.gamma)

    # -- JSON ----------------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "symbols": [{"index": s.index, "kind": s.kind.value} for s in self.symbols],
            "edges": [
                {
                    "from": e.src,
                    "to": e.dst,
                    "kind": e.kind.value,
                    "cost": e.cost,
                    "success_prob": e.success_prob,
                }
                for e in self.edges
            ],
            "gamma": self.gamma,
            "c_fail": self.c_fail,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SymbolicGraph":
        try:
            symbols = [SymbolId(int(s["index"]), SymbolKind(s["kind"])) for s in doc["symbols"]]
            edges = [
                SkillEdge(
                    src=int(e["from"]),
                    dst=int(e["to"]),
                    kind=EdgeKind(e["kind"]),
                    cost=float(e["cost"]),
                    success_prob=float(e["success_prob"]),
                )
                for e in doc["edges"]
            ]
            return cls(symbols, edges, c_fail=float(doc["c_fail"]), gamma=float(doc["gamma"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedGraphError(f"bad graph document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SymbolicGraph":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class ValueTable:
    values: tuple[float, ...]

    def value(self, symbol: SymbolId | int) -> float:
        index = symbol.index if isinstance(symbol, SymbolId) else symbol
        return self.values[index]

    def __getitem__(self, symbol: SymbolId | int) -> float:
        return self.value(symbol)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def _backup(graph: SymbolicGraph, edge: SkillEdge, values: np.ndarray) -> float:
    q = edge.success_prob
    return -edge.cost + graph.gamma * (q * values[edge.dst] + (1.0 - q) * (-graph.c_fail))


def value_iteration(
    graph: SymbolicGraph,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ValueTable:
    """Solve the graph by synchronous Bellman sweeps.

    Fixed boundary values: V(goal) = 0 and V(fail sink) = -c_fail. Every other
    symbol takes the max over its outgoing edges of
    ``-cost + gamma * (q * V(to) + (1 - q) * (-c_fail))``.
    """
    if tol <= 0.0:
        raise InvariantViolationError(f"tol must be positive, got {tol}")
    n = len(graph.symbols)
    out = graph.outgoing()
    goal, sink = graph.goal_index(), graph.fail_sink_index()
    interior = [i for i in range(n) if i not in (goal, sink)]
    for i in interior:
        if not out[i]:
            raise MalformedGraphError(f"non-absorbing symbol {i} has no outgoing edge")

    values = np.zeros(n)
    values[goal] = 0.0
    values[sink] = -graph.c_fail
    residual = np.inf
    for _ in range(max_iter):
        new = values.copy()
        for i in interior:
            new[i] = max(_backup(graph, graph.edges[ei], values) for ei in out[i])
        residual = float(np.max(np.abs(new - values)))
        values = new
        if residual <= tol:
            return ValueTable(tuple(float(v) for v in values))
    raise NonConvergenceError(
        f"value iteration residual {residual:.3e} > tol {tol:.3e} after {max_iter} sweeps",
        residual=residual,
    )


def failure_mode_value(q_row, safe_values, c_fail: float) -> float:
    """Best-case value of a failure mode: ``max_j q_j * V_j - (1 - q_j) * c_fail``."""
    q = np.asarray(q_row, dtype=float)
    v = np.asarray(safe_values, dtype=float)
    if q.shape != v.shape:
        raise LengthMismatchError(f"q_row has shape {q.shape}, safe_values {v.shape}")
    if q.size == 0:
        raise EmptyInputError("failure_mode_value needs at least one recovery target")
    return float(np.max(q * v - (1.0 - q) * c_fail))


def failure_value(mode_values, cluster_sizes) -> float:
    """Cluster-size-weighted mean of the failure-mode values."""
    v = np.asarray(mode_values, dtype=float)
    a = np.asarray(cluster_sizes, dtype=float)
    if v.shape != a.shape:
        raise LengthMismatchError(f"{v.shape} mode values vs {a.shape} sizes")
    if v.size == 0:
        raise EmptyInputError("failure_value needs at least one mode")
    if np.any(a <= 0.0):
        raise InvariantViolationError("cluster sizes must be positive")
    return float(np.sum(a * v) / np.sum(a))


def extract_policy(graph: SymbolicGraph, values: ValueTable) -> dict[SymbolId, SkillEdge]:
    """Greedy edge per non-absorbing symbol; ties go to the lowest edge index."""
    out = graph.outgoing()
    arr = values.as_array()
    policy: dict[SymbolId, SkillEdge] = {}
    for symbol in graph.symbols:
        if graph.is_absorbing(symbol.index):
            continue
        if not out[symbol.index]:
            raise MalformedGraphError(f"non-absorbing symbol {symbol.index} has no outgoing edge")
        best_edge, best_val = None, -np.inf
        for ei in out[symbol.index]:
            val = _backup(graph, graph.edges[ei], arr)
            if val > best_val:
                best_edge, best_val = graph.edges[ei], val
        policy[symbol] = best_edge
    return policy
