"""Training-budget allocation across recovery skills.

Round-robin is the baseline. The upper-confidence-limit strategy keeps a short
window of each recovery's success-rate history, bounds its rate of improvement
with a one-sided Student-t limit, and trains whichever recovery would raise the
expected failure-state value the most if that optimistic improvement came true.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .errors import (
    InsufficientHistoryError,
    InvalidDfError,
    InvalidProbabilityError,
    InvariantViolationError,
)
from .skill_graph import (
    EdgeKind,
    SkillEdge,
    SymbolicGraph,
    SymbolId,
    SymbolKind,
    failure_value,
    value_iteration,
)

DEFAULT_ALPHA = 0.95
DEFAULT_WINDOW = 3
DEFAULT_INIT_ROUNDS = 2  # round-robin passes before UCL selection kicks in
DEFAULT_EPISODES_PER_SELECTION = 1


# -- student-t quantile ----------------------------------------------------------


def _t_cdf(x: float, df: int) -> float:
    if x == 0.0:
        return 0.5
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + x * x))
    return 1.0 - tail if x > 0.0 else tail


def t_quantile(p: float, df: int) -> float:
    """Inverse Student-t CDF by bisection on the incomplete-beta CDF (|err| <= 1e-8)."""
    if not (0.0 < p < 1.0):
        raise InvalidProbabilityError(f"p must be in (0, 1), got {p}")
    if int(df) != df or df < 1:
        raise InvalidDfError(f"df must be a positive integer, got {df}")
    df = int(df)
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df)
    lo, hi = 0.0, 1.0
    while _t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e15:
            break
    while hi - lo > 1e-8:
        mid = 0.5 * (lo + hi)
        if _t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- UCL bookkeeping -----------------------------------------------------------


class UclQueue:
    """Bounded FIFO of success estimates; insertion evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity < 2:
            raise InvariantViolationError("UCL queue needs capacity >= 2")
        self._values: deque[float] = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._values.maxlen

    @property
    def values(self) -> list[float]:
        return list(self._values)

    def insert(self, value: float) -> None:
        self._values.append(float(value))

    def __len__(self) -> int:
        return len(self._values)


def compute_ucl(queue: UclQueue, current_q: float, alpha: float) -> float:
    """Optimistic success rate after one more training round.

    Forward differences of the queue estimate the rate of improvement; the
    one-sided t bound is added on top. A single difference gets s = 0 (the t
    quantile is undefined at zero degrees of freedom). The improvement is
    floored at zero and the result capped at 1.
    """
    values = queue.values
    if len(values) < 2:
        raise InsufficientHistoryError(f"need >= 2 queue entries, got {len(values)}")
    diffs = np.diff(np.asarray(values, dtype=float))
    n = diffs.size
    s = float(np.std(diffs, ddof=1)) if n >= 2 else 0.0
    t = t_quantile((1.0 + alpha) / 2.0, max(n - 1, 1))
    delta_ucl = float(diffs.mean()) + t * s / np.sqrt(n)
    return min(current_q + max(delta_ucl, 0.0), 1.0)


# -- allocation problem ----------------------------------------------------------


@dataclass(frozen=True)
class AllocatorConfig:
    alpha: float = DEFAULT_ALPHA
    window: int = DEFAULT_WINDOW
    init_rounds: int = DEFAULT_INIT_ROUNDS
    episodes_per_selection: int = DEFAULT_EPISODES_PER_SELECTION
    budget: int = 0


class RecoveryGraph:
    """Symbolic graph template for n failure modes x m recovery targets.

    Owns the mapping from (mode i, target j) to the recovery edge index, plus
    the cluster sizes used to weight the failure value.
    """

    def __init__(
        self,
        graph: SymbolicGraph,
        mode_indices: list[int],
        target_indices: list[int],
        mode_sizes,
        recovery_edge_index: dict[tuple[int, int], int],
    ):
        sizes = np.asarray(mode_sizes, dtype=float)
        if sizes.size != len(mode_indices) or np.any(sizes <= 0.0):
            raise InvariantViolationError("one positive size per failure mode required")
        self.graph = graph
        self.mode_indices = list(mode_indices)
        self.target_indices = list(target_indices)
        self.mode_sizes = sizes
        self.recovery_edge_index = dict(recovery_edge_index)

    @classmethod
    def chain(
        cls,
        safe_costs: list[float],
        n_modes: int,
        mode_sizes,
        c_fail: float | None = None,
        gamma: float = 1.0,
        recovery_cost: float = 0.0,
    ) -> "RecoveryGraph":
        """Standard shape: a nominal chain of k safe states into the goal, with
        every failure mode connected to all k preconditions plus the goal."""
        k = len(safe_costs)
        if c_fail is None:
            c_fail = 100.0 * max(safe_costs)
        symbols = [SymbolId(i, SymbolKind.SAFE) for i in range(k)]
        symbols.append(SymbolId(k, SymbolKind.GOAL))
        symbols.append(SymbolId(k + 1, SymbolKind.FAIL_SINK))
        mode_indices = [k + 2 + i for i in range(n_modes)]
        symbols += [SymbolId(idx, SymbolKind.FAILURE_MODE) for idx in mode_indices]
        target_indices = list(range(k)) + [k]
        edges = [SkillEdge(i, i + 1, EdgeKind.NOMINAL, float(safe_costs[i])) for i in range(k)]
        recovery_edge_index: dict[tuple[int, int], int] = {}
        for i, mode_idx in enumerate(mode_indices):
            for j, target_idx in enumerate(target_indices):
                recovery_edge_index[(i, j)] = len(edges)
                edges.append(
                    SkillEdge(mode_idx, target_idx, EdgeKind.RECOVERY, recovery_cost, 0.0)
                )
        graph = SymbolicGraph(symbols, edges, c_fail=c_fail, gamma=gamma)
        return cls(graph, mode_indices, target_indices, mode_sizes, recovery_edge_index)

    @property
    def n_modes(self) -> int:
        return len(self.mode_indices)

    @property
    def n_targets(self) -> int:
        return len(self.target_indices)

    def with_q(self, q: np.ndarray) -> SymbolicGraph:
        probs = {
            edge_idx: float(np.clip(q[i, j], 0.0, 1.0))
            for (i, j), edge_idx in self.recovery_edge_index.items()
        }
        return self.graph.with_success_probs(probs)

    def failure_value_for(self, q: np.ndarray) -> float:
        table = value_iteration(self.with_q(q))
        mode_values = [table[idx] for idx in self.mode_indices]
        return failure_value(mode_values, self.mode_sizes)


@dataclass
class AllocatorState:
    q: np.ndarray
    q_ucl: np.ndarray
    queues: list[list[UclQueue]]
    train_counts: np.ndarray
    round: int
    config: AllocatorConfig

    @classmethod
    def fresh(cls, n_modes: int, n_targets: int, config: AllocatorConfig) -> "AllocatorState":
        return cls(
            q=np.zeros((n_modes, n_targets)),
            q_ucl=np.zeros((n_modes, n_targets)),
            queues=[[UclQueue(config.window) for _ in range(n_targets)] for _ in range(n_modes)],
            train_counts=np.zeros((n_modes, n_targets), dtype=int),
            round=0,
            config=config,
        )


def optimistic_failure_value(
    state: AllocatorState, graph: RecoveryGraph, i: int, j: int
) -> float:
    """Failure value with q(i, j) swapped for its upper confidence limit."""
    q = state.q.copy()
    q[i, j] = state.q_ucl[i, j]
    return graph.failure_value_for(q)


def select_value_ucl(state: AllocatorState, graph: RecoveryGraph) -> tuple[int, int]:
    """Least-trained recovery during initialization, then argmax optimistic FV."""
    n, m = state.train_counts.shape
    if np.min(state.train_counts) < state.config.init_rounds:
        flat = int(np.argmin(state.train_counts))  # argmin is lexicographic on ties
        return divmod(flat, m)
    best, best_fv = (0, 0), -np.inf
    for i in range(n):
        for j in range(m):
            fv = optimistic_failure_value(state, graph, i, j)
            if fv > best_fv:
                best, best_fv = (i, j), fv
    return best


@dataclass
class RoundRecord:
    round: int
    strategy: str
    i: int
    j: int
    q_new: float
    q_ucl: float
    fv: float


@dataclass
class AllocationResult:
    state: AllocatorState
    fv_trace: list[float]
    counts: np.ndarray
    rounds: list[RoundRecord]


def run_allocation_loop(
    strategy: str,
    graph: RecoveryGraph,
    trainer,
    budget: int,
    config: AllocatorConfig | None = None,
) -> AllocationResult:
    """Shared allocation loop.

    ``trainer(i, j, round_index)`` performs one selection's worth of training
    (eta episodes) and returns a fresh success-rate estimate for recovery (i, j).
    The q_best rule keeps estimates monotone, which with the monotone Bellman
    operator keeps the failure-value trace non-decreasing; that is asserted on
    every run.
    """
    if strategy not in ("rr", "ucl"):
        raise InvariantViolationError(f"unknown strategy {strategy!r}")
    n, m = graph.n_modes, graph.n_targets
    if config is None:
        config = AllocatorConfig()
    if strategy == "ucl" and budget < config.init_rounds * n * m:
        raise InvariantViolationError(
            f"budget {budget} cannot cover {config.init_rounds} x {n * m} init rounds"
        )
    state = AllocatorState.fresh(n, m, config)
    fv_trace: list[float] = []
    rounds: list[RoundRecord] = []
    prev_fv = -np.inf
    for r in range(budget):
        if strategy == "rr":
            i, j = divmod(r % (n * m), m)
        else:
            i, j = select_value_ucl(state, graph)
        q_new = float(trainer(i, j, r))
        q_best = max(q_new, float(state.q[i, j]))
        state.q[i, j] = q_best
        state.queues[i][j].insert(q_best)
        if len(state.queues[i][j]) >= 2:
            state.q_ucl[i, j] = compute_ucl(state.queues[i][j], q_best, config.alpha)
        else:
            state.q_ucl[i, j] = q_best
        state.train_counts[i, j] += 1
        state.round = r + 1
        fv = graph.failure_value_for(state.q)
        if fv < prev_fv - 1e-9:
            raise InvariantViolationError(
                f"failure value decreased at round {r}: {prev_fv} -> {fv}"
            )
        prev_fv = fv
        fv_trace.append(fv)
        rounds.append(
            RoundRecord(r, strategy, i, j, q_new, float(state.q_ucl[i, j]), fv)
        )
    return AllocationResult(state, fv_trace, state.train_counts.copy(), rounds)
