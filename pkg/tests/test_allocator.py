"""Allocator tests: t quantiles, UCL arithmetic, selection, and the loop."""

import numpy as np
import pytest
from scipy import integrate, special

from recovery_forge.allocator import (
    AllocatorConfig,
    AllocatorState,
    RecoveryGraph,
    UclQueue,
    compute_ucl,
    optimistic_failure_value,
    run_allocation_loop,
    select_value_ucl,
    t_quantile,
)
from recovery_forge.errors import (
    InsufficientHistoryError,
    InvalidDfError,
    InvalidProbabilityError,
    InvariantViolationError,
)
from recovery_forge.skill_graph import (
    EdgeKind,
    SkillEdge,
    SymbolicGraph,
    SymbolId,
    SymbolKind,
)


# -- t_quantile ---------------------------------------------------------------


def test_t_quantile_median_is_zero():
    for df in (1, 2, 10, 1000):
        assert t_quantile(0.5, df) == 0.0


def test_t_quantile_matches_published_tables():
    assert t_quantile(0.975, 1) == pytest.approx(12.706, abs=1e-3)
    assert t_quantile(0.975, 2) == pytest.approx(4.303, abs=1e-3)
    assert t_quantile(0.975, 10) == pytest.approx(2.228, abs=1e-3)


def test_t_quantile_normal_limit():
    assert t_quantile(0.975, 10**6) == pytest.approx(1.960, abs=1e-3)


def test_t_quantile_symmetry():
    assert t_quantile(0.025, 7) == pytest.approx(-t_quantile(0.975, 7), abs=1e-8)


def test_t_quantile_against_pdf_quadrature():
    # independent check: integrate the t density up to the returned quantile
    for df in (3, 8):
        for p in (0.6, 0.9, 0.99):
            x = t_quantile(p, df)
            norm = special.gamma((df + 1) / 2) / (np.sqrt(df * np.pi) * special.gamma(df / 2))
            pdf = lambda u: norm * (1 + u * u / df) ** (-(df + 1) / 2)
            mass, _ = integrate.quad(pdf, -np.inf, x)
            assert mass == pytest.approx(p, abs=1e-6)


def test_t_quantile_input_validation():
    with pytest.raises(InvalidProbabilityError):
        t_quantile(0.0, 3)
    with pytest.raises(InvalidProbabilityError):
        t_quantile(1.2, 3)
    with pytest.raises(InvalidDfError):
        t_quantile(0.9, 0)
    with pytest.raises(InvalidDfError):
        t_quantile(0.9, 2.5)


# -- compute_ucl ----------------------------------------------------------------


def _queue(values, capacity=3):
    q = UclQueue(capacity)
    for v in values:
        q.insert(v)
    return q


def test_ucl_zero_variance_diffs_add_mean_exactly():
    assert compute_ucl(_queue([0.2, 0.3, 0.4]), 0.4, alpha=0.95) == pytest.approx(0.5)


def test_ucl_plateau_keeps_current_estimate():
    assert compute_ucl(_queue([0.5, 0.5]), 0.5, alpha=0.95) == pytest.approx(0.5)


def test_ucl_single_wide_interval_caps_at_one():
    # diffs [0.3, 0.1]: mean 0.2, s ~ 0.1414, t(0.975, 1) = 12.706 -> far above 1
    assert compute_ucl(_queue([0.1, 0.4, 0.5]), 0.5, alpha=0.95) == pytest.approx(1.0)


def test_ucl_negative_trend_is_floored():
    assert compute_ucl(_queue([0.5, 0.4, 0.3]), 0.5, alpha=0.95) == pytest.approx(0.5)


def test_ucl_requires_history():
    with pytest.raises(InsufficientHistoryError):
        compute_ucl(_queue([0.5]), 0.5, alpha=0.95)


def test_queue_evicts_oldest():
    q = _queue([0.1, 0.2, 0.3, 0.4], capacity=3)
    assert q.values == [0.2, 0.3, 0.4]


# -- optimistic failure value ------------------------------------------------------


def two_mode_two_target_graph():
    """Hand example: two safe targets worth -1 and -3, two modes of size 1."""
    symbols = [
        SymbolId(0, SymbolKind.SAFE),
        SymbolId(1, SymbolKind.SAFE),
        SymbolId(2, SymbolKind.GOAL),
        SymbolId(3, SymbolKind.FAIL_SINK),
        SymbolId(4, SymbolKind.FAILURE_MODE),
        SymbolId(5, SymbolKind.FAILURE_MODE),
    ]
    edges = [
        SkillEdge(0, 2, EdgeKind.NOMINAL, 1.0),
        SkillEdge(1, 2, EdgeKind.NOMINAL, 3.0),
    ]
    index = {}
    for i, mode in enumerate((4, 5)):
        for j, target in enumerate((0, 1)):
            index[(i, j)] = len(edges)
            edges.append(SkillEdge(mode, target, EdgeKind.RECOVERY, 0.0, 0.0))
    graph = SymbolicGraph(symbols, edges, c_fail=10.0, gamma=1.0)
    return RecoveryGraph(graph, [4, 5], [0, 1], [1.0, 1.0], index)


def test_optimistic_fv_hand_example():
    rgraph = two_mode_two_target_graph()
    state = AllocatorState.fresh(2, 2, AllocatorConfig())
    state.q_ucl[0, 0] = 0.5
    assert optimistic_failure_value(state, rgraph, 0, 0) == pytest.approx(-7.75)


def test_optimistic_fv_equals_current_when_ucl_equals_q():
    rgraph = RecoveryGraph.chain([1.0, 0.5], 3, [2.0, 1.0, 1.0], c_fail=10.0)
    rng = np.random.default_rng(0)
    state = AllocatorState.fresh(3, 3, AllocatorConfig())
    state.q = rng.uniform(0, 1, size=(3, 3))
    state.q_ucl = state.q.copy()
    current = rgraph.failure_value_for(state.q)
    for i in range(3):
        for j in range(3):
            assert optimistic_failure_value(state, rgraph, i, j) == pytest.approx(current)


def test_optimistic_fv_never_below_current():
    rgraph = RecoveryGraph.chain([1.0, 0.5], 2, [1.0, 1.0], c_fail=10.0)
    rng = np.random.default_rng(4)
    for _ in range(25):
        state = AllocatorState.fresh(2, 3, AllocatorConfig())
        state.q = rng.uniform(0, 1, size=(2, 3))
        state.q_ucl = np.minimum(1.0, state.q + rng.uniform(0, 0.5, size=(2, 3)))
        current = rgraph.failure_value_for(state.q)
        for i in range(2):
            for j in range(3):
                assert optimistic_failure_value(state, rgraph, i, j) >= current - 1e-9


# -- selection ----------------------------------------------------------------------


def test_fresh_state_selects_first_recovery():
    rgraph = RecoveryGraph.chain([1.0], 2, [1.0, 1.0])
    state = AllocatorState.fresh(2, 2, AllocatorConfig(init_rounds=2))
    assert select_value_ucl(state, rgraph) == (0, 0)


def test_selection_prefers_improving_skill_after_init():
    rgraph = two_mode_two_target_graph()
    state = AllocatorState.fresh(2, 2, AllocatorConfig(init_rounds=1))
    state.train_counts[:] = 1
    state.q[:] = 0.1
    state.q_ucl[:] = 0.1  # plateaus everywhere ...
    state.q_ucl[1, 0] = 0.6  # ... except one promising recovery
    assert select_value_ucl(state, rgraph) == (1, 0)


def test_selection_tie_breaks_lexicographically():
    rgraph = two_mode_two_target_graph()
    state = AllocatorState.fresh(2, 2, AllocatorConfig(init_rounds=1))
    state.train_counts[:] = 1
    assert select_value_ucl(state, rgraph) == (0, 0)


# -- allocation loop ------------------------------------------------------------------


class CurveTrainer:
    """Latent saturating learning curves; the loop sees noiseless estimates."""

    def __init__(self, q_max, tau):
        self.q_max = np.asarray(q_max, dtype=float)
        self.tau = np.asarray(tau, dtype=float)
        self.t = np.zeros_like(self.q_max, dtype=int)

    def __call__(self, i, j, round_index):
        self.t[i, j] += 1
        return self.q_max[i, j] * (1.0 - np.exp(-self.t[i, j] / self.tau[i, j]))


def test_round_robin_trains_everything_equally():
    rgraph = RecoveryGraph.chain([1.0, 0.5], 2, [1.0, 1.0], c_fail=10.0)
    trainer = CurveTrainer(np.full((2, 3), 0.5), np.full((2, 3), 3.0))
    result = run_allocation_loop("rr", rgraph, trainer, budget=2 * 3 * 4)
    np.testing.assert_array_equal(result.counts, np.full((2, 3), 4))


def test_fv_trace_is_monotone():
    rgraph = RecoveryGraph.chain([1.0, 0.5], 2, [1.0, 2.0], c_fail=10.0)
    rng = np.random.default_rng(8)
    trainer = CurveTrainer(rng.uniform(0, 1, (2, 3)), rng.uniform(1, 6, (2, 3)))
    for strategy in ("rr", "ucl"):
        result = run_allocation_loop(strategy, rgraph, trainer, budget=30)
        trace = np.asarray(result.fv_trace)
        assert np.all(np.diff(trace) >= -1e-9)


def test_ucl_init_phase_is_round_robin_order():
    rgraph = RecoveryGraph.chain([1.0], 2, [1.0, 1.0], c_fail=10.0)
    trainer = CurveTrainer(np.full((2, 2), 0.3), np.full((2, 2), 2.0))
    config = AllocatorConfig(init_rounds=2)
    result = run_allocation_loop("ucl", rgraph, trainer, budget=8, config=config)
    order = [(rec.i, rec.j) for rec in result.rounds]
    assert order == [(0, 0), (0, 1), (1, 0), (1, 1)] * 2


def test_ucl_concentrates_on_the_dominant_curve():
    # while the dominant curve is still improving, it should absorb most of the
    # post-init budget; a 60-round run keeps the post-init phase inside that window
    rgraph = RecoveryGraph.chain([1.0, 0.5, 0.25], 5, np.full(5, 1.0), c_fail=10.0)
    q_max = np.full((5, 4), 0.05)
    q_max[2, 1] = 0.9
    trainer = CurveTrainer(q_max, np.full((5, 4), 3.0))
    config = AllocatorConfig(init_rounds=2)
    budget = 60
    result = run_allocation_loop("ucl", rgraph, trainer, budget=budget, config=config)
    post_init = budget - config.init_rounds * 20
    extra = result.counts - config.init_rounds
    assert extra[2, 1] >= 0.6 * post_init


def test_ucl_top3_concentration_over_a_long_run():
    rgraph = RecoveryGraph.chain([1.0, 0.5, 0.25], 5, np.full(5, 1.0), c_fail=10.0)
    rng = np.random.default_rng(13)
    q_max = rng.uniform(0.0, 0.2, size=(5, 4))
    for i in range(5):
        q_max[i, rng.integers(0, 4)] = rng.uniform(0.55, 0.9)
    trainer = CurveTrainer(q_max, rng.uniform(2, 10, size=(5, 4)))
    config = AllocatorConfig(init_rounds=2)
    budget = 100
    result = run_allocation_loop("ucl", rgraph, trainer, budget=budget, config=config)
    post_init = budget - config.init_rounds * 20
    extra = result.counts - config.init_rounds
    top3 = np.sort(extra.ravel())[-3:].sum()
    assert top3 >= 0.5 * post_init
    rr = run_allocation_loop("rr", rgraph, CurveTrainer(q_max, np.full((5, 4), 3.0)), budget)
    assert np.ptp(rr.counts) <= 1  # round-robin stays uniform


def test_allocation_is_reproducible():
    rgraph = RecoveryGraph.chain([1.0, 0.5], 2, [1.0, 1.0], c_fail=10.0)

    def make_trainer():
        rng = np.random.default_rng(17)
        base = CurveTrainer(rng.uniform(0, 1, (2, 3)), rng.uniform(1, 5, (2, 3)))
        noise = np.random.default_rng(99)

        def train(i, j, r):
            return float(np.clip(base(i, j, r) + noise.uniform(-0.02, 0.02), 0, 1))

        return train

    a = run_allocation_loop("ucl", rgraph, make_trainer(), budget=24)
    b = run_allocation_loop("ucl", rgraph, make_trainer(), budget=24)
    assert a.fv_trace == b.fv_trace
    assert [(r.i, r.j) for r in a.rounds] == [(r.i, r.j) for r in b.rounds]


def test_ucl_budget_must_cover_init():
    rgraph = RecoveryGraph.chain([1.0], 3, [1.0, 1.0, 1.0], c_fail=10.0)
    trainer = CurveTrainer(np.full((3, 2), 0.5), np.full((3, 2), 2.0))
    with pytest.raises(InvariantViolationError):
        run_allocation_loop("ucl", rgraph, trainer, budget=5, config=AllocatorConfig(init_rounds=2))


def test_failure_mode_band_holds_on_recovery_graphs():
    # at gamma = 1 with zero-cost recovery edges, every failure-mode value sits
    # between -c_fail and the best safe-state value
    rng = np.random.default_rng(21)
    from recovery_forge.skill_graph import value_iteration

    for _ in range(20):
        rgraph = RecoveryGraph.chain([1.0, 0.5], 3, [1.0, 1.0, 2.0], c_fail=15.0)
        q = rng.uniform(0, 1, size=(3, 3))
        table = value_iteration(rgraph.with_q(q))
        safe_best = max(table[idx] for idx in rgraph.target_indices)
        for idx in rgraph.mode_indices:
            assert -15.0 - 1e-9 <= table[idx] <= safe_best + 1e-9
