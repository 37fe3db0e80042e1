"""End-to-end experiment pipelines and their command-line interface.

Five subcommands wire the library together:

  chain-preconds  learn the nominal skills' preconditions in the latch world
  discover        induce failures under noise and cluster them into modes
  train           allocate a training budget across recovery skills
  evaluate        compare recovery policies under a simulated state estimator
  synth-alloc     allocator comparison on synthetic learning curves (no REPS)

Every command is deterministic given (config, seed); outputs are CSV files for
metrics and versioned JSON artifacts for models, written under
``<out>/<pipeline>/<seed>/`` next to a snapshot of the effective config.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import persistence_io
from .allocator import (
    AllocatorConfig,
    RecoveryGraph,
    run_allocation_loop,
)
from .classifiers import classify
from .errors import ConfigError, RecoveryForgeError
from .failure_discovery import (
    DEFAULT_MODES_EARLY_TERMINATION,
    DEFAULT_MODES_PESSIMISTIC,
    EARLY_TERMINATION,
    PESSIMISTIC,
    classify_failure,
    cluster_failures,
    discover_early_termination,
    discover_pessimistic,
    load_failures_csv,
    save_failures_csv,
)
from .latch_env import (
    EnvConfig,
    LatchEnv,
    NominalSkill,
    ObservationModel,
    ObsMode,
)
from .precondition_chaining import (
    NominalChain,
    chain_preconditions,
    collect_success_trajectories,
    self_positive_rate,
)
from .recovery_skills import (
    RecoveryLibrary,
    estimate_success_rate,
    knn_predict,
    train_recovery_datapoint,
)
from .reps import RepsConfig
from .skill_graph import extract_policy, value_iteration

LOGGER = logging.getLogger("recovery_forge")

EVAL_POLICIES = (
    "open-loop",
    "no-recovery",
    "retry",
    "recover-to-prev",
    "recover-to-start",
    "learned-recovery",
)


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    env: EnvConfig = field(default_factory=EnvConfig)

    # precondition chaining
    n_trajectories: int = 60
    samples_per_skill: int = 250
    neighborhood_scale: float = 4.0

    # failure discovery
    discovery_strategy: str = PESSIMISTIC
    discovery_episodes: int = 1000
    n_failure_modes: int | None = None  # strategy-dependent default

    # recovery training / allocation
    allocation_strategy: str = "ucl"
    budget: int = 150
    gamma: float = 1.0
    c_fail: float | None = None  # default: 100 x the largest nominal edge cost
    alpha: float = 0.95
    window: int = 3
    init_rounds: int = 2
    episodes_per_selection: int = 1
    n_eval_rollouts: int = 50
    reps_epsilon: float = 0.5
    reps_updates: int = 10
    reps_samples: int = 40
    reps_init_cov_scale: float = 0.25

    # evaluation
    eval_episodes: int = 200
    skill_cap: int = 10

    # synthetic allocation testbed
    synth_modes: int = 5
    synth_costs: tuple[float, ...] = (0.25, 0.12, 0.08)
    synth_c_fail: float = 10.0
    synth_noise: float = 0.01
    synth_strong_q: tuple[float, float] = (0.55, 0.9)
    synth_weak_q: tuple[float, float] = (0.02, 0.2)
    synth_tau: tuple[float, float] = (2.0, 10.0)

    # artifact inputs for later pipeline stages
    preconds_path: str | None = None
    modes_path: str | None = None
    failures_path: str | None = None
    library_dir: str | None = None

    def reps_config(self) -> RepsConfig:
        return RepsConfig(
            epsilon=self.reps_epsilon,
            n_updates=self.reps_updates,
            n_samples_per_update=self.reps_samples,
            init_covariance_scale=self.reps_init_cov_scale,
        )

    def allocator_config(self) -> AllocatorConfig:
        return AllocatorConfig(
            alpha=self.alpha,
            window=self.window,
            init_rounds=self.init_rounds,
            episodes_per_selection=self.episodes_per_selection,
            budget=self.budget,
        )

    def to_json_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["env"] = self.env.to_json_dict()
        for key, value in doc.items():
            if isinstance(value, tuple):
                doc[key] = list(value)
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        kwargs = dict(doc)
        unknown = set(kwargs) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "env" in kwargs:
            kwargs["env"] = EnvConfig.from_json_dict(kwargs["env"])
        for key in ("seeds", "synth_costs", "synth_strong_q", "synth_weak_q", "synth_tau"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_json_dict(doc)


# -- shared plumbing -----------------------------------------------------------------


def _prepare_out(config: ExperimentConfig, pipeline: str, seed: int | None = None) -> str:
    seed = config.seed if seed is None else seed
    out = os.path.join(config.out_dir, pipeline, str(seed))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config_snapshot.json"), "w") as fh:
        json.dump(config.to_json_dict(), fh, sort_keys=True, indent=2)
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _nominal_chain(env: LatchEnv) -> NominalChain:
    return NominalChain(env.nominal_skills(), env.goal_predicate_vector)


def _recovery_graph(config: ExperimentConfig, modes) -> RecoveryGraph:
    costs = list(config.env.nominal_costs())
    c_fail = config.c_fail if config.c_fail is not None else 100.0 * max(costs)
    return RecoveryGraph.chain(
        costs, modes.n_modes, modes.sizes, c_fail=c_fail, gamma=config.gamma
    )


def _require(path: str | None, what: str, flag: str) -> str:
    if path is None:
        raise ConfigError(f"{what} required: set {flag} in the config")
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found at {path}")
    return path


# -- chain-preconds ----------------------------------------------------------------


def cmd_chain_preconds(config: ExperimentConfig) -> str:
    out = _prepare_out(config, "chain-preconds")
    env = LatchEnv(config.env, seed=config.seed)
    chain = _nominal_chain(env)
    LOGGER.info("collecting %d zero-noise trajectories", config.n_trajectories)
    trajectories = collect_success_trajectories(chain, env, config.n_trajectories, config.seed)
    preconds = chain_preconditions(
        chain,
        env,
        trajectories,
        m=config.samples_per_skill,
        scale=config.neighborhood_scale,
        seed=config.seed,
    )
    path = os.path.join(out, "preconds.rfj")
    persistence_io.save_artifact(preconds, path, created_with_seed=config.seed)

    rows = []
    for i in range(preconds.n_skills):
        positives = [r.start_state for r in preconds.records if r.skill_index == i and r.label]
        negatives = [r.start_state for r in preconds.records if r.skill_index == i and not r.label]
        rows.append(
            (i, len(positives), len(negatives), self_positive_rate(preconds.preconditions[i], positives))
        )
    _write_csv(
        os.path.join(out, "chain_summary.csv"),
        ["skill", "n_positive", "n_negative", "self_positive_rate"],
        rows,
    )
    LOGGER.info("preconditions written to %s", path)
    return path


# -- discover ------------------------------------------------------------------------


def cmd_discover(config: ExperimentConfig) -> str | None:
    out = _prepare_out(config, "discover")
    env = LatchEnv(config.env, seed=config.seed)
    chain = _nominal_chain(env)
    preconds = persistence_io.load_artifact(
        _require(config.preconds_path, "precondition set", "preconds_path")
    )
    if config.discovery_strategy == PESSIMISTIC:
        sigma = config.env.sigma_ref * config.env.pessimistic_sigma_factor
        records = discover_pessimistic(
            chain, env, preconds.preconditions, config.discovery_episodes, sigma, config.seed
        )
        default_modes = DEFAULT_MODES_PESSIMISTIC
    elif config.discovery_strategy == EARLY_TERMINATION:
        model = ObservationModel(config.env.sigma_ref, ObsMode.HALVING_ESTIMATOR)
        records = discover_early_termination(
            chain, env, preconds.preconditions, model, config.discovery_episodes, config.seed
        )
        default_modes = DEFAULT_MODES_EARLY_TERMINATION
    else:
        raise ConfigError(f"unknown discovery strategy {config.discovery_strategy!r}")

    save_failures_csv(records, os.path.join(out, "failures.csv"))
    if not records:
        print("no failures discovered (noise too low for this chain)")
        return None
    n_modes = config.n_failure_modes or default_modes
    modes = cluster_failures(records, n_modes, seed=config.seed)
    path = os.path.join(out, "modes.rfj")
    persistence_io.save_artifact(modes, path, created_with_seed=config.seed)
    LOGGER.info("%d failure records -> %d modes at %s", len(records), n_modes, path)
    return path


# -- train ---------------------------------------------------------------------------


class _RealTrainer:
    """Allocation-loop trainer backed by the simulator and the search oracle."""

    def __init__(self, config, env, library, modes, preconds, seed):
        self.config = config
        self.env = env
        self.library = library
        self.modes = modes
        self.preconds = preconds
        self.reps_config = config.reps_config()
        self.seed_seq = np.random.SeedSequence(seed)
        self.reps_rows: list[tuple] = []

    def __call__(self, i, j, round_index) -> float:
        train_seed, eval_seed = self.seed_seq.spawn(2)
        for _ in range(self.config.episodes_per_selection):
            trace = train_recovery_datapoint(
                self.library, i, j, self.env, self.modes, self.preconds,
                self.reps_config, train_seed,
            )
            for stats in trace:
                self.reps_rows.append(
                    (round_index, i, j, stats.update, stats.mean_reward,
                     stats.best_reward, stats.eta, stats.kl)
                )
        skill = self.library.skills[(i, j)]
        q = estimate_success_rate(
            skill, self.env, self.modes, self.preconds.target_classifier(j),
            n_eval=self.config.n_eval_rollouts, seed=eval_seed,
        )
        return q


def train_one_seed(config: ExperimentConfig, seed: int):
    """Full allocation run for one seed; returns (library, allocation result)."""
    env = LatchEnv(config.env, seed=seed)
    preconds = persistence_io.load_artifact(
        _require(config.preconds_path, "precondition set", "preconds_path")
    )
    modes = persistence_io.load_artifact(
        _require(config.modes_path, "failure modes", "modes_path")
    )
    rgraph = _recovery_graph(config, modes)
    library = RecoveryLibrary.empty(
        modes.n_modes,
        targets=rgraph.target_indices,
        state_scale=np.asarray(config.env.knn_state_scale),
    )
    trainer = _RealTrainer(config, env, library, modes, preconds, seed)
    result = run_allocation_loop(
        config.allocation_strategy, rgraph, trainer, config.budget, config.allocator_config()
    )
    library.q = result.state.q.copy()
    return library, result, trainer.reps_rows


def cmd_train(config: ExperimentConfig) -> dict[int, str]:
    library_paths: dict[int, str] = {}
    traces: dict[int, list[float]] = {}
    for seed in config.seeds:
        out = _prepare_out(config, "train", seed)
        library, result, reps_rows = train_one_seed(config, seed)
        path = os.path.join(out, "library.rfj")
        persistence_io.save_artifact(library, path, created_with_seed=seed)
        persistence_io.save_artifact(
            result.state, os.path.join(out, "allocator_state.rfj"), created_with_seed=seed
        )
        _write_csv(
            os.path.join(out, "rounds.csv"),
            ["round", "strategy", "i", "j", "q_new", "q_ucl", "fv"],
            [(r.round, r.strategy, r.i, r.j, r.q_new, r.q_ucl, r.fv) for r in result.rounds],
        )
        _write_csv(
            os.path.join(out, "counts.csv"),
            ["i"] + [f"target_{j}" for j in range(result.counts.shape[1])],
            [(i, *[int(c) for c in result.counts[i]]) for i in range(result.counts.shape[0])],
        )
        _write_csv(
            os.path.join(out, "reps_trace.csv"),
            ["round", "i", "j", "update", "mean_reward", "best_reward", "eta", "kl"],
            reps_rows,
        )
        library_paths[seed] = path
        traces[seed] = result.fv_trace
        LOGGER.info("seed %d: final FV %.4f", seed, result.fv_trace[-1])

    summary_out = _prepare_out(config, "train", "summary")
    arr = np.asarray([traces[s] for s in config.seeds])
    _write_csv(
        os.path.join(summary_out, "fv_summary.csv"),
        ["round", "mean_fv", "min_fv", "max_fv"],
        [
            (r, float(arr[:, r].mean()), float(arr[:, r].min()), float(arr[:, r].max()))
            for r in range(arr.shape[1])
        ],
    )
    return library_paths


# -- evaluate ------------------------------------------------------------------------


@dataclass
class EpisodeResult:
    success: bool
    cost: float
    executed: int


def _learned_policy_map(rgraph: RecoveryGraph, library: RecoveryLibrary) -> dict[int, int]:
    """Best recovery target per failure mode under the current estimates."""
    graph = rgraph.with_q(library.q)
    policy = extract_policy(graph, value_iteration(graph))
    mapping: dict[int, int] = {}
    for i, mode_idx in enumerate(rgraph.mode_indices):
        edge = policy[graph.symbols[mode_idx]]
        mapping[i] = rgraph.target_indices.index(edge.dst)
    return mapping


def _best_applicable(preconds, mls) -> int | None:
    """Highest-index satisfied precondition: the skill closest to the goal."""
    best = None
    for i, rho in enumerate(preconds.preconditions):
        if classify(rho, mls) >= 0.5:
            best = i
    return best


def run_policy_episode(
    policy: str,
    env: LatchEnv,
    preconds,
    modes,
    library: RecoveryLibrary | None,
    mode_targets: dict[int, int] | None,
    seed: int,
    skill_cap: int = 10,
) -> EpisodeResult:
    """One evaluation episode under the halving state estimator (open-loop uses
    the frozen initial estimate instead and never consults the preconditions)."""
    sigma0 = env.config.sigma_ref
    skills = env.nominal_skills()
    if policy == "open-loop":
        record = env.run_chain(ObservationModel(sigma0, ObsMode.OPEN_LOOP_FROZEN), seed=seed)
        return EpisodeResult(record.success, sum(record.costs), record.executed)

    model = ObservationModel(sigma0, ObsMode.HALVING_ESTIMATOR)
    state, obs = env.reset(seed=seed, obs_model=model)
    sigma = sigma0
    initial_ee = state.ee_pos
    cost = 0.0
    executed = 0
    last_skill: int | None = None
    prev_pose: tuple[tuple[float, float], float] | None = None
    just_retried = False
    just_reversed = False

    def run(action) -> None:
        nonlocal state, cost, executed, sigma, obs
        state, step_cost = env.execute_skill(state, action, obs)
        cost += step_cost
        executed += 1
        sigma = sigma / 2.0
        obs = env.observe(state, sigma)

    while executed < skill_cap:
        if env.goal_predicate(state):
            break
        mls = env.mls_state_vector(state, obs)
        applicable = _best_applicable(preconds, mls)
        if applicable is not None:
            prev_pose = (state.ee_pos, 1.0 if state.gripper_closed else 0.0)
            run(skills[applicable])
            last_skill = applicable
            just_retried = False
            just_reversed = False
            continue

        # failure detected
        if policy == "no-recovery":
            break
        if policy == "retry":
            if last_skill is None or just_retried:
                break
            run(skills[last_skill])
            just_retried = True
        elif policy == "recover-to-prev":
            if prev_pose is None or just_reversed:
                break
            run(MoveTo(prev_pose[0], prev_pose[1]))
            just_reversed = True
        elif policy == "recover-to-start":
            run(MoveTo(initial_ee, 0.0))
        elif policy == "learned-recovery":
            mode = classify_failure(modes, mls)
            target = mode_targets[mode]
            skill = library.skills[(mode, target)]
            if len(skill) == 0:
                break
            run(knn_predict(skill, mls))
        else:
            raise ConfigError(f"unknown evaluation policy {policy!r}")

    return EpisodeResult(bool(env.goal_predicate(state)), cost, executed)


@dataclass(frozen=True)
class MoveTo:
    """Single-waypoint heuristic action: go to a pose with a gripper setting."""

    target: tuple[float, float]
    gripper: float

    def plan(self, observation, state, config):
        return [(self.target, self.gripper)]


def cmd_evaluate(config: ExperimentConfig) -> str:
    preconds = persistence_io.load_artifact(
        _require(config.preconds_path, "precondition set", "preconds_path")
    )
    modes = persistence_io.load_artifact(
        _require(config.modes_path, "failure modes", "modes_path")
    )
    library_dir = _require(config.library_dir, "trained libraries", "library_dir")
    rgraph = _recovery_graph(config, modes)

    per_seed_rows = []
    totals: dict[str, list[EpisodeResult]] = {p: [] for p in EVAL_POLICIES}
    for seed in config.seeds:
        library = persistence_io.load_artifact(os.path.join(library_dir, str(seed), "library.rfj"))
        mode_targets = _learned_policy_map(rgraph, library)
        env = LatchEnv(config.env, seed=seed)
        for policy in EVAL_POLICIES:
            results = [
                run_policy_episode(
                    policy, env, preconds, modes, library, mode_targets,
                    seed=int(np.random.SeedSequence((seed, ep)).generate_state(1)[0]),
                    skill_cap=config.skill_cap,
                )
                for ep in range(config.eval_episodes)
            ]
            totals[policy].extend(results)
            costs = np.asarray([r.cost for r in results])
            per_seed_rows.append(
                (seed, policy, float(np.mean([r.success for r in results])),
                 float(costs.mean()), float(costs.std()))
            )
            LOGGER.info("seed %d %s: %.3f", seed, policy, per_seed_rows[-1][2])

    out = _prepare_out(config, "evaluate", "all")
    _write_csv(
        os.path.join(out, "per_seed_evaluation.csv"),
        ["seed", "policy", "success_rate", "mean_cost", "std_cost"],
        per_seed_rows,
    )
    rows = []
    for policy in EVAL_POLICIES:
        results = totals[policy]
        costs = np.asarray([r.cost for r in results])
        rows.append(
            (policy, float(np.mean([r.success for r in results])),
             float(costs.mean()), float(costs.std()))
        )
    path = os.path.join(out, "evaluation.csv")
    _write_csv(path, ["policy", "success_rate", "mean_cost", "std_cost"], rows)
    return path


# -- synthetic allocation testbed ------------------------------------------------------


@dataclass
class SyntheticCurve:
    """Latent saturating learning curve with bounded estimate noise."""

    q_max: float
    tau: float

    def value(self, t: int) -> float:
        return self.q_max * (1.0 - np.exp(-t / self.tau))


class SyntheticTrainer:
    def __init__(self, curves: dict[tuple[int, int], SyntheticCurve], noise: float, seed):
        self.curves = curves
        self.noise = noise
        self.counts: dict[tuple[int, int], int] = {key: 0 for key in curves}
        self.rng = np.random.default_rng(seed)

    def __call__(self, i, j, round_index) -> float:
        self.counts[(i, j)] += 1
        latent = self.curves[(i, j)].value(self.counts[(i, j)])
        return float(np.clip(latent + self.rng.uniform(-self.noise, self.noise), 0.0, 1.0))


def synthetic_task_set(config: ExperimentConfig, seed: int):
    """One seeded task set: per mode, one strong recovery and weak alternatives."""
    rng = np.random.default_rng(seed)
    n, m = config.synth_modes, len(config.synth_costs) + 1
    sizes = rng.integers(50, 400, size=n).astype(float)
    rgraph = RecoveryGraph.chain(
        list(config.synth_costs), n, sizes, c_fail=config.synth_c_fail, gamma=1.0
    )
    curves: dict[tuple[int, int], SyntheticCurve] = {}
    for i in range(n):
        strong = int(rng.integers(0, m))
        for j in range(m):
            lo, hi = config.synth_strong_q if j == strong else config.synth_weak_q
            curves[(i, j)] = SyntheticCurve(
                q_max=float(rng.uniform(lo, hi)), tau=float(rng.uniform(*config.synth_tau))
            )
    return rgraph, curves


def run_synthetic_allocation(config: ExperimentConfig, seed: int):
    """Both strategies on the same seeded task set; returns their results."""
    results = {}
    for strategy in ("rr", "ucl"):
        rgraph, curves = synthetic_task_set(config, seed)
        trainer = SyntheticTrainer(curves, config.synth_noise, seed=seed + 1)
        results[strategy] = run_allocation_loop(
            strategy, rgraph, trainer, config.budget, config.allocator_config()
        )
    return results


def budget_to_parity(ucl_trace, rr_trace) -> float:
    """Fraction of the budget the UCL strategy needed to reach round-robin's best."""
    rr_best = max(rr_trace)
    for r, fv in enumerate(ucl_trace):
        if fv >= rr_best - 1e-12:
            return (r + 1) / len(ucl_trace)
    return np.inf


def cmd_synthetic_allocation(config: ExperimentConfig) -> str:
    rows = []
    for seed in config.seeds:
        out = _prepare_out(config, "synth-alloc", seed)
        results = run_synthetic_allocation(config, seed)
        for strategy, result in results.items():
            _write_csv(
                os.path.join(out, f"rounds_{strategy}.csv"),
                ["round", "strategy", "i", "j", "q_new", "q_ucl", "fv"],
                [(r.round, r.strategy, r.i, r.j, r.q_new, r.q_ucl, r.fv) for r in result.rounds],
            )
            _write_csv(
                os.path.join(out, f"counts_{strategy}.csv"),
                ["i"] + [f"target_{j}" for j in range(result.counts.shape[1])],
                [(i, *[int(c) for c in result.counts[i]]) for i in range(result.counts.shape[0])],
            )
        rows.append(
            (
                seed,
                results["ucl"].fv_trace[-1],
                results["rr"].fv_trace[-1],
                budget_to_parity(results["ucl"].fv_trace, results["rr"].fv_trace),
            )
        )
        LOGGER.info(
            "seed %d: ucl %.4f rr %.4f parity %.2f", seed, rows[-1][1], rows[-1][2], rows[-1][3]
        )
    out = _prepare_out(config, "synth-alloc", "summary")
    path = os.path.join(out, "synth_fv.csv")
    _write_csv(path, ["seed", "ucl_final_fv", "rr_final_fv", "ucl_budget_to_rr_best"], rows)
    return path


# -- CLI -----------------------------------------------------------------------------


def _setup_logging() -> None:
    level = os.environ.get("RECOVERY_FORGE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recovery-forge",
        description="Learn and evaluate failure-recovery skills in the latch world.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("chain-preconds", "discover", "train", "evaluate", "synth-alloc"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="JSON experiment config", default=None)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default=None, help="output directory root")
        cmd.add_argument("--strategy", choices=("rr", "ucl"), default=None)
        cmd.add_argument("--budget", type=int, default=None)
    return parser


def _load_config(args) -> ExperimentConfig:
    config = (
        ExperimentConfig.from_json_file(args.config) if args.config else ExperimentConfig()
    )
    if args.seed is not None:
        config = replace(config, seed=args.seed, seeds=(args.seed,))
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    if args.strategy is not None:
        config = replace(config, allocation_strategy=args.strategy)
    if args.budget is not None:
        config = replace(config, budget=args.budget)
    if config.allocation_strategy == "ucl":
        n = config.n_failure_modes or DEFAULT_MODES_PESSIMISTIC
        m = len(config.env.nominal_costs()) + 1
        if config.budget < config.init_rounds * n * m:
            raise ConfigError(
                f"budget {config.budget} cannot cover the {config.init_rounds} x {n * m} "
                "initialization rounds"
            )
    return config


COMMANDS = {
    "chain-preconds": cmd_chain_preconds,
    "discover": cmd_discover,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "synth-alloc": cmd_synthetic_allocation,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RecoveryForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
