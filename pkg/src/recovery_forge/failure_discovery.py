"""Generate failure states under noisy observations and cluster them into modes.

A state is a failure when every skill precondition rejects it and the goal is
unmet. The pessimistic strategy runs the chain open-loop under inflated noise
and records after every skill (several failure states per episode are common);
early termination follows a state estimator and stops at the first failure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .classifiers import DECISION_THRESHOLD, GmmModel, classify, fit_gmm, responsibilities
from .errors import DimensionMismatchError, TooFewSamplesError
from .latch_env import ObservationModel, ObsMode

PESSIMISTIC = "pessimistic"
EARLY_TERMINATION = "early_termination"

DEFAULT_MODES_PESSIMISTIC = 6
DEFAULT_MODES_EARLY_TERMINATION = 5


@dataclass
class FailureRecord:
    true_state: np.ndarray
    observation_at_failure: np.ndarray  # most-likely state at recording time
    skill_index: int
    strategy: str


@dataclass
class FailureModeSet:
    gmm: GmmModel
    sizes: np.ndarray

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=float)

    @property
    def n_modes(self) -> int:
        return len(self.gmm.components)

    def to_json_dict(self) -> dict:
        return {"gmm": self.gmm.to_json_dict(), "sizes": self.sizes.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FailureModeSet":
        return cls(GmmModel.from_json_dict(doc["gmm"]), np.asarray(doc["sizes"]))


def is_failure_state(preconditions, state_vector, goal_predicate) -> bool:
    if goal_predicate(state_vector):
        return False
    return all(classify(rho, state_vector) < DECISION_THRESHOLD for rho in preconditions)


def discover_pessimistic(
    chain, env, preconditions, n_episodes: int, noise_sigma: float, seed
) -> list[FailureRecord]:
    """Open-loop chain rollouts on a frozen noisy estimate; a failure check runs
    after every skill, so one bad episode can contribute several records."""
    rng = np.random.default_rng(seed)
    records: list[FailureRecord] = []
    model = ObservationModel(noise_sigma, ObsMode.OPEN_LOOP_FROZEN)
    for _ in range(n_episodes):
        state, obs = env.reset(seed=int(rng.integers(2**63)), obs_model=model)
        for skill_index, skill in enumerate(chain.skills):
            state, _ = env.execute_skill(state, skill, obs)
            true_vec = env.state_vector(state)
            if is_failure_state(preconditions, true_vec, chain.goal_predicate):
                records.append(
                    FailureRecord(
                        true_state=true_vec,
                        observation_at_failure=env.mls_state_vector(state, obs),
                        skill_index=skill_index,
                        strategy=PESSIMISTIC,
                    )
                )
    return records


def discover_early_termination(
    chain, env, preconditions, estimator_model: ObservationModel, n_episodes: int, seed
) -> list[FailureRecord]:
    """Estimator-in-the-loop rollouts that stop at the first failure state."""
    rng = np.random.default_rng(seed)
    records: list[FailureRecord] = []
    for _ in range(n_episodes):
        state, obs = env.reset(seed=int(rng.integers(2**63)), obs_model=estimator_model)
        sigma = estimator_model.sigma
        for skill_index, skill in enumerate(chain.skills):
            state, _ = env.execute_skill(state, skill, obs)
            sigma, obs = env._advance_estimator(state, estimator_model, sigma, obs, skill_index + 1)
            true_vec = env.state_vector(state)
            if chain.goal_predicate(true_vec):
                break
            if is_failure_state(preconditions, true_vec, chain.goal_predicate):
                records.append(
                    FailureRecord(
                        true_state=true_vec,
                        observation_at_failure=env.mls_state_vector(state, obs),
                        skill_index=skill_index,
                        strategy=EARLY_TERMINATION,
                    )
                )
                break
    return records


def cluster_failures(records: list[FailureRecord], n_modes: int, seed) -> FailureModeSet:
    """GMM over the true failure states; sizes are the expected member counts."""
    if len(records) < n_modes:
        raise TooFewSamplesError(f"{len(records)} failure states cannot form {n_modes} modes")
    states = np.asarray([r.true_state for r in records])
    gmm = fit_gmm(states, n_modes, seed=seed)
    sizes = len(records) * gmm.weights
    return FailureModeSet(gmm, sizes)


def classify_failure(modes: FailureModeSet, state) -> int:
    """Most responsible mode for a state; ties break to the lowest index."""
    vec = np.asarray(state, dtype=float)
    if vec.shape != (modes.gmm.dim,):
        raise DimensionMismatchError(f"state has shape {vec.shape}, modes expect ({modes.gmm.dim},)")
    resp = responsibilities(modes.gmm, vec)[0]
    return int(np.argmax(resp))


def save_failures_csv(records: list[FailureRecord], path) -> None:
    dim = len(records[0].true_state) if records else 7
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"s{i}" for i in range(dim)]
            + [f"o{i}" for i in range(dim)]
            + ["skill_index", "strategy"]
        )
        for r in records:
            writer.writerow(
                [repr(float(v)) for v in r.true_state]
                + [repr(float(v)) for v in r.observation_at_failure]
                + [r.skill_index, r.strategy]
            )


def load_failures_csv(path) -> list[FailureRecord]:
    records: list[FailureRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for name in header if name.startswith("s"))
        for row in reader:
            records.append(
                FailureRecord(
                    true_state=np.asarray([float(v) for v in row[:dim]]),
                    observation_at_failure=np.asarray(
                        [float(v) for v in row[dim : 2 * dim]]
                    ),
                    skill_index=int(row[2 * dim]),
                    strategy=row[2 * dim + 1],
                )
            )
    return records
