"""Parameterized recovery skills: per-failure-mode kNN regressors over
state -> action-parameter pairs, trained one datapoint at a time.

Each training call (one budget unit) samples a start state from a failure-mode
component, searches for action parameters that land the system in the target
precondition, and appends the resulting (state, parameters) pair. Prediction
averages the parameters of the k nearest stored states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    DECISION_THRESHOLD,
    GaussianModel,
    GenerativeClassifier,
    classify,
    gaussian_logpdf,
    gaussian_sample,
)
from .errors import DimensionMismatchError, EmptyDatasetError
from .reps import RepsConfig, SearchPolicy, reps_optimize

DEFAULT_KNN = 3
DEFAULT_EVAL_ROLLOUTS = 50

LOGPDF_REWARD_WEIGHT = 0.1
PRECONDITION_REWARD_WEIGHT = 10.0


@dataclass
class ParameterizedSkill:
    from_mode: int
    to_symbol: int  # graph symbol index of the recovery target
    k: int = DEFAULT_KNN
    states: list[np.ndarray] = field(default_factory=list)
    thetas: list[np.ndarray] = field(default_factory=list)
    state_scale: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.states)

    def append(self, state, theta) -> None:
        self.states.append(np.asarray(state, dtype=float))
        self.thetas.append(np.asarray(theta, dtype=float))

    def to_json_dict(self) -> dict:
        return {
            "from_mode": self.from_mode,
            "to_symbol": self.to_symbol,
            "k": self.k,
            "states": [s.tolist() for s in self.states],
            "thetas": [t.tolist() for t in self.thetas],
            "state_scale": None if self.state_scale is None else list(self.state_scale),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ParameterizedSkill":
        skill = cls(
            from_mode=int(doc["from_mode"]),
            to_symbol=int(doc["to_symbol"]),
            k=int(doc["k"]),
            state_scale=None if doc["state_scale"] is None else np.asarray(doc["state_scale"]),
        )
        for s, t in zip(doc["states"], doc["thetas"]):
            skill.append(s, t)
        return skill


def knn_predict(skill: ParameterizedSkill, state) -> np.ndarray:
    """Mean parameter vector of the k nearest stored states (all, if fewer)."""
    if not skill.states:
        raise EmptyDatasetError(f"recovery ({skill.from_mode}, {skill.to_symbol}) has no data")
    query = np.asarray(state, dtype=float)
    stored = np.asarray(skill.states)
    if query.shape != (stored.shape[1],):
        raise DimensionMismatchError(f"query shape {query.shape} vs stored dim {stored.shape[1]}")
    scale = skill.state_scale if skill.state_scale is not None else np.ones_like(query)
    dists = np.linalg.norm((stored - query) / scale, axis=1)
    k = min(skill.k, len(dists))
    nearest = np.argsort(dists, kind="stable")[:k]
    return np.mean(np.asarray(skill.thetas)[nearest], axis=0)


def recovery_reward(
    target_positive: GaussianModel, target_precond: GenerativeClassifier, state
) -> float:
    """Dense recovery objective: log-density shaping plus the precondition bonus."""
    vec = np.asarray(state, dtype=float)
    return LOGPDF_REWARD_WEIGHT * gaussian_logpdf(target_positive, vec) + (
        PRECONDITION_REWARD_WEIGHT * classify(target_precond, vec)
    )


@dataclass
class RecoveryLibrary:
    skills: dict[tuple[int, int], ParameterizedSkill]
    q: np.ndarray

    @classmethod
    def empty(cls, n_modes: int, targets: list[int], state_scale=None, k: int = DEFAULT_KNN):
        skills = {
            (i, j): ParameterizedSkill(i, targets[j], k=k, state_scale=state_scale)
            for i in range(n_modes)
            for j in range(len(targets))
        }
        return cls(skills=skills, q=np.zeros((n_modes, len(targets))))

    @property
    def n_modes(self) -> int:
        return self.q.shape[0]

    @property
    def n_targets(self) -> int:
        return self.q.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "q": self.q.tolist(),
            "skills": [
                {"i": i, "j": j, "skill": skill.to_json_dict()}
                for (i, j), skill in sorted(self.skills.items())
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RecoveryLibrary":
        skills = {
            (int(entry["i"]), int(entry["j"])): ParameterizedSkill.from_json_dict(entry["skill"])
            for entry in doc["skills"]
        }
        return cls(skills=skills, q=np.asarray(doc["q"], dtype=float))


def default_recovery_policy(env, config: RepsConfig) -> SearchPolicy:
    """Search init: zero displacements with an approach-close-hold gripper
    pattern; the spread per dimension is the configured fraction of each
    parameter's half-range, so both gripper phases stay explorable."""
    bounds = env.config.theta_bounds()
    mean = np.array([0.0, 0.0, 0.3, 0.0, 0.0, 0.7, 0.0, 0.0, 0.7])
    half_range = (bounds[:, 1] - bounds[:, 0]) / 2.0
    cov = np.diag((config.init_covariance_scale * half_range) ** 2)
    return SearchPolicy(mean, cov)


def train_recovery_datapoint(
    library: RecoveryLibrary,
    i: int,
    j: int,
    env,
    modes,
    preconds,
    reps_config: RepsConfig,
    seed,
):
    """One budget unit: solve one failure start and append the datapoint."""
    rng = np.random.default_rng(seed)
    component = modes.gmm.components[i]
    start = gaussian_sample(component, 1, rng)[0]
    target_positive = preconds.target_positive(j)
    target_precond = preconds.target_classifier(j)

    def reward_fn(theta):
        state = env.set_state(start)
        obs = np.asarray(state.handle_pos_true, dtype=float)
        terminal, _ = env.execute_skill(state, theta, obs)
        return recovery_reward(target_positive, target_precond, env.state_vector(terminal))

    init = default_recovery_policy(env, reps_config)
    best_theta, best_reward, trace = reps_optimize(
        reward_fn, init, reps_config, seed=rng.integers(2**31), bounds=env.config.theta_bounds()
    )
    library.skills[(i, j)].append(start, best_theta)
    return trace


def estimate_success_rate(
    skill: ParameterizedSkill,
    env,
    modes,
    target_precond: GenerativeClassifier,
    n_eval: int = DEFAULT_EVAL_ROLLOUTS,
    seed=0,
) -> float:
    """Fresh seeded rollouts from the skill's failure mode; fraction that land
    in the target precondition. An untrained skill scores 0."""
    if len(skill) == 0:
        return 0.0
    component = modes.gmm.components[skill.from_mode]
    starts = gaussian_sample(component, n_eval, seed)
    successes = 0
    for start in starts:
        state = env.set_state(start)
        obs = np.asarray(state.handle_pos_true, dtype=float)
        theta = knn_predict(skill, env.state_vector(state))
        terminal, _ = env.execute_skill(state, theta, obs)
        if classify(target_precond, env.state_vector(terminal)) >= DECISION_THRESHOLD:
            successes += 1
    return successes / n_eval
