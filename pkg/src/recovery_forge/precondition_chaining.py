"""Learn nominal-skill preconditions backwards from the goal.

Successful trajectories give each skill a positive start-state distribution.
Walking the chain backwards, states sampled around each distribution are
executed and labeled by the next skill's (already learned) precondition, so
label information flows from the goal toward the start. Random world states
pad the negative sets so the classifiers reject far-away states too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    DECISION_THRESHOLD,
    DEFAULT_NEGATIVE_COMPONENTS,
    DEFAULT_NEIGHBORHOOD_SCALE,
    GaussianModel,
    GenerativeClassifier,
    classify,
    fit_gaussian,
    fit_gmm,
    sample_neighborhood,
)
from .errors import CollectionTimeoutError, DegenerateLabelsError
from .latch_env import ObservationModel, ObsMode

DEFAULT_SAMPLES_PER_SKILL = 150
MIN_LABELS_PER_CLASS = 5
RANDOM_NEGATIVE_SHARE = 0.25  # of the final negative set

# Per-dimension standard-deviation floor as a fraction of each state dimension's
# world range. Trajectory data is exactly constant in several dimensions
# (gripper bit, handle angle, door angle), and without a physically meaningful
# floor those dimensions dominate the generative density ratio, making the
# classifiers extrapolate arbitrarily at states far from any training data.
STATE_SIGMA_FLOOR_FRACTION = 0.01


@dataclass(frozen=True)
class NominalChain:
    skills: list
    goal_predicate: object  # state-vector -> {0, 1}

    def __len__(self) -> int:
        return len(self.skills)


@dataclass
class LabelingRecord:
    skill_index: int
    start_state: np.ndarray
    end_state: np.ndarray
    label: int


@dataclass
class PreconditionSet:
    preconditions: list[GenerativeClassifier]
    positive_dists: list[GaussianModel]
    goal_positive: GaussianModel
    goal_classifier: GenerativeClassifier
    records: list[LabelingRecord] = field(default_factory=list, repr=False, compare=False)

    @property
    def n_skills(self) -> int:
        return len(self.preconditions)

    @property
    def n_targets(self) -> int:
        """Recovery targets: every skill precondition plus the goal."""
        return len(self.preconditions) + 1

    def target_positive(self, j: int) -> GaussianModel:
        return self.positive_dists[j] if j < self.n_skills else self.goal_positive

    def target_classifier(self, j: int) -> GenerativeClassifier:
        return self.preconditions[j] if j < self.n_skills else self.goal_classifier

    def to_json_dict(self) -> dict:
        return {
            "preconditions": [c.to_json_dict() for c in self.preconditions],
            "positive_dists": [g.to_json_dict() for g in self.positive_dists],
            "goal_positive": self.goal_positive.to_json_dict(),
            "goal_classifier": self.goal_classifier.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PreconditionSet":
        return cls(
            [GenerativeClassifier.from_json_dict(c) for c in doc["preconditions"]],
            [GaussianModel.from_json_dict(g) for g in doc["positive_dists"]],
            GaussianModel.from_json_dict(doc["goal_positive"]),
            GenerativeClassifier.from_json_dict(doc["goal_classifier"]),
        )


def collect_success_trajectories(chain: NominalChain, env, n: int, seed) -> list[np.ndarray]:
    """Zero-noise rollouts of the chain; keeps the k+1 per-skill start states
    (last entry is the goal state) of the first n successful episodes."""
    rng = np.random.default_rng(seed)
    model = ObservationModel(0.0, ObsMode.OPEN_LOOP_FROZEN)
    trajectories: list[np.ndarray] = []
    attempts = 0
    max_attempts = 10 * n
    while len(trajectories) < n and attempts < max_attempts:
        attempts += 1
        record = env.run_chain(model, skills=chain.skills, seed=int(rng.integers(2**63)))
        if record.success and chain.goal_predicate(record.states[-1]):
            trajectories.append(np.asarray(record.states[: len(chain) + 1]))
    if len(trajectories) < n:
        raise CollectionTimeoutError(
            f"only {len(trajectories)}/{n} successes in {max_attempts} zero-noise attempts"
        )
    return trajectories


def random_world_states(env, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws over the documented state bounding box."""
    lo, hi = state_bounds(env)
    return rng.uniform(lo, hi, size=(n, lo.size))


def state_bounds(env) -> tuple[np.ndarray, np.ndarray]:
    c = env.config
    off_bound = c.world_box + c.handle_box
    lo = np.array([-c.world_box, -c.world_box, 0.0, -off_bound, -off_bound, 0.0, 0.0])
    hi = np.array([c.world_box, c.world_box, 1.0, off_bound, off_bound, c.angle_max, c.door_max])
    return lo, hi


def _state_variance_floor(env) -> np.ndarray:
    lo, hi = state_bounds(env)
    return (STATE_SIGMA_FLOOR_FRACTION * (hi - lo)) ** 2


def _floor_model(model: GaussianModel, variance_floor: np.ndarray) -> GaussianModel:
    cov = model.covariance.copy()
    diag = np.diag(cov).copy()
    lift = np.maximum(variance_floor - diag, 0.0)
    return GaussianModel(model.mean, cov + np.diag(lift))


def _floor_classifier(clf: GenerativeClassifier, variance_floor: np.ndarray) -> GenerativeClassifier:
    from .classifiers import GmmModel

    negative = GmmModel(
        clf.negative.weights,
        [_floor_model(c, variance_floor) for c in clf.negative.components],
    )
    return GenerativeClassifier(_floor_model(clf.positive, variance_floor), negative, clf.prior_positive)


def _augment_with_random_negatives(negatives, env, rng) -> np.ndarray:
    n_random = max(1, int(np.ceil(len(negatives) * RANDOM_NEGATIVE_SHARE / (1 - RANDOM_NEGATIVE_SHARE))))
    extra = random_world_states(env, n_random, rng)
    return np.concatenate([np.asarray(negatives), extra])


def chain_preconditions(
    chain: NominalChain,
    env,
    trajectories,
    m: int = DEFAULT_SAMPLES_PER_SKILL,
    scale: float = DEFAULT_NEIGHBORHOOD_SCALE,
    seed=0,
    n_negative_components: int = DEFAULT_NEGATIVE_COMPONENTS,
    prior_positive: float = 0.5,
) -> PreconditionSet:
    """Backwards pass over the chain: sample, execute, label, fit."""
    if not trajectories:
        raise DegenerateLabelsError("no trajectories to chain from")
    k = len(chain)
    floor = _state_variance_floor(env)
    columns = [np.asarray([t[i] for t in trajectories]) for i in range(k + 1)]
    positive_dists = [_floor_model(fit_gaussian(columns[i]), floor) for i in range(k)]
    goal_positive = _floor_model(fit_gaussian(columns[k]), floor)

    seeds = np.random.SeedSequence(seed).spawn(k + 1)
    preconditions: list[GenerativeClassifier | None] = [None] * k
    records: list[LabelingRecord] = []
    label_fn = chain.goal_predicate  # current goal condition, walking backwards

    for i in range(k - 1, -1, -1):
        rng = np.random.default_rng(seeds[i])
        samples = sample_neighborhood(positive_dists[i], scale, m, rng)
        positives, negatives = [], []
        for sample in samples:
            state = env.set_state(sample)
            start_vec = env.state_vector(state)
            obs = np.asarray(state.handle_pos_true, dtype=float)
            end_state, _ = env.execute_skill(state, chain.skills[i], obs)
            end_vec = env.state_vector(end_state)
            label = int(label_fn(end_vec))
            records.append(LabelingRecord(i, start_vec, end_vec, label))
            (positives if label else negatives).append(start_vec)
        if len(positives) < MIN_LABELS_PER_CLASS or len(negatives) < MIN_LABELS_PER_CLASS:
            raise DegenerateLabelsError(
                f"skill {i}: {len(positives)} positive / {len(negatives)} negative labels; "
                "adjust the neighborhood scale or sample count"
            )
        pos_set = np.concatenate([columns[i], np.asarray(positives)])
        neg_set = _augment_with_random_negatives(negatives, env, rng)
        positive_model = fit_gaussian(pos_set)
        negative_model = fit_gmm(
            neg_set, n_negative_components, seed=int(rng.integers(2**31))
        )
        rho = _floor_classifier(
            GenerativeClassifier(positive_model, negative_model, prior_positive), floor
        )
        preconditions[i] = rho
        label_fn = _classifier_label(rho)

    goal_rng = np.random.default_rng(seeds[k])
    goal_negatives = _goal_negatives(records, env, goal_rng, k)
    goal_classifier = _floor_classifier(
        GenerativeClassifier(
            fit_gaussian(columns[k]),
            fit_gmm(goal_negatives, n_negative_components, seed=int(goal_rng.integers(2**31))),
            prior_positive,
        ),
        floor,
    )

    result = PreconditionSet(
        preconditions=list(preconditions),
        positive_dists=positive_dists,
        goal_positive=goal_positive,
        goal_classifier=goal_classifier,
    )
    result.records = records
    return result


def _classifier_label(rho: GenerativeClassifier):
    return lambda vec: int(classify(rho, vec) >= DECISION_THRESHOLD)


def _goal_negatives(records, env, rng, k) -> np.ndarray:
    """Non-goal states for the goal-region classifier: failed last-skill rollout
    ends plus random world states."""
    fails = [r.end_state for r in records if r.skill_index == k - 1 and r.label == 0]
    extras = random_world_states(env, max(50, len(fails)), rng)
    if fails:
        return np.concatenate([np.asarray(fails), extras])
    return extras


def self_positive_rate(rho: GenerativeClassifier, positives) -> float:
    """Fraction of its own positive training set a classifier accepts."""
    probs = classify(rho, np.asarray(positives))
    return float(np.mean(probs >= DECISION_THRESHOLD))
