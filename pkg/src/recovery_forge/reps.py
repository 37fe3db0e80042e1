"""Episodic relative-entropy policy search over a Gaussian search distribution.

Used as the oracle that turns a single failure start state into recovery action
parameters: sample parameter vectors, weight them by a softmax whose temperature
is chosen so the re-weighting stays within a KL budget of uniform, and refit the
Gaussian to the weighted samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    NonFiniteRewardsError,
    OracleFailureError,
)

COV_FLOOR = 1e-6
ETA_MIN = 1e-8
ETA_MAX = 1e8
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

DEFAULT_EPSILON = 0.5
DEFAULT_N_UPDATES = 10
DEFAULT_N_SAMPLES = 40
DEFAULT_INIT_COV_SCALE = 0.25
MAX_REJECTIONS = 100


@dataclass
class SearchPolicy:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.covariance.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatchError("covariance shape does not match mean")


@dataclass(frozen=True)
class RepsConfig:
    epsilon: float = DEFAULT_EPSILON
    n_updates: int = DEFAULT_N_UPDATES
    n_samples_per_update: int = DEFAULT_N_SAMPLES
    init_covariance_scale: float = DEFAULT_INIT_COV_SCALE


@dataclass(frozen=True)
class RepsUpdateStats:
    update: int
    mean_reward: float
    best_reward: float
    eta: float
    kl: float
    policy_mean: tuple[float, ...] = ()


def _dual(eta: float, shifted: np.ndarray, epsilon: float) -> float:
    # g(eta) = eta*eps + eta*log( mean exp(shifted/eta) ) + max R, with shifted = R - max R.
    n = shifted.size
    return eta * epsilon + eta * (logsumexp(shifted / eta) - np.log(n))


def solve_dual(rewards, epsilon: float) -> tuple[float, np.ndarray]:
    """Temperature and sample weights for one KL-constrained update.

    Minimizes the episodic dual over eta in [1e-8, 1e8] by golden-section search
    in log space (the dual is convex, hence unimodal under the reparametrization),
    then returns weights proportional to exp((R - max R) / eta*).
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise EmptyInputError(f"need at least 2 rewards, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise NonFiniteRewardsError("rewards contain non-finite values")
    shifted = r - r.max()

    lo, hi = np.log(ETA_MIN), np.log(ETA_MAX)
    a, b = lo + (1 - _GOLDEN) * (hi - lo), lo + _GOLDEN * (hi - lo)
    ga, gb = _dual(np.exp(a), shifted, epsilon), _dual(np.exp(b), shifted, epsilon)
    while (hi - lo) > 1e-10:  # log-space gap; 1e-10 relative tolerance on eta
        if ga <= gb:
            hi, b, gb = b, a, ga
            a = lo + (1 - _GOLDEN) * (hi - lo)
            ga = _dual(np.exp(a), shifted, epsilon)
        else:
            lo, a, ga = a, b, gb
            b = lo + _GOLDEN * (hi - lo)
            gb = _dual(np.exp(b), shifted, epsilon)
    eta = float(np.exp(0.5 * (lo + hi)))

    logw = shifted / eta
    weights = np.exp(logw - logsumexp(logw))
    return eta, weights


def kl_to_uniform(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    nz = w[w > 0.0]
    return float(np.sum(nz * np.log(nz * w.size)))


def update_policy(policy: SearchPolicy, samples, weights) -> SearchPolicy:
    """Weighted maximum-likelihood Gaussian refit with a covariance floor."""
    x = np.asarray(samples, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.ndim != 2 or x.shape[1] != policy.mean.size:
        raise DimensionMismatchError(f"samples shape {x.shape} does not match policy dim")
    if w.shape != (x.shape[0],):
        raise DimensionMismatchError("one weight per sample required")
    mean = w @ x
    diff = x - mean
    cov = (diff * w[:, None]).T @ diff
    cov = 0.5 * (cov + cov.T) + COV_FLOOR * np.eye(policy.mean.size)
    return SearchPolicy(mean, cov)


def _sample_box(
    policy: SearchPolicy, n: int, rng: np.random.Generator, bounds: np.ndarray | None
) -> np.ndarray:
    chol = np.linalg.cholesky(policy.covariance)
    out = np.empty((n, policy.mean.size))
    for i in range(n):
        theta = policy.mean + chol @ rng.standard_normal(policy.mean.size)
        if bounds is not None:
            for _ in range(MAX_REJECTIONS):
                if np.all(theta >= bounds[:, 0]) and np.all(theta <= bounds[:, 1]):
                    break
                theta = policy.mean + chol @ rng.standard_normal(policy.mean.size)
            theta = np.clip(theta, bounds[:, 0], bounds[:, 1])
        out[i] = theta
    return out


def reps_optimize(
    reward_fn,
    init: SearchPolicy,
    config: RepsConfig,
    seed,
    bounds=None,
) -> tuple[np.ndarray, float, list[RepsUpdateStats]]:
    """Run the sample/weight/refit loop; returns the best parameters ever seen."""
    rng = np.random.default_rng(seed)
    box = None if bounds is None else np.asarray(bounds, dtype=float)
    policy = init
    best_theta, best_reward = None, -np.inf
    trace: list[RepsUpdateStats] = []
    for update in range(config.n_updates):
        thetas = _sample_box(policy, config.n_samples_per_update, rng, box)
        rewards = np.empty(len(thetas))
        for i, theta in enumerate(thetas):
            try:
                rewards[i] = float(reward_fn(theta))
            except Exception as exc:
                raise OracleFailureError(f"reward function failed: {exc}", theta=theta) from exc
        top = int(np.argmax(rewards))
        if rewards[top] > best_reward:
            best_theta, best_reward = thetas[top].copy(), float(rewards[top])
        eta, weights = solve_dual(rewards, config.epsilon)
        policy = update_policy(policy, thetas, weights)
        trace.append(
            RepsUpdateStats(
                update=update,
                mean_reward=float(rewards.mean()),
                best_reward=best_reward,
                eta=eta,
                kl=kl_to_uniform(weights),
                policy_mean=tuple(float(v) for v in policy.mean),
            )
        )
    return best_theta, best_reward, trace
