"""Gaussian / Gaussian-mixture density models and the generative precondition classifier.

Preconditions are realized as generative classifiers: a Gaussian over observed
success states, a small GMM over everything else, and a Bayes posterior between
the two. All fits are deterministic given (samples, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .errors import (
    DimensionMismatchError,
    EmptyComponentError,
    InvalidParameterError,
    InvariantViolationError,
    NonFiniteInputError,
    TooFewSamplesError,
)

# Covariance regularization: eps = REG_SCALE * trace/d, floored so that fully
# degenerate samples still produce an invertible covariance.
REG_SCALE = 1e-6
REG_FLOOR = 1e-9

# Posterior threshold used wherever a yes/no precondition decision is needed.
DECISION_THRESHOLD = 0.5

DEFAULT_NEGATIVE_COMPONENTS = 4
DEFAULT_NEIGHBORHOOD_SCALE = 4.0


def _regularization(cov: np.ndarray) -> float:
    d = cov.shape[0]
    return max(REG_SCALE * float(np.trace(cov)) / d, REG_FLOOR)


def _floor_eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Lift the spectrum onto the regularization floor only when needed.

    Healthy covariances pass through untouched so the EM M-step stays the exact
    maximizer (keeps the log-likelihood monotone); collapsed ones get the floor.
    """
    floor = _regularization(cov)
    lam_min = float(np.linalg.eigvalsh(cov)[0])
    if lam_min >= floor:
        return cov
    return cov + (floor - lam_min) * np.eye(cov.shape[0])


@dataclass
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    _logdet: float | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.covariance.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatchError(
                f"covariance {self.covariance.shape} does not match mean dim {self.mean.size}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size

    def _factor(self) -> tuple[np.ndarray, float]:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.covariance)
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        return self._chol, self._logdet

    def to_json_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GaussianModel":
        return cls(np.asarray(doc["mean"]), np.asarray(doc["covariance"]))


@dataclass
class GmmModel:
    weights: np.ndarray
    components: list[GaussianModel]
    loglik_trace: list[float] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.size != len(self.components):
            raise DimensionMismatchError("one weight per component required")
        if np.any(self.weights < 0.0) or abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise InvariantViolationError("GMM weights must form a simplex")

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def to_json_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "components": [c.to_json_dict() for c in self.components],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GmmModel":
        return cls(
            np.asarray(doc["weights"]),
            [GaussianModel.from_json_dict(c) for c in doc["components"]],
        )


@dataclass
class GenerativeClassifier:
    """Bayes posterior between a positive Gaussian and a negative GMM."""

    positive: GaussianModel
    negative: GmmModel
    prior_positive: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.prior_positive < 1.0):
            raise InvalidParameterError(f"prior_positive must be in (0, 1), got {self.prior_positive}")

    def to_json_dict(self) -> dict:
        return {
            "positive": self.positive.to_json_dict(),
            "negative": self.negative.to_json_dict(),
            "prior_positive": self.prior_positive,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GenerativeClassifier":
        return cls(
            GaussianModel.from_json_dict(doc["positive"]),
            GmmModel.from_json_dict(doc["negative"]),
            float(doc["prior_positive"]),
        )


# -- fitting -------------------------------------------------------------------


def fit_gaussian(samples) -> GaussianModel:
    """Maximum-likelihood Gaussian with a small isotropic regularizer."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatchError(f"expected an N x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("samples contain non-finite entries")
    n, d = x.shape
    if n < d + 1:
        raise TooFewSamplesError(f"need at least d+1={d + 1} samples, got {n}")
    mean = x.mean(axis=0)
    diff = x - mean
    cov = diff.T @ diff / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianModel(mean, cov + _regularization(cov) * np.eye(d))


def gaussian_logpdf(model: GaussianModel, x) -> float | np.ndarray:
    """Multivariate normal log-density; accepts a vector or an N x d matrix."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    if pts.shape[1] != model.dim:
        raise DimensionMismatchError(f"x has dim {pts.shape[1]}, model has {model.dim}")
    chol, logdet = model._factor()
    sol = np.linalg.solve(chol, (pts - model.mean).T)
    quad = np.sum(sol**2, axis=0)
    out = -0.5 * (model.dim * np.log(2.0 * np.pi) + logdet + quad)
    return float(out[0]) if single else out


def gaussian_sample(model: GaussianModel, n: int, seed) -> np.ndarray:
    """Deterministic draws from the model given a seed (or Generator)."""
    rng = np.random.default_rng(seed)
    chol, _ = model._factor()
    z = rng.standard_normal((int(n), model.dim))
    return model.mean + z @ chol.T


def sample_neighborhood(model: GaussianModel, scale: float, n: int, seed) -> np.ndarray:
    """Draws from N(mean, scale * covariance); widens the support for exploration."""
    if scale < 1.0:
        raise InvalidParameterError(f"covariance scale must be >= 1, got {scale}")
    widened = GaussianModel(model.mean, model.covariance * float(scale))
    return gaussian_sample(widened, n, seed)


def _component_logpdfs(model: GmmModel, pts: np.ndarray) -> np.ndarray:
    """N x K matrix of log(w_k) + log N(x | mu_k, Sigma_k)."""
    logs = np.empty((pts.shape[0], len(model.components)))
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    for k, comp in enumerate(model.components):
        logs[:, k] = logw[k] + gaussian_logpdf(comp, pts)
    return logs


def gmm_logpdf(model: GmmModel, x) -> float | np.ndarray:
    """Log-density of the mixture via log-sum-exp over components."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    if pts.shape[1] != model.dim:
        raise DimensionMismatchError(f"x has dim {pts.shape[1]}, model has {model.dim}")
    out = logsumexp(_component_logpdfs(model, pts), axis=1)
    return float(out[0]) if single else out


def gmm_sample(model: GmmModel, n: int, seed) -> np.ndarray:
    """Component choice by weight, then a Gaussian draw; seed-deterministic."""
    if n < 0:
        raise InvalidParameterError(f"n must be non-negative, got {n}")
    rng = np.random.default_rng(seed)
    choices = rng.choice(len(model.components), size=int(n), p=model.weights)
    out = np.empty((int(n), model.dim))
    for i, k in enumerate(choices):
        chol, _ = model.components[k]._factor()
        out[i] = model.components[k].mean + chol @ rng.standard_normal(model.dim)
    return out


def _kmeans_pp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding: spread the initial means across the data."""
    centers = [x[rng.integers(len(x))]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((x - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.asarray(centers)


def fit_gmm(
    samples,
    n_components: int,
    max_iter: int = 200,
    tol: float = 1e-7,
    seed: int = 0,
) -> GmmModel:
    """EM fit. The log-likelihood trace is stored on the returned model.

    Components that collapse (near-zero responsibility mass) are re-seeded from
    a random sample; three re-seeds of the same fit raise EmptyComponentError.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatchError(f"expected an N x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("samples contain non-finite entries")
    n, d = x.shape
    if n < n_components:
        raise TooFewSamplesError(f"{n} samples cannot support {n_components} components")

    rng = np.random.default_rng(seed)
    means = _kmeans_pp_centers(x, n_components, rng)
    base_cov = np.cov(x, rowvar=False).reshape(d, d)
    base_cov = 0.5 * (base_cov + base_cov.T) + _regularization(np.atleast_2d(base_cov)) * np.eye(d)
    covs = np.array([base_cov.copy() for _ in range(n_components)])
    weights = np.full(n_components, 1.0 / n_components)

    trace: list[float] = []
    reseeds = 0
    prev_ll = -np.inf
    for _ in range(max_iter):
        model = GmmModel(weights, [GaussianModel(means[k], covs[k]) for k in range(n_components)])
        joint = _component_logpdfs(model, x)
        point_ll = logsumexp(joint, axis=1)
        ll = float(point_ll.sum())
        trace.append(ll)
        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll

        resp = np.exp(joint - point_ll[:, None])
        mass = resp.sum(axis=0)
        empty = np.flatnonzero(mass < 1e-6)
        if empty.size:
            reseeds += len(empty)
            if reseeds >= 3:
                raise EmptyComponentError(
                    f"{reseeds} component re-seeds; data cannot support {n_components} components"
                )
            for k in empty:
                means[k] = x[rng.integers(n)]
                covs[k] = base_cov.copy()
                mass[k] = 1.0
                resp[:, k] = 1.0 / n
            prev_ll = -np.inf  # re-seed restarts the monotone segment
            continue

        weights = mass / mass.sum()
        for k in range(n_components):
            w = resp[:, k] / mass[k]
            means[k] = w @ x
            diff = x - means[k]
            cov = (diff * w[:, None]).T @ diff
            covs[k] = _floor_eigenvalues(0.5 * (cov + cov.T))

    fitted = GmmModel(weights, [GaussianModel(means[k], covs[k]) for k in range(n_components)])
    fitted.loglik_trace = trace
    return fitted


def responsibilities(model: GmmModel, x) -> np.ndarray:
    """Posterior component probabilities for each row of x."""
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    logs = _component_logpdfs(model, arr)
    return np.exp(logs - logsumexp(logs, axis=1)[:, None])


def classify(classifier: GenerativeClassifier, x) -> float | np.ndarray:
    """Posterior probability of the positive class, computed in log space."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    lp = np.log(classifier.prior_positive) + gaussian_logpdf(classifier.positive, pts)
    ln = np.log1p(-classifier.prior_positive) + gmm_logpdf(classifier.negative, pts)
    out = expit(lp - ln)
    return float(out[0]) if single else out
