"""Noise-predictor contract, exact analytic predictors and curvature oracles.

Everything here works in the discrete noising model
``x_t = sqrt(alpha_bar_t) x_0 + sigma_t eps``. For a diagonal Gaussian mixture
data distribution the noised marginal is again a diagonal mixture, so its
log-density, score and Hessian diagonal are available in closed form.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import kernels
from .errors import ConfigError
from .rng import draw_normal, draw_uniform


class NoisePredictor(Protocol):
    """Anything mapping (state, timestep) to predicted noise of the same shape.

    ``x`` has shape (n, d) or (d,); rows are independent samples.
    """

    def predict(self, x, t): ...


def _rows(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise ConfigError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x2, single


@dataclass(frozen=True, eq=False)
class GmmDistribution:
    """Axis-aligned Gaussian mixture. A zero variance entry is a point mass along that axis."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.array(self.means, dtype=np.float64))
        var = np.atleast_2d(np.array(self.variances, dtype=np.float64))
        if w.size == 0:
            raise ConfigError("mixture needs at least one component")
        if mu.shape != (w.size, mu.shape[1]) or var.shape != mu.shape:
            raise ConfigError(
                f"inconsistent mixture shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))) or np.any(var < 0):
            raise ConfigError("means must be finite and variances nonnegative")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - {"weights", "means", "variances"}
        if unknown:
            raise ConfigError(f"unknown mixture keys: {sorted(unknown)}")
        try:
            return cls(doc["weights"], doc["means"], doc["variances"])
        except KeyError as exc:
            raise ConfigError(f"mixture definition missing {exc.args[0]!r}") from None

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    def sample(self, n, rng):
        """Draw ``n`` points; ``rng`` is a numpy Generator or per-sample Streams."""
        u = draw_uniform(rng, (n,))
        comp = np.searchsorted(np.cumsum(self.weights), u, side="left")
        comp = np.minimum(comp, self.K - 1)
        z = draw_normal(rng, (n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp]) * z


def gmm_marginal_params(dist, schedule, t):
    """Component means and variances of the noised marginal at timestep ``t``."""
    if not (1 <= t <= schedule.T):
        raise ConfigError(f"timestep {t} outside [1, {schedule.T}]")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * dist.means, ab * dist.variances + (1.0 - ab)


def _stats(dist, schedule, x, t):
    m, v = gmm_marginal_params(dist, schedule, t)
    x2, single = _rows(x, dist.dim)
    with np.errstate(divide="ignore"):
        logw = np.log(dist.weights)
    return kernels.gmm_stats(x2, m, v, logw), single


def gmm_marginal_logpdf(dist, schedule, x, t):
    """``log q_t(x)``; scalar for a single point, shape (n,) for a batch."""
    (logpdf, _, _), single = _stats(dist, schedule, x, t)
    return float(logpdf[0]) if single else logpdf


def gmm_score(dist, schedule, x, t):
    """``grad_x log q_t(x)`` of the noised mixture."""
    (_, grad, _), single = _stats(dist, schedule, x, t)
    return grad[0] if single else grad


def gmm_hessian_diag(dist, schedule, x, t):
    """Diagonal of the Hessian of ``log q_t`` at ``x``."""
    (_, _, hess), single = _stats(dist, schedule, x, t)
    return hess[0] if single else hess


def convert_noise_score(values, sigma, direction):
    """Convert between predicted noise and score units.

    ``direction`` is ``"noise_to_score"`` (``-eps / sigma``) or
    ``"score_to_noise"`` (``-sigma * score``).
    """
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    values = np.asarray(values, dtype=np.float64)
    if direction == "noise_to_score":
        return -values / sigma
    if direction == "score_to_noise":
        return -sigma * values
    raise ConfigError(f"unknown conversion direction {direction!r}")


class GmmPredictor:
    """Exact noise predictor for a Gaussian-mixture data distribution."""

    def __init__(self, dist, schedule):
        self.dist = dist
        self.schedule = schedule

    def predict(self, x, t):
        return -self.schedule.sigma(t) * gmm_score(self.dist, self.schedule, x, t)


@dataclass(frozen=True, eq=False)
class DatasetPredictorModel:
    """Bayes-optimal noise predictor for the empirical distribution of ``points``."""

    points: np.ndarray
    schedule: object

    def __post_init__(self):
        pts = np.atleast_2d(np.array(self.points, dtype=np.float64))
        if pts.shape[0] < 1 or not np.all(np.isfinite(pts)):
            raise ConfigError("dataset needs at least one finite point")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_dict(cls, doc, schedule):
        unknown = set(doc) - {"points"}
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(doc["points"], schedule)

    def predict(self, x, t):
        return dataset_predict_noise(self, x, t)


_SOFTMAX_BLOCK = 1 << 21


def dataset_predict_noise(model, x, t):
    """Optimal ``eps*(x, t) = (x - sqrt(ab) E[x0 | x]) / sigma`` for the point set."""
    sched = model.schedule
    if not (1 <= t <= sched.T):
        raise ConfigError(f"timestep {t} outside [1, {sched.T}]")
    pts = model.points
    x2, single = _rows(x, pts.shape[1])
    ab = sched.alpha_bar(t)
    s2 = 1.0 - ab
    sq = np.sqrt(ab)
    # The |x|^2 term is constant per row and cancels inside the softmax.
    bias = -0.5 * ab * np.einsum("pd,pd->p", pts, pts)
    post = np.empty_like(x2)
    rows = max(1, _SOFTMAX_BLOCK // pts.shape[0])
    for start in range(0, x2.shape[0], rows):
        blk = x2[start:start + rows]
        logits = (sq * blk @ pts.T + bias) / s2
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        post[start:start + rows] = w @ pts
    eps = (x2 - sq * post) / np.sqrt(s2)
    return eps[0] if single else eps
