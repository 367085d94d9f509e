"""Discrete-time DDPM / DDIM denoising steps and the sampling loop.

States are arrays of shape (n, d): one row per sample. The loop calls the
predictor once per plan step on the whole batch, then runs any hooks, which
may replace the predicted noise and must report the extra predictor
evaluations they spent. NFE is tracked per sample.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, HookError, NumericError
from .rng import Purpose, Streams
from .schedule import TimestepPlan


def predict_x0(x_t, eps, alpha_bar):
    """Single-step clean-data estimate ``(x_t - sqrt(1 - ab) eps) / sqrt(ab)``."""
    if not alpha_bar > 0:
        raise ConfigError(f"alpha_bar must be positive, got {alpha_bar}")
    return (np.asarray(x_t) - np.sqrt(1.0 - alpha_bar) * np.asarray(eps)) / np.sqrt(alpha_bar)


def ddim_step(x_t, eps, alpha_bar_t, alpha_bar_prev):
    """Deterministic (eta = 0) DDIM update from ``alpha_bar_t`` to ``alpha_bar_prev``."""
    if not (0.0 < alpha_bar_t <= alpha_bar_prev <= 1.0):
        raise ConfigError(
            f"need 0 < alpha_bar_t <= alpha_bar_prev <= 1, got {alpha_bar_t}, {alpha_bar_prev}"
        )
    if alpha_bar_prev == alpha_bar_t:
        return np.array(x_t, dtype=np.float64, copy=True)
    x0 = predict_x0(x_t, eps, alpha_bar_t)
    return np.sqrt(alpha_bar_prev) * x0 + np.sqrt(1.0 - alpha_bar_prev) * np.asarray(eps)


def ddpm_step(x_t, eps, schedule, t, noise, t_prev=None, variance="beta"):
    """Ancestral update ``x_prev = mu(x_t, eps) + sqrt(var) * noise``.

    For consecutive steps the schedule's own ``alpha_t``/``beta_t`` are used;
    when the plan skips timesteps the effective ``alpha = ab_t / ab_prev``.
    ``variance`` selects ``"beta"`` or the posterior ``"beta_tilde"``. No noise
    is added on the step that lands on ``t_prev == 0``.
    """
    t = int(t)
    t_prev = t - 1 if t_prev is None else int(t_prev)
    if not (1 <= t <= schedule.T) or not (0 <= t_prev < t):
        raise ConfigError(f"invalid DDPM transition {t} -> {t_prev} for T={schedule.T}")
    if t_prev == t - 1:
        alpha, beta = schedule.alpha(t), schedule.beta(t)
    else:
        alpha = schedule.alpha_bar(t) / schedule.alpha_bar(t_prev)
        beta = 1.0 - alpha
    mean = (np.asarray(x_t) - (beta / schedule.sigma(t)) * np.asarray(eps)) / np.sqrt(alpha)
    if t_prev == 0:
        return mean
    if variance == "beta":
        var = beta
    elif variance == "beta_tilde":
        var = (1.0 - schedule.alpha_bar(t_prev)) / (1.0 - schedule.alpha_bar(t)) * beta
    else:
        raise ConfigError(f"unknown DDPM variance {variance!r}")
    noise = np.asarray(noise)
    if noise.shape != mean.shape:
        raise ConfigError(f"noise shape {noise.shape} does not match state shape {mean.shape}")
    return mean + np.sqrt(var) * noise


def renoise(x0, schedule, t, eps):
    """Reparametrised draw from q(x_t | x0): ``sqrt(ab_t) x0 + sigma_t eps``."""
    return np.sqrt(schedule.alpha_bar(t)) * np.asarray(x0) + schedule.sigma(t) * np.asarray(eps)


@dataclass
class SamplerConfig:
    plan: TimestepPlan
    kind: str = "ddim"
    seed: int = 0
    hooks: tuple = ()
    variance: str = "beta"
    keep_states: bool = True
    sample_start: int = 0

    def __post_init__(self):
        if self.kind not in ("ddim", "ddpm"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if len(self.plan) == 0:
            raise ConfigError("empty timestep plan")
        self.hooks = tuple(self.hooks)


@dataclass
class Trajectory:
    """Visited states (one per plan step, before denoising), the final sample and NFE."""

    timesteps: list
    states: list
    x0: np.ndarray
    nfe: np.ndarray
    records: dict = field(default_factory=dict)


class StepContext:
    """Mutable per-step view handed to hooks.

    Hooks read ``x_t``/``eps``, may assign a new ``eps``, must call
    :meth:`add_nfe` for every predictor evaluation they make, and can keep
    results with :meth:`record`.
    """

    def __init__(self, predictor, schedule, config, nfe, records, streams):
        self.predictor = predictor
        self.schedule = schedule
        self.config = config
        self.nfe = nfe
        self.records = records
        self._streams = streams
        self.index = 0
        self.t = 0
        self.t_prev = 0
        self.x_t = None
        self.eps = None

    @property
    def n(self):
        return self.nfe.shape[0]

    @property
    def progress(self):
        return self.index / len(self.config.plan)

    def streams(self, purpose):
        """Per-sample random streams of one purpose family, created on first use."""
        if purpose not in self._streams:
            self._streams[purpose] = Streams.for_samples(
                self.config.seed, self.n, purpose, self.config.sample_start
            )
        return self._streams[purpose]

    def add_nfe(self, count):
        self.nfe += np.asarray(count, dtype=np.int64)

    def record(self, key, value):
        self.records.setdefault(key, []).append(value)


def run_sampler(predictor, schedule, config, x_T):
    """Denoise ``x_T`` along ``config.plan`` with the configured step rule."""
    x = np.array(x_T, dtype=np.float64, copy=True)
    if x.ndim != 2:
        raise ConfigError(f"x_T must have shape (n, d), got {x.shape}")
    plan = config.plan
    if plan.T != schedule.T:
        raise ConfigError(f"plan built for T={plan.T} but schedule has T={schedule.T}")
    nfe = np.zeros(x.shape[0], dtype=np.int64)
    records = {}
    streams = {}
    ctx = StepContext(predictor, schedule, config, nfe, records, streams)
    timesteps, states = [], []
    for i, t in enumerate(plan.steps):
        t_prev = plan.prev(i)
        if config.keep_states:
            states.append(x.copy())
        timesteps.append(t)
        eps = np.asarray(predictor.predict(x, t), dtype=np.float64)
        nfe += 1
        if eps.shape != x.shape:
            raise NumericError(f"predictor returned shape {eps.shape} for input {x.shape}")
        ctx.index, ctx.t, ctx.t_prev, ctx.x_t, ctx.eps = i, t, t_prev, x, eps
        for hook in config.hooks:
            try:
                hook(ctx)
            except HookError:
                raise
            except Exception as exc:
                raise HookError(i, t, exc) from exc
        eps = ctx.eps
        if config.kind == "ddim":
            x = ddim_step(x, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_prev))
        else:
            noise = ctx.streams(Purpose.SAMPLER).normal(x.shape[1:]) if t_prev > 0 else np.zeros_like(x)
            x = ddpm_step(x, eps, schedule, t, noise, t_prev=t_prev, variance=config.variance)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state after step {i} (t={t})")
    return Trajectory(timesteps, states, x, nfe, records)


class CountingPredictor:
    """Wraps a predictor and counts evaluated rows (one row = one sample evaluation)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.rows = 0

    def predict(self, x, t):
        x = np.asarray(x)
        self.calls += 1
        self.rows += 1 if x.ndim == 1 else x.shape[0]
        return self.inner.predict(x, t)
