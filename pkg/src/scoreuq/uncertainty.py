"""Score-variance uncertainty maps.

At a denoising step the current noise prediction gives a clean-data estimate;
that estimate is re-noised ``M`` times back to the same timestep and the
predictor is evaluated on each copy. The per-component unbiased variance of
those predictions is the uncertainty map.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .rng import Purpose, Streams, draw_normal
from .sampler import predict_x0, renoise


@dataclass(eq=False)
class UncertaintyMap:
    """Per-component variance of predicted noise at timestep ``t``.

    ``draws`` keeps the ``M`` standard-normal tensors used for re-noising so a
    later gradient evaluation can reuse them; ``nfe`` is the number of
    predictor evaluations this estimate spent per sample.
    """

    t: int
    values: np.ndarray
    draws: np.ndarray = None
    nfe: int = 0


@dataclass(frozen=True)
class UncertaintyConfig:
    M: int = 5
    window: tuple = (0.90, 0.96)
    scheme: str = "diffusion"
    sigma_p: float = None

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(float(w) for w in self.window))
        a, b = self.window
        if self.M < 2:
            raise ConfigError(f"M must be at least 2, got {self.M}")
        if not (0.0 <= a < b <= 1.0):
            raise ConfigError(f"window must satisfy 0 <= a < b <= 1, got {self.window}")
        if self.scheme not in ("diffusion", "gaussian"):
            raise ConfigError(f"unknown perturbation scheme {self.scheme!r}")
        if self.scheme == "gaussian" and not (self.sigma_p is not None and self.sigma_p > 0):
            raise ConfigError("gaussian scheme needs sigma_p > 0")


def unbiased_variance(stack):
    """Variance over axis 0 with an ``M - 1`` denominator; exactly 0 where all entries agree."""
    stack = np.asarray(stack, dtype=np.float64)
    dev = stack - stack.mean(axis=0)
    var = np.einsum("m...,m...->...", dev, dev) / (stack.shape[0] - 1)
    return np.where(np.all(stack == stack[0], axis=0), 0.0, var)


def _draws(rng, M, shape):
    if isinstance(rng, Streams):
        return np.moveaxis(draw_normal(rng, (shape[0], M) + tuple(shape[1:])), 1, 0)
    return draw_normal(rng, (M,) + tuple(shape))


def variance_from_noise(predictor, schedule, x_t, t, eps, draws):
    """Uncertainty as a function of the predicted noise ``eps`` for fixed draws.

    Runs the full chain eps -> x0 estimate -> re-noised copies -> predictions ->
    variance, spending ``len(draws)`` predictor evaluations.
    """
    x0 = predict_x0(x_t, eps, schedule.alpha_bar(t))
    scores = [np.asarray(predictor.predict(renoise(x0, schedule, t, d), t)) for d in draws]
    return unbiased_variance(scores)


def estimate_step_uncertainty(predictor, schedule, x_t, t, M=5, rng=None, *, draws=None, eps=None):
    """Uncertainty map of ``x_t`` at timestep ``t``.

    Args:
        predictor: noise predictor.
        schedule: noise schedule.
        x_t: states, shape (n, d) or (d,).
        t: timestep.
        M: number of re-noised copies (>= 2).
        rng: Streams (one row per sample) or numpy Generator for the draws.
        draws: optional frozen draws of shape (M, *x_t.shape); overrides ``rng``.
        eps: the predictor's output at ``x_t`` if already computed. When given,
            the estimate costs ``M`` evaluations instead of ``M + 1``.
    """
    if M < 2:
        raise ConfigError(f"M must be at least 2, got {M}")
    if not (1 <= t <= schedule.T):
        raise ConfigError(f"timestep {t} outside [1, {schedule.T}]")
    x_t = np.asarray(x_t, dtype=np.float64)
    nfe = M
    if eps is None:
        eps = np.asarray(predictor.predict(x_t, t), dtype=np.float64)
        nfe += 1
    if draws is None:
        if rng is None:
            raise ConfigError("either rng or frozen draws are required")
        draws = _draws(rng, M, x_t.shape)
    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape != (M,) + x_t.shape:
        raise ConfigError(f"draws must have shape {(M,) + x_t.shape}, got {draws.shape}")
    values = variance_from_noise(predictor, schedule, x_t, t, eps, draws)
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite uncertainty at t={t}")
    return UncertaintyMap(int(t), values, draws, nfe)


def gaussian_perturbation_uncertainty(predictor, x_t, t, M, sigma_p, rng, *, draws=None):
    """Baseline: variance of predictions at ``x_t + sigma_p * z_i``."""
    if M < 2:
        raise ConfigError(f"M must be at least 2, got {M}")
    if not sigma_p > 0:
        raise ConfigError(f"sigma_p must be positive, got {sigma_p}")
    x_t = np.asarray(x_t, dtype=np.float64)
    if draws is None:
        draws = _draws(rng, M, x_t.shape)
    outs = [np.asarray(predictor.predict(x_t + sigma_p * z, t)) for z in draws]
    return UncertaintyMap(int(t), unbiased_variance(outs), np.asarray(draws), M)


def resolve_window(window, plan):
    """Step indices ``i`` (0 at t = T) whose progress ``i / S`` lies in ``window``."""
    a, b = window
    S = len(plan)
    tol = 1e-9
    idx = [i for i in range(S) if a * S - tol <= i <= b * S + tol]
    if not idx:
        raise ConfigError(f"window {tuple(window)} selects no step of a {S}-step plan")
    return idx


def aggregate_uncertainty(maps, window, plan):
    """Sum of all components of the maps whose step falls inside ``window``.

    Map values of shape (n, d) give one total per sample, shape (n,).
    """
    steps = resolve_window(window, plan)
    wanted = {plan.steps[i] for i in steps}
    chosen = [m for m in maps if m.t in wanted]
    if not chosen:
        raise ConfigError("no uncertainty map falls inside the window")
    got = {m.t for m in chosen}
    if got != wanted:
        raise ConfigError(f"maps missing for window timesteps {sorted(wanted - got)}")
    return sum(np.asarray(m.values).sum(axis=-1) for m in chosen)


def uncertainty_profile(per_step_totals):
    """Column-wise mean and unbiased std of a (samples, steps) matrix."""
    totals = np.asarray(per_step_totals, dtype=np.float64)
    if totals.ndim != 2 or totals.shape[0] < 2:
        raise ConfigError("profile needs a (samples, steps) matrix with at least 2 samples")
    return totals.mean(axis=0), totals.std(axis=0, ddof=1)


class UncertaintyHook:
    """Sampler hook recording an uncertainty map at selected steps.

    Args:
        config: estimation settings.
        steps: step indices to estimate at; defaults to ``config.window``
            resolved against the sampler plan. Pass ``"all"`` for every step.
    """

    key = "uncertainty"

    def __init__(self, config=None, steps=None):
        self.config = config or UncertaintyConfig()
        self.steps = steps

    def _selected(self, plan):
        if self.steps == "all":
            return set(range(len(plan)))
        if self.steps is None:
            return set(resolve_window(self.config.window, plan))
        return set(self.steps)

    def __call__(self, ctx):
        if ctx.index not in self._selected(ctx.config.plan):
            return
        cfg = self.config
        rng = ctx.streams(Purpose.UNCERTAINTY)
        if cfg.scheme == "diffusion":
            umap = estimate_step_uncertainty(
                ctx.predictor, ctx.schedule, ctx.x_t, ctx.t, cfg.M, rng, eps=ctx.eps
            )
        else:
            umap = gaussian_perturbation_uncertainty(ctx.predictor, ctx.x_t, ctx.t, cfg.M, cfg.sigma_p, rng)
        umap.draws = None
        ctx.add_nfe(umap.nfe)
        ctx.record(self.key, umap)
