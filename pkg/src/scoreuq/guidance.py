"""Uncertainty-guided sampling.

At each guided step the components whose uncertainty exceeds a percentile
threshold have their predicted noise moved along the derivative of their own
uncertainty with respect to that noise component (gradient ascent, strength
``lam``). The derivative is taken through the full re-noising pipeline with
the estimate's draws held fixed, so it is a smooth deterministic function.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import Purpose, Streams, draw_uniform
from .sampler import run_sampler
from .uncertainty import estimate_step_uncertainty, resolve_window, variance_from_noise


@dataclass(frozen=True)
class GuidanceConfig:
    p: float = 95.0
    lam: float = 1.0
    threshold_mode: str = "per_step_percentile"
    thresholds: dict = field(default_factory=dict)
    grad_estimator: str = "central_fd"
    h_rel: float = 1e-4
    spsa_k: int = 4
    M: int = 5
    guided_window: tuple = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "guided_window", tuple(float(w) for w in self.guided_window))
        object.__setattr__(self, "thresholds", {int(k): float(v) for k, v in dict(self.thresholds).items()})
        if not (0.0 <= self.p <= 100.0):
            raise ConfigError(f"percentile p must lie in [0, 100], got {self.p}")
        if not self.h_rel > 0:
            raise ConfigError(f"h_rel must be positive, got {self.h_rel}")
        if self.threshold_mode not in ("per_step_percentile", "calibrated"):
            raise ConfigError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.grad_estimator not in ("central_fd", "spsa"):
            raise ConfigError(f"unknown grad_estimator {self.grad_estimator!r}")
        if self.M < 2 or self.spsa_k < 1:
            raise ConfigError("M must be >= 2 and spsa_k >= 1")
        a, b = self.guided_window
        if not (0.0 <= a <= b <= 1.0):
            raise ConfigError(f"invalid guided_window {self.guided_window}")


def percentile_mask(U, p):
    """Components strictly above the ``p``-th percentile of their own map (last axis)."""
    U = np.asarray(U, dtype=np.float64)
    thr = np.percentile(U, p, axis=-1, keepdims=True, method="linear")
    return U > thr


def threshold_mask(U, tau):
    """Components strictly above a fixed threshold ``tau``."""
    return np.asarray(U) > tau


def calibrate_thresholds(maps, p):
    """Per-timestep ``p``-th percentile of pooled uncertainty values.

    ``maps`` is an iterable of UncertaintyMap (possibly several per timestep,
    e.g. from different batches); returns ``{t: tau_t}``.
    """
    pooled = {}
    for m in maps:
        pooled.setdefault(int(m.t), []).append(np.asarray(m.values).ravel())
    return {t: float(np.percentile(np.concatenate(v), p)) for t, v in sorted(pooled.items())}


def _as_rows(a):
    a = np.asarray(a)
    return a.reshape(1, -1) if a.ndim == 1 else a.reshape(a.shape[0], -1)


def uncertainty_grad_diag(predictor, schedule, x_t, t, eps, mask, draws, h_rel=1e-4):
    """Central-difference ``dU_i / d eps_i`` for masked components, 0 elsewhere.

    Each masked component ``i`` is perturbed by ``h = h_rel * (1 + |eps_i|)``
    in both directions and the whole pipeline re-evaluated with the frozen
    ``draws`` (shape (M, *x_t.shape)).

    Returns:
        ``(grad, nfe)`` where ``nfe`` counts the extra predictor evaluations per
        sample (``2 * M`` per masked component).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    shape = x_t.shape
    draws = np.asarray(draws, dtype=np.float64)
    M = draws.shape[0]
    X, E, K = _as_rows(x_t), _as_rows(eps).astype(np.float64), _as_rows(mask).astype(bool)
    D = draws.reshape((M,) + X.shape)
    grad = np.zeros_like(X)
    nfe = np.zeros(X.shape[0], dtype=np.int64)
    for i in range(X.shape[1]):
        rows = np.flatnonzero(K[:, i])
        if rows.size == 0:
            continue
        e = E[rows]
        h = h_rel * (1.0 + np.abs(e[:, i]))
        plus, minus = e.copy(), e.copy()
        plus[:, i] += h
        minus[:, i] -= h
        sub_draws = D[:, rows]
        u_plus = variance_from_noise(predictor, schedule, X[rows], t, plus, sub_draws)[:, i]
        u_minus = variance_from_noise(predictor, schedule, X[rows], t, minus, sub_draws)[:, i]
        grad[rows, i] = (u_plus - u_minus) / (plus[:, i] - minus[:, i])
        nfe[rows] += 2 * M
    if len(shape) == 1:
        return grad[0], int(nfe[0])
    return grad.reshape(shape), nfe


def uncertainty_grad_spsa(predictor, schedule, x_t, t, eps, mask, draws, rng, h_rel=1e-4, K=4):
    """Simultaneous-perturbation estimate of the same diagonal derivative.

    All masked components of a sample move together by ``h * delta`` with
    Rademacher ``delta``; off-diagonal leakage averages out over ``K`` rounds.
    Costs ``2 * M * K`` evaluations per sample that has any masked component.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    shape = x_t.shape
    draws = np.asarray(draws, dtype=np.float64)
    M = draws.shape[0]
    X, E, Km = _as_rows(x_t), _as_rows(eps).astype(np.float64), _as_rows(mask).astype(bool)
    D = draws.reshape((M,) + X.shape)
    rows = np.flatnonzero(Km.any(axis=1))
    grad = np.zeros_like(X)
    nfe = np.zeros(X.shape[0], dtype=np.int64)
    if rows.size == 0:
        return (grad[0], 0) if len(shape) == 1 else (grad.reshape(shape), nfe)
    e = E[rows]
    h = h_rel * (1.0 + np.abs(e))
    acc = np.zeros_like(e)
    for _ in range(K):
        u = draw_uniform(rng, X.shape)[rows] if isinstance(rng, Streams) else rng.random(e.shape)
        delta = np.where(u < 0.5, -1.0, 1.0) * Km[rows]
        plus, minus = e + h * delta, e - h * delta
        u_plus = variance_from_noise(predictor, schedule, X[rows], t, plus, D[:, rows])
        u_minus = variance_from_noise(predictor, schedule, X[rows], t, minus, D[:, rows])
        step = plus - minus
        with np.errstate(divide="ignore", invalid="ignore"):
            acc += np.where(Km[rows], (u_plus - u_minus) / step, 0.0)
    grad[rows] = acc / K
    nfe[rows] += 2 * M * K
    if len(shape) == 1:
        return grad[0], int(nfe[0])
    return grad.reshape(shape), nfe


def apply_guidance(eps, U, mask, grad, lam):
    """``eps + lam * (mask * grad)``; unmasked components are returned untouched."""
    eps = np.asarray(eps, dtype=np.float64)
    for name, arr in (("U", U), ("mask", mask), ("grad", grad)):
        if np.shape(arr) != eps.shape:
            raise ConfigError(f"{name} shape {np.shape(arr)} does not match eps shape {eps.shape}")
    return np.where(np.asarray(mask, dtype=bool), eps + lam * np.asarray(grad), eps)


class GuidanceHook:
    """Sampler hook applying uncertainty guidance inside ``config.guided_window``."""

    key = "guidance_uncertainty"

    def __init__(self, config=None):
        self.config = config or GuidanceConfig()

    def _guided(self, plan):
        a, b = self.config.guided_window
        if (a, b) == (0.0, 1.0):
            return set(range(len(plan)))
        return set(resolve_window((a, b), plan))

    def __call__(self, ctx):
        cfg = self.config
        if ctx.index not in self._guided(ctx.config.plan):
            return
        umap = estimate_step_uncertainty(
            ctx.predictor, ctx.schedule, ctx.x_t, ctx.t, cfg.M, ctx.streams(Purpose.UNCERTAINTY), eps=ctx.eps
        )
        ctx.add_nfe(umap.nfe)
        if cfg.threshold_mode == "calibrated":
            if ctx.t not in cfg.thresholds:
                raise ConfigError(f"no calibrated threshold for timestep {ctx.t}")
            mask = threshold_mask(umap.values, cfg.thresholds[ctx.t])
        else:
            mask = percentile_mask(umap.values, cfg.p)
        if cfg.grad_estimator == "central_fd":
            grad, nfe = uncertainty_grad_diag(
                ctx.predictor, ctx.schedule, ctx.x_t, ctx.t, ctx.eps, mask, umap.draws, cfg.h_rel
            )
        else:
            grad, nfe = uncertainty_grad_spsa(
                ctx.predictor, ctx.schedule, ctx.x_t, ctx.t, ctx.eps, mask, umap.draws,
                ctx.streams(Purpose.SHUFFLE), cfg.h_rel, cfg.spsa_k,
            )
        ctx.add_nfe(nfe)
        ctx.eps = apply_guidance(ctx.eps, umap.values, mask, grad, cfg.lam)
        umap.draws = None
        ctx.record(self.key, umap)
        ctx.record("mask", (ctx.t, mask))


def guided_sample(predictor, schedule, sampler_config, guidance_config, x_T):
    """Run the sampler with uncertainty guidance appended to its hooks."""
    hooks = tuple(sampler_config.hooks) + (GuidanceHook(guidance_config),)
    cfg = type(sampler_config)(**{**sampler_config.__dict__, "hooks": hooks})
    return run_sampler(predictor, schedule, cfg, x_T)
