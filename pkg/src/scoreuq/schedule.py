"""Discrete noise schedules and generation-time timestep plans.

Tables are stored 0-based (``betas[t - 1]`` is beta at timestep ``t``); use the
accessor methods to query by timestep. Timestep 0 denotes clean data, with
``alpha_bar(0) == 1``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def _check(self, t, allow_zero=False):
        lo = 0 if allow_zero else 1
        if not (lo <= int(t) <= self.T):
            raise ConfigError(f"timestep {t} outside [{lo}, {self.T}]")
        return int(t)

    def beta(self, t):
        return float(self.betas[self._check(t) - 1])

    def alpha(self, t):
        return float(self.alphas[self._check(t) - 1])

    def alpha_bar(self, t):
        t = self._check(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def sigma(self, t):
        t = self._check(t, allow_zero=True)
        return 0.0 if t == 0 else float(self.sigmas[t - 1])

    def to_dict(self):
        return {"betas": self.betas.tolist()}


def from_betas(betas):
    """Build a schedule from an explicit beta sequence, each in (0, 1)."""
    betas = np.array(betas, dtype=np.float64).reshape(-1)
    if betas.size == 0:
        raise ConfigError("beta sequence is empty")
    if not np.all(np.isfinite(betas)) or np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ConfigError("every beta must lie in the open interval (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if np.any(np.diff(alpha_bars) >= 0.0) or alpha_bars[0] >= 1.0:
        raise ConfigError("alpha_bar is not strictly decreasing; betas too small to resolve")
    sigmas = np.sqrt(1.0 - alpha_bars)
    for arr in (betas, alphas, alpha_bars, sigmas):
        arr.setflags(write=False)
    return NoiseSchedule(betas, alphas, alpha_bars, sigmas)


def build_linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    """Linearly spaced betas from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    return from_betas(np.linspace(beta_start, beta_end, int(T)))


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly decreasing generation timesteps, all within ``[1, T]``."""

    steps: tuple
    T: int

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if not steps:
            raise ConfigError("timestep plan is empty")
        if any(s < 1 or s > self.T for s in steps):
            raise ConfigError(f"plan entries must lie in [1, {self.T}]")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ConfigError("plan must be strictly decreasing")
        object.__setattr__(self, "steps", steps)

    @property
    def S(self):
        return len(self.steps)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def prev(self, i):
        """Timestep reached after denoising step ``i`` (0 after the last step)."""
        return self.steps[i + 1] if i + 1 < len(self.steps) else 0

    def restricted(self, max_t):
        """Sub-plan keeping only entries ``<= max_t``."""
        return TimestepPlan(tuple(s for s in self.steps if s <= max_t), self.T)


def plan_timesteps(T, S):
    """Uniform-stride plan anchored at ``T``: ``T, T-k, T-2k, ...`` with ``k = T // S``."""
    if S < 1 or T < 1:
        raise ConfigError(f"need positive T and S, got T={T}, S={S}")
    if S > T:
        raise ConfigError(f"cannot plan {S} generation steps over {T} timesteps")
    k = T // S
    return TimestepPlan(tuple(T - i * k for i in range(S)), int(T))
