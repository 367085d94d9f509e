"""Evaluation harness: curvature identity check, sparsification metrics,
reconstruction protocol, energy distance and pool filtering."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .rng import Purpose, Streams, draw_normal, draw_uniform
from .sampler import SamplerConfig, renoise, run_sampler
from .schedule import plan_timesteps
from .score import gmm_hessian_diag, gmm_marginal_params, gmm_score
from .uncertainty import UncertaintyConfig, UncertaintyHook, resolve_window


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class IdentityReport:
    """Monte-Carlo estimates of ``E[g_i^2]`` (lhs) and ``-E[H_ii]`` (rhs) per axis."""

    t: int
    n: int
    lhs: np.ndarray
    rhs: np.ndarray
    se_lhs: np.ndarray
    se_rhs: np.ndarray
    se_diff: np.ndarray
    max_z: float

    def to_dict(self):
        return {
            "t": self.t,
            "n": self.n,
            "lhs": self.lhs.tolist(),
            "rhs": self.rhs.tolist(),
            "se_lhs": self.se_lhs.tolist(),
            "se_rhs": self.se_rhs.tolist(),
            "se_diff": self.se_diff.tolist(),
            "max_z": self.max_z,
        }


def sample_marginal(dist, schedule, t, n, rng):
    """Exact draws from the noised mixture marginal at timestep ``t``."""
    m, v = gmm_marginal_params(dist, schedule, t)
    u = draw_uniform(rng, (n,))
    comp = np.minimum(np.searchsorted(np.cumsum(dist.weights), u, side="left"), dist.K - 1)
    z = draw_normal(rng, (n, dist.dim))
    return m[comp] + np.sqrt(v[comp]) * z


def fisher_identity_check(dist, schedule, t, N, rng):
    """Compare the mean squared score with the negated mean Hessian diagonal under q_t."""
    if N < 100:
        raise ConfigError(f"identity check needs N >= 100, got {N}")
    x = sample_marginal(dist, schedule, t, N, rng)
    g = gmm_score(dist, schedule, x, t)
    h = gmm_hessian_diag(dist, schedule, x, t)
    a, b = g * g, -h
    lhs, rhs = a.mean(axis=0), b.mean(axis=0)
    se_a = a.std(axis=0, ddof=1) / math.sqrt(N)
    se_b = b.std(axis=0, ddof=1) / math.sqrt(N)
    se_d = (a - b).std(axis=0, ddof=1) / math.sqrt(N)
    gap = np.abs(lhs - rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se_d > 0, gap / se_d, np.where(gap > 0, np.inf, 0.0))
    return IdentityReport(int(t), int(N), lhs, rhs, se_a, se_b, se_d, float(z.max()))


@dataclass
class SparsificationCurve:
    fractions: np.ndarray
    errors: np.ndarray


def _fractions(B):
    return np.arange(B) / B


def sparsification_curve(errors, uncertainty, B=100):
    """RMSE of the kept components after dropping the ``ceil(f n)`` most uncertain.

    Ties in uncertainty are removed in ascending index order.
    """
    err = np.asarray(errors, dtype=np.float64).ravel()
    unc = np.asarray(uncertainty, dtype=np.float64).ravel()
    if err.shape != unc.shape:
        raise ConfigError(f"errors ({err.size}) and uncertainty ({unc.size}) differ in length")
    n = err.size
    if B < 1 or n < B:
        raise ConfigError(f"need at least B={B} components, got {n}")
    order = np.lexsort((np.arange(n), -unc))
    sq = err[order] ** 2
    # suffix[j] = sum of squared errors of components kept after dropping j
    suffix = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    k = np.arange(B)
    drop = (k * n + B - 1) // B
    kept = n - drop
    curve = np.sqrt(np.maximum(suffix[drop], 0.0) / kept)
    return SparsificationCurve(_fractions(B), curve)


def oracle_curve(errors, B=100):
    """Best achievable curve: components removed in order of true error."""
    return sparsification_curve(errors, errors, B)


def random_curve_mean(errors, B=100, R=10, seed=0):
    """Mean of ``R`` curves with seeded random removal orders."""
    err = np.asarray(errors, dtype=np.float64).ravel()
    rng = Streams.for_samples(seed, R, Purpose.SHUFFLE)
    keys = rng.uniform((err.size,))
    curves = [sparsification_curve(err, keys[r], B).errors for r in range(R)]
    return SparsificationCurve(_fractions(B), np.mean(curves, axis=0))


def ause_aurg(method, oracle, random_mean):
    """Areas between normalised curves: ``(method - oracle)`` and ``(random - method)``."""
    f = method.fractions
    if not (np.array_equal(f, oracle.fractions) and np.array_equal(f, random_mean.fractions)):
        raise ConfigError("sparsification curves have misaligned fractions")
    ref = method.errors[0]
    if ref == 0:
        return 0.0, 0.0
    m, o, r = method.errors / ref, oracle.errors / oracle.errors[0], random_mean.errors / random_mean.errors[0]
    return float(_trapezoid(m - o, f)), float(_trapezoid(r - m, f))


def energy_distance(A, B):
    """``2 E|a-b| - E|a-a'| - E|b-b'|`` over all ordered pairs."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.size == 0 or B.size == 0:
        raise ConfigError("energy distance needs two nonempty sample sets")
    A = A.reshape(A.shape[0], -1) if A.ndim > 1 else A.reshape(-1, 1)
    B = B.reshape(B.shape[0], -1) if B.ndim > 1 else B.reshape(-1, 1)
    if A.shape[1] != B.shape[1]:
        raise ConfigError("sample sets differ in dimension")
    ab = kernels.pair_distance_sum(A, B) / (A.shape[0] * B.shape[0])
    aa = kernels.pair_distance_sum(A, A) / (A.shape[0] ** 2)
    bb = kernels.pair_distance_sum(B, B) / (B.shape[0] ** 2)
    return 2.0 * ab - aa - bb


def filter_pool(pool_uncertainties, keep_fraction):
    """Indices of the ``floor(keep_fraction * n)`` lowest-uncertainty samples, ascending."""
    u = np.asarray(pool_uncertainties, dtype=np.float64).ravel()
    if not (0.0 < keep_fraction <= 1.0):
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    keep = int(math.floor(keep_fraction * u.size + 1e-9))
    order = np.lexsort((np.arange(u.size), u))
    return np.sort(order[:keep])


def sign_test_pvalue(wins, n):
    """One-sided binomial sign-test p-value ``P(X >= wins)`` for ``X ~ Bin(n, 1/2)``."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0**n


@dataclass
class ReconstructionResult:
    errors: np.ndarray
    uncertainty: np.ndarray
    rmse: np.ndarray
    ause: np.ndarray
    aurg: np.ndarray
    ause_random: np.ndarray
    nfe: np.ndarray

    @property
    def mean_ause(self):
        return float(self.ause.mean())

    @property
    def mean_aurg(self):
        return float(self.aurg.mean())

    @property
    def mean_ause_random(self):
        return float(self.ause_random.mean())


def reconstruction_steps(T, S, window, start_t):
    """Indices into the restricted plan of the window steps of the full ``S``-step plan.

    The window is defined on the full generation, so reconstruction uses the
    same timesteps as sampling from pure noise.
    """
    full = plan_timesteps(T, S)
    plan = full.restricted(start_t)
    if len(plan) == 0 or plan.steps[0] != start_t:
        raise ConfigError(f"generation plan does not contain the start timestep {start_t}")
    wanted = {full.steps[i] for i in resolve_window(window, full)}
    return [i for i, t in enumerate(plan.steps) if t in wanted]


def reconstruction_eval(
    predictor, schedule, test_set, S, M, rng, *, window=(0.90, 0.96), start_t=None,
    B=100, R=10, hook=None, seed=0, pooled=False,
):
    """Noise each test vector to ``start_t`` (default ``ceil(T/2)``), denoise with
    DDIM, and score the uncertainty accumulated over ``window`` against the
    per-component reconstruction error.

    Args:
        rng: draws the forward noise; Streams with one row per test vector or a
            numpy Generator.
        hook: uncertainty hook recording maps under ``"uncertainty"`` at the
            steps given by ``reconstruction_steps``; defaults to the
            re-noising estimator with ``M`` copies.
        seed: root seed for the sampler's own streams and the random curves.
        pooled: build one curve over all components of the test set instead
            of one curve per vector; needed when the dimension is below ``B``.
    """
    x = np.atleast_2d(np.asarray(test_set, dtype=np.float64))
    if x.shape[0] == 0:
        raise ConfigError("test set is empty")
    T = schedule.T
    start_t = math.ceil(T / 2) if start_t is None else int(start_t)
    n, d = x.shape
    if start_t == 0:
        zeros = np.zeros(n)
        return ReconstructionResult(np.zeros_like(x), np.zeros_like(x), zeros, zeros, zeros.copy(),
                                    zeros.copy(), np.zeros(n, dtype=np.int64))
    plan = plan_timesteps(T, S).restricted(start_t)
    steps = reconstruction_steps(T, S, window, start_t)
    if hook is None:
        hook = UncertaintyHook(UncertaintyConfig(M=M, window=window), steps=steps)
    noisy = renoise(x, schedule, start_t, draw_normal(rng, x.shape))
    traj = run_sampler(predictor, schedule, SamplerConfig(plan, "ddim", seed, (hook,), keep_states=False), noisy)
    maps = traj.records.get("uncertainty", [])
    unc = np.zeros_like(x)
    wanted = {plan.steps[i] for i in steps}
    for m in maps:
        if m.t in wanted:
            unc += m.values
    err = np.abs(traj.x0 - x)
    rmse = np.sqrt(np.mean(err * err, axis=1))
    groups = [(err.ravel(), unc.ravel())] if pooled else list(zip(err, unc))
    ause = np.empty(len(groups))
    aurg = np.empty(len(groups))
    ause_rand = np.empty(len(groups))
    for i, (e, u) in enumerate(groups):
        curve = sparsification_curve(e, u, B)
        orc = oracle_curve(e, B)
        rnd = random_curve_mean(e, B, R, seed=seed + i)
        ause[i], aurg[i] = ause_aurg(curve, orc, rnd)
        ause_rand[i], _ = ause_aurg(rnd, orc, rnd)
    return ReconstructionResult(err, unc, rmse, ause, aurg, ause_rand, traj.nfe)
