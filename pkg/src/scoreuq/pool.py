"""Chunked sampling over a worker pool.

Samples are split into fixed-size chunks independent of the thread count;
each chunk draws from its own per-sample streams and results are merged in
index order, so outputs are bit-identical for any number of workers.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .guidance import GuidanceHook
from .rng import Purpose, Streams
from .sampler import SamplerConfig, run_sampler

DEFAULT_CHUNK = 256


def resolve_threads(threads=None):
    """``threads`` if given, else ``$SCOREUQ_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get("SCOREUQ_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise ConfigError(f"thread count must be positive, got {threads}")
    return threads


def prior_draws(seed, n, dim, start=0):
    """Initial states x_T for samples ``start .. start+n-1``."""
    return Streams.for_samples(seed, n, Purpose.PRIOR, start).normal((dim,))


@dataclass
class PoolResult:
    x0: np.ndarray
    nfe: np.ndarray
    uncertainty: dict = field(default_factory=dict)
    guidance_uncertainty: dict = field(default_factory=dict)
    states: list = None
    timesteps: list = None

    def totals(self, timesteps):
        """Per-sample summed uncertainty over the given timesteps."""
        return sum(self.uncertainty[t].sum(axis=1) for t in timesteps)


def _merge(chunks, key):
    out = {}
    for rec in chunks:
        for m in rec.get(key, []):
            out.setdefault(m.t, []).append(m.values)
    return {t: np.concatenate(v, axis=0) for t, v in out.items()}


def sample_pool(predictor, schedule, plan, n, dim, seed, *, hooks=(), guidance=None, kind="ddim",
                variance="beta", threads=None, chunk_size=DEFAULT_CHUNK, keep_states=False, x_T=None):
    """Draw ``n`` samples (optionally guided) and collect uncertainty records.

    ``x_T`` overrides the prior draws; rows still use streams indexed by their
    global sample position.
    """
    hooks = tuple(hooks) + ((GuidanceHook(guidance),) if guidance is not None else ())
    threads = resolve_threads(threads)
    starts = list(range(0, n, chunk_size))

    def work(start):
        m = min(chunk_size, n - start)
        xT = prior_draws(seed, m, dim, start) if x_T is None else np.asarray(x_T)[start:start + m]
        cfg = SamplerConfig(plan, kind, seed, hooks, variance, keep_states, start)
        return run_sampler(predictor, schedule, cfg, xT)

    if threads == 1 or len(starts) == 1:
        trajs = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            trajs = list(ex.map(work, starts))
    res = PoolResult(
        np.concatenate([tr.x0 for tr in trajs], axis=0),
        np.concatenate([tr.nfe for tr in trajs]),
        _merge([tr.records for tr in trajs], "uncertainty"),
        _merge([tr.records for tr in trajs], "guidance_uncertainty"),
    )
    if keep_states:
        res.timesteps = trajs[0].timesteps
        res.states = [np.concatenate([tr.states[i] for tr in trajs], axis=0) for i in range(len(res.timesteps))]
    return res
