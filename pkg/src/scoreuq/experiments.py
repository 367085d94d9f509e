"""Benchmark presets, run setup from config sections, and protocol drivers.

Every driver is a pure function of its arguments and seeds, so the CLI and the
acceptance tests share one implementation of each protocol.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .guidance import GuidanceConfig, calibrate_thresholds
from .metrics import (energy_distance, filter_pool, fisher_identity_check, reconstruction_eval,
                      reconstruction_steps, sign_test_pvalue)
from .mlp import McDropoutHook, MlpConfig, MlpPredictor, train_dsm
from .pool import sample_pool
from .rng import Purpose, Streams
from .schedule import build_linear_schedule, from_betas, plan_timesteps
from .score import DatasetPredictorModel, GmmDistribution, GmmPredictor
from .uncertainty import (UncertaintyConfig, UncertaintyHook, UncertaintyMap, resolve_window,
                          uncertainty_profile)

BENCHMARKS = {
    "gmm1d": {"weights": [0.5, 0.5], "means": [[-2.0], [2.0]], "variances": [[0.25], [0.25]]},
    "gmm2d": {"weights": [0.5, 0.5], "means": [[-2.0, -2.0], [2.0, 2.0]],
              "variances": [[0.25, 0.25], [0.25, 0.25]]},
    "normal1d": {"weights": [1.0], "means": [[0.0]], "variances": [[1.0]]},
    "normal2d": {"weights": [1.0], "means": [[0.0, 0.0]], "variances": [[1.0, 1.0]]},
}

DEFAULT_TRAIN = {"n_train": 10000}


def benchmark(name):
    """Named GMM preset."""
    try:
        return GmmDistribution.from_dict(BENCHMARKS[name])
    except KeyError:
        raise ConfigError(f"unknown benchmark {name!r}; expected one of {sorted(BENCHMARKS)}") from None


def seed_list(root, count_or_list):
    """Per-repeat root seeds: explicit list, or ``root + k`` for ``k < count``."""
    if isinstance(count_or_list, int):
        return [(root + k) % 2**64 for k in range(count_or_list)]
    return [int(s) for s in count_or_list]


def build_schedule(section):
    section = section or {}
    if "betas" in section:
        return from_betas(section["betas"])
    return build_linear_schedule(section.get("T", 1000), section.get("beta_start", 1e-4),
                                 section.get("beta_end", 0.02))


def load_json_file(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def build_distribution(section):
    """GMM named in the data section, or None when the data is a point set."""
    section = section or {"benchmark": "gmm2d"}
    if "benchmark" in section:
        return benchmark(section["benchmark"])
    if "gmm" in section:
        return GmmDistribution.from_dict(section["gmm"])
    if "gmm_file" in section:
        return GmmDistribution.from_dict(load_json_file(section["gmm_file"]))
    return None


def build_points(section):
    section = section or {}
    if "points" in section:
        pts = section["points"]
    elif "points_file" in section:
        pts = load_json_file(section["points_file"])
    else:
        return None
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if pts.size == 0:
        raise ConfigError("data.points is empty")
    return pts


def training_data(dist, n, seed):
    """``n`` training points drawn from ``dist`` on the DATA streams."""
    return dist.sample(n, Streams.for_samples(seed, n, Purpose.DATA))


def reference_samples(dist, n, seed):
    """Ground-truth samples for distribution metrics, on the EVAL streams."""
    return dist.sample(n, Streams.for_samples(seed, n, Purpose.EVAL))


def mlp_config(section, dim, T):
    section = dict(section or {})
    section.pop("n_train", None)
    try:
        return MlpConfig(input_dim=dim, T=T, **section)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def train_model(dist, schedule, section=None):
    """Train an MLP on samples of ``dist``; returns ``(predictor, losses)``."""
    section = {**DEFAULT_TRAIN, **(section or {})}
    cfg = mlp_config(section, dist.dim, schedule.T)
    data = training_data(dist, int(section["n_train"]), cfg.seed)
    params, losses = train_dsm(data, schedule, cfg)
    return MlpPredictor(params, cfg), losses


@dataclass
class RunSetup:
    schedule: object
    dist: object
    predictor: object
    dim: int
    plan: object
    kind: str = "ddim"
    variance: str = "beta"
    losses: np.ndarray = None
    extras: dict = field(default_factory=dict)


def build_predictor(cfg, schedule, dist, points, params_loader=None):
    """Predictor named by the ``predictor`` section.

    Kinds: ``gmm`` (exact score of the data GMM), ``dataset`` (exact predictor
    for a finite point set), ``mlp`` (trained inline, or loaded with
    ``params_loader(params_dir)``).
    """
    section = cfg.get("predictor") or {"kind": "gmm"}
    kind = section.get("kind", "gmm")
    if kind == "gmm":
        if dist is None:
            raise ConfigError("predictor kind 'gmm' needs a GMM data section")
        return GmmPredictor(dist, schedule), None
    if kind == "dataset":
        if points is None:
            if dist is None:
                raise ConfigError("predictor kind 'dataset' needs data points")
            points = training_data(dist, DEFAULT_TRAIN["n_train"], cfg.get("seed", 0))
        return DatasetPredictorModel(points, schedule), None
    if kind == "mlp":
        if "params_dir" in section:
            if params_loader is None:
                raise ConfigError("no loader available for predictor.params_dir")
            return params_loader(section["params_dir"]), None
        if dist is None:
            raise ConfigError("inline MLP training needs a GMM data section")
        return train_model(dist, schedule, section.get("train"))
    raise ConfigError(f"unknown predictor kind {kind!r}")


def setup(cfg, params_loader=None):
    schedule = build_schedule(cfg.get("schedule"))
    dist = build_distribution(cfg.get("data"))
    points = build_points(cfg.get("data"))
    predictor, losses = build_predictor(cfg, schedule, dist, points, params_loader)
    dim = dist.dim if dist is not None else points.shape[1]
    smp = cfg.get("sampler") or {}
    kind = smp.get("kind", "ddim")
    if kind not in ("ddim", "ddpm"):
        raise ConfigError(f"unknown sampler kind {kind!r}")
    plan = plan_timesteps(schedule.T, smp.get("steps", 50))
    return RunSetup(schedule, dist, predictor, dim, plan, kind, smp.get("variance", "beta"), losses)


def uncertainty_config(section):
    section = section or {}
    try:
        return UncertaintyConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad uncertainty section: {exc}") from exc


def guidance_config(section, M):
    section = dict(section or {})
    section.pop("calibration_samples", None)
    try:
        return GuidanceConfig(M=M, **section)
    except TypeError as exc:
        raise ConfigError(f"bad guidance section: {exc}") from exc


def calibrate(run, ucfg, gcfg, n, seed, threads=None):
    """Per-timestep thresholds from an unguided pool of ``n`` samples."""
    hook = UncertaintyHook(ucfg, steps="all")
    res = sample_pool(run.predictor, run.schedule, run.plan, n, run.dim, seed, hooks=(hook,),
                      kind=run.kind, variance=run.variance, threads=threads)
    maps = [UncertaintyMap(t, v) for t, v in res.uncertainty.items()]
    return calibrate_thresholds(maps, gcfg.p)


def _sign_summary(rows, better):
    wins = int(sum(better(r) for r in rows))
    return wins, sign_test_pvalue(wins, len(rows))


@dataclass
class GuidanceComparison:
    rows: list
    wins: int
    p_value: float
    median_unguided: float
    median_guided: float


def guidance_comparison(run, gcfg, seeds, n, n_reference=None, threads=None):
    """Paired guided vs unguided samples per seed, scored by energy distance."""
    rows = []
    for seed in seeds:
        gt = reference_samples(run.dist, n_reference or n, seed)
        base = sample_pool(run.predictor, run.schedule, run.plan, n, run.dim, seed,
                           kind=run.kind, variance=run.variance, threads=threads)
        guided = sample_pool(run.predictor, run.schedule, run.plan, n, run.dim, seed, guidance=gcfg,
                             kind=run.kind, variance=run.variance, threads=threads)
        rows.append({"seed": seed, "ed_unguided": energy_distance(base.x0, gt),
                     "ed_guided": energy_distance(guided.x0, gt),
                     "nfe_unguided": int(base.nfe.sum()), "nfe_guided": int(guided.nfe.sum())})
    wins, p = _sign_summary(rows, lambda r: r["ed_guided"] < r["ed_unguided"])
    return GuidanceComparison(rows, wins, p, float(np.median([r["ed_unguided"] for r in rows])),
                              float(np.median([r["ed_guided"] for r in rows])))


@dataclass
class FilterComparison:
    rows: list
    wins: int
    p_value: float


def random_subset(seed, n, k):
    """``k`` of ``n`` indices chosen by seeded shuffle, returned sorted."""
    keys = Streams.for_samples(seed, 1, Purpose.SHUFFLE).uniform((n,))[0]
    return np.sort(np.argsort(keys, kind="stable")[:k])


def filter_comparison(run, ucfg, seeds, pool_size=6000, keep=5000, n_reference=None, guidance=None,
                      threads=None):
    """Keep the lowest-uncertainty ``keep`` of a pool vs a random ``keep``, per seed."""
    if not 0 < keep <= pool_size:
        raise ConfigError(f"keep must lie in (0, pool_size], got {keep}")
    ts = [run.plan.steps[i] for i in resolve_window(ucfg.window, run.plan)]
    rows = []
    for seed in seeds:
        res = sample_pool(run.predictor, run.schedule, run.plan, pool_size, run.dim, seed,
                          hooks=(UncertaintyHook(ucfg),), guidance=guidance, kind=run.kind,
                          variance=run.variance, threads=threads)
        u = res.totals(ts)
        kept = filter_pool(u, keep / pool_size)
        rand = random_subset(seed, pool_size, len(kept))
        gt = reference_samples(run.dist, n_reference or keep, seed)
        rows.append({"seed": seed, "ed_uncertainty": energy_distance(res.x0[kept], gt),
                     "ed_random": energy_distance(res.x0[rand], gt),
                     "ed_pool": energy_distance(res.x0, gt), "nfe": int(res.nfe.sum())})
    wins, p = _sign_summary(rows, lambda r: r["ed_uncertainty"] < r["ed_random"])
    return FilterComparison(rows, wins, p)


def sparsify_comparison(run, ucfg, seeds, n_test=200, B=100, R=10, dropout_predictor=None, K=5,
                        start_t=None, pooled=None):
    """Reconstruction protocol for the re-noising estimator and, when a dropout
    model is given, for MC-Dropout on the same trajectories.

    With ``dropout_predictor`` both methods score its reconstructions, so the
    per-component errors are identical and only the rankings differ.
    """
    predictor = dropout_predictor or run.predictor
    T = run.schedule.T
    start = -(-T // 2) if start_t is None else int(start_t)
    S = len(run.plan)
    steps = reconstruction_steps(T, S, ucfg.window, start)
    pooled = run.dim < B if pooled is None else pooled

    def evaluate(test, seed, hook):
        noise = Streams.for_samples(seed, len(test), Purpose.SAMPLER, 1 << 32)
        return reconstruction_eval(predictor, run.schedule, test, S, ucfg.M, noise, window=ucfg.window,
                                   start_t=start, B=B, R=R, hook=hook, seed=seed, pooled=pooled)

    rows = []
    for seed in seeds:
        test = reference_samples(run.dist, n_test, seed)
        ours = evaluate(test, seed, UncertaintyHook(ucfg, steps=steps))
        row = {"seed": seed, "ause_ours": ours.mean_ause, "aurg_ours": ours.mean_aurg,
               "ause_random": ours.mean_ause_random, "rmse": float(ours.rmse.mean())}
        if dropout_predictor is not None:
            mcd = evaluate(test, seed, McDropoutHook(dropout_predictor, K, steps=steps))
            row.update(ause_mc_dropout=mcd.mean_ause, aurg_mc_dropout=mcd.mean_aurg)
        rows.append(row)
    return rows


def profile_run(run, ucfg, n_samples, seed, units="score", threads=None):
    """Per-step total uncertainty for ``n_samples`` samples and its mean/std profile.

    ``units="score"`` divides each step's map by ``sigma_t^2`` (score units);
    ``"noise"`` keeps the estimator's native units.
    """
    if units not in ("score", "noise"):
        raise ConfigError(f"unknown units {units!r}")
    res = sample_pool(run.predictor, run.schedule, run.plan, n_samples, run.dim, seed,
                      hooks=(UncertaintyHook(ucfg, steps="all"),), kind=run.kind, variance=run.variance,
                      threads=threads)
    cols = []
    for t in run.plan.steps:
        scale = 1.0 / run.schedule.sigma(t) ** 2 if units == "score" else 1.0
        cols.append(res.uncertainty[t].sum(axis=1) * scale)
    totals = np.stack(cols, axis=1)
    mean, std = uncertainty_profile(totals)
    return totals, mean, std


def identity_run(dist, schedule, timesteps, N, seed):
    """Curvature identity reports at each timestep, each on its own EVAL stream."""
    out = []
    for k, t in enumerate(timesteps):
        rng = Streams.for_samples(seed, N, Purpose.EVAL, (k + 1) << 32)
        out.append(fisher_identity_check(dist, schedule, int(t), N, rng))
    return out


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_sampling(run, n_samples, M_values, repeats=3, seed=0, threads=1):
    """Wall-clock of sampling without uncertainty and with it at each ``M``."""
    rows = []

    def plain():
        sample_pool(run.predictor, run.schedule, run.plan, n_samples, run.dim, seed, kind=run.kind,
                    variance=run.variance, threads=threads)

    plain()
    base = _best_of(plain, repeats)
    rows.append({"mode": "no_uncertainty", "M": 0, "seconds": base, "overhead": 1.0})
    for M in M_values:
        hook = UncertaintyHook(UncertaintyConfig(M=M))

        def with_u():
            sample_pool(run.predictor, run.schedule, run.plan, n_samples, run.dim, seed, hooks=(hook,),
                        kind=run.kind, variance=run.variance, threads=threads)

        with_u()
        sec = _best_of(with_u, repeats)
        rows.append({"mode": "uncertainty", "M": int(M), "seconds": sec, "overhead": sec / base})
    return rows


def bench_kernels(sizes, repeats=3, seed=0):
    """Timings of each hot kernel under the numpy and (when present) numba backends.

    The pairwise-distance kernel is quadratic, so it uses ``min(n, 4096)``
    points per set.
    """
    from . import kernels

    rng = np.random.default_rng(seed)
    backends = [("numpy", kernels.numpy_impl)]
    if kernels.numba_impl is not None:
        backends.append(("numba", kernels.numba_impl))
    means = np.array([[-2.0, -2.0], [2.0, 2.0]])
    var = np.full((2, 2), 0.5)
    logw = np.log(np.array([0.5, 0.5]))
    rows = []
    for n in sizes:
        m = min(n, 4096)
        a = rng.normal(size=(m, 2))
        b = rng.normal(size=(m, 2))
        x = rng.normal(size=(n, 2))
        states = np.arange(1, n + 1, dtype=np.uint64)
        out = np.empty((n, 8))
        for name, impl in backends:
            cases = {
                "pair_distance_sum": lambda: impl.pair_distance_sum(a, b),
                "gmm_stats": lambda: impl.gmm_stats(x, means, var, logw),
                "splitmix_fill_uniform": lambda: impl.splitmix_fill_uniform(states.copy(), out),
            }
            for kname, fn in cases.items():
                fn()
                rows.append({"kernel": kname, "backend": name, "n": int(n), "seconds": _best_of(fn, repeats)})
    return rows
