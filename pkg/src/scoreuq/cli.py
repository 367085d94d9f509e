"""Command-line entry point.

Usage::

    scoreuq COMMAND --config run.json --out DIR [--seed N] [--threads N]

Every run writes its outputs, then ``config.json`` (the validated config with
the effective seed) and finally ``manifest.json`` with per-file SHA-256 hashes.
Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O failure.
"""

import argparse
import datetime as _dt
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import experiments as ex
from . import kernels
from .errors import ConfigError, ScoreUQError, StorageError
from .io import load_mlp, save_mlp, sha256_file, write_csv, write_image_map, write_json, write_tensor
from .metrics import energy_distance
from .mlp import MlpPredictor
from .pool import resolve_threads, sample_pool
from .uncertainty import UncertaintyHook, resolve_window


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="scoreuq", description="Score-variance uncertainty for diffusion samplers.")
    p.add_argument("command", choices=cfgmod.COMMANDS)
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="root seed, overrides the config")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $SCOREUQ_THREADS or CPU count)")
    return p


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _image_side(dim):
    side = math.isqrt(dim)
    return side if side >= 2 and side * side == dim else None


class Outputs:
    """Tracks files written under the output directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = []

    def path(self, name):
        p = self.root / name
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create {p.parent}: {exc}") from exc
        self.files.append(p)
        return p

    def tensor(self, name, values):
        values = np.asarray(values, dtype=np.float64)
        write_tensor(self.path(name), values.shape, values)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)

    def dict_rows(self, name, rows):
        header = list(rows[0]) if rows else []
        self.csv(name, header, [[r.get(k) for k in header] for r in rows])

    def json(self, name, doc):
        write_json(self.path(name), doc)


def _setup(cfg):
    return ex.setup(cfg, params_loader=load_mlp)


def _save_losses(out, losses):
    if losses is not None:
        out.csv("train_loss.csv", ["epoch", "loss"], [[i, float(v)] for i, v in enumerate(losses)])


def _uncertainty_outputs(out, run, ucfg, res, prefix=""):
    steps = resolve_window(ucfg.window, run.plan)
    ts = [run.plan.steps[i] for i in steps if run.plan.steps[i] in res.uncertainty]
    for t in ts:
        out.tensor(f"{prefix}uncertainty_t{t:04d}.udt", res.uncertainty[t])
    if not ts:
        return
    total_map = sum(res.uncertainty[t] for t in ts)
    out.tensor(f"{prefix}uncertainty_window.udt", total_map)
    out.csv(f"{prefix}uncertainty.csv", ["sample", "total_uncertainty"],
            [[i, float(v)] for i, v in enumerate(total_map.sum(axis=1))])
    side = _image_side(run.dim)
    if side is not None:
        write_image_map(out.path(f"{prefix}uncertainty_sample0.pgm"), side, side, total_map[0])


def _trajectory_outputs(out, res, prefix=""):
    rows = []
    for i, (t, state) in enumerate(zip(res.timesteps, res.states)):
        name = f"{prefix}trajectory/step_{i:04d}.udt"
        out.tensor(name, state)
        rows.append([i, int(t), name])
    out.csv(f"{prefix}trajectory.csv", ["step", "t", "file"], rows)


def _samples_outputs(out, res, prefix=""):
    out.tensor(f"{prefix}samples.udt", res.x0)
    out.csv(f"{prefix}nfe.csv", ["sample", "nfe"], [[i, int(v)] for i, v in enumerate(res.nfe)])


def cmd_train(cfg, out, threads):
    schedule = ex.build_schedule(cfg.get("schedule"))
    dist = ex.build_distribution(cfg.get("data"))
    if dist is None:
        raise ConfigError("train needs a GMM data section (benchmark, gmm or gmm_file)")
    section = dict(cfg.get("train") or {})
    section.setdefault("seed", cfg.get("seed", 0))
    predictor, losses = ex.train_model(dist, schedule, section)
    files = save_mlp(out.root / "params", predictor.params, predictor.config)
    out.files.extend(files)
    _save_losses(out, losses)


def cmd_sample(cfg, out, threads):
    run = _setup(cfg)
    _save_losses(out, run.losses)
    seed = cfg.get("seed", 0)
    ucfg = ex.uncertainty_config(cfg.get("uncertainty"))
    hooks = (UncertaintyHook(ucfg),) if "uncertainty" in cfg else ()
    keep = bool(cfg.get("save_trajectory", False))
    res = sample_pool(run.predictor, run.schedule, run.plan, cfg.get("n_samples", 1000), run.dim, seed,
                      hooks=hooks, kind=run.kind, variance=run.variance, threads=threads,
                      chunk_size=cfg.get("chunk_size", 256), keep_states=keep)
    _samples_outputs(out, res)
    if hooks:
        _uncertainty_outputs(out, run, ucfg, res)
    if keep:
        _trajectory_outputs(out, res)


def _guidance(cfg, run, ucfg, threads):
    section = cfg.get("guidance") or {}
    gcfg = ex.guidance_config(section, ucfg.M)
    if gcfg.threshold_mode == "calibrated" and not gcfg.thresholds:
        n = section.get("calibration_samples", 2000)
        seed = (cfg.get("seed", 0) + 0x5EED) % 2**64
        th = ex.calibrate(run, ucfg, gcfg, n, seed, threads)
        gcfg = ex.guidance_config({**section, "thresholds": th}, ucfg.M)
    return gcfg


def cmd_guide(cfg, out, threads):
    run = _setup(cfg)
    _save_losses(out, run.losses)
    seed = cfg.get("seed", 0)
    ucfg = ex.uncertainty_config(cfg.get("uncertainty"))
    gcfg = _guidance(cfg, run, ucfg, threads)
    n = cfg.get("n_samples", 1000)
    keep = bool(cfg.get("save_trajectory", False))
    common = dict(kind=run.kind, variance=run.variance, threads=threads, chunk_size=cfg.get("chunk_size", 256),
                  keep_states=keep)
    res = sample_pool(run.predictor, run.schedule, run.plan, n, run.dim, seed, guidance=gcfg, **common)
    _samples_outputs(out, res)
    if gcfg.thresholds:
        out.csv("thresholds.csv", ["t", "tau"], [[t, tau] for t, tau in sorted(gcfg.thresholds.items())])
    per_step = [[t, float(v.sum(axis=1).mean())] for t, v in sorted(res.guidance_uncertainty.items(), reverse=True)]
    out.csv("guidance_uncertainty.csv", ["t", "mean_total_uncertainty"], per_step)
    if keep:
        _trajectory_outputs(out, res)
    if cfg.get("compare_unguided", False):
        base = sample_pool(run.predictor, run.schedule, run.plan, n, run.dim, seed, **common)
        out.tensor("unguided_samples.udt", base.x0)
        if run.dist is not None:
            gt = ex.reference_samples(run.dist, n, seed)
            out.csv("compare.csv", ["variant", "energy_distance", "nfe_total"],
                    [["unguided", energy_distance(base.x0, gt), int(base.nfe.sum())],
                     ["guided", energy_distance(res.x0, gt), int(res.nfe.sum())]])


def _need_dist(run, command):
    if run.dist is None:
        raise ConfigError(f"{command} needs a GMM data section for ground-truth samples")


def cmd_filter_eval(cfg, out, threads):
    run = _setup(cfg)
    _need_dist(run, "filter-eval")
    _save_losses(out, run.losses)
    ucfg = ex.uncertainty_config(cfg.get("uncertainty"))
    fsec = cfg.get("filter") or {}
    gcfg = _guidance(cfg, run, ucfg, threads) if "guidance" in cfg else None
    seeds = ex.seed_list(cfg.get("seed", 0), fsec.get("seeds", 10))
    res = ex.filter_comparison(run, ucfg, seeds, fsec.get("pool_size", 6000), fsec.get("keep", 5000),
                               fsec.get("n_reference"), gcfg, threads)
    out.dict_rows("filter.csv", res.rows)
    out.json("filter_summary.json", {"wins": res.wins, "seeds": len(res.rows), "sign_test_p": res.p_value})


def cmd_sparsify_eval(cfg, out, threads):
    run = _setup(cfg)
    _need_dist(run, "sparsify-eval")
    _save_losses(out, run.losses)
    ucfg = ex.uncertainty_config(cfg.get("uncertainty"))
    ssec = cfg.get("sparsify") or {}
    dropout, K = None, 5
    if "mc_dropout" in ssec:
        mcd = ssec["mc_dropout"]
        K = mcd.get("K", 5)
        psec = cfg.get("predictor") or {}
        if isinstance(run.predictor, MlpPredictor) and run.predictor.config.dropout_rate > 0:
            dropout = run.predictor
        else:
            train = {**(psec.get("train") or {}), "dropout_rate": mcd.get("rate", 0.1)}
            dropout, losses = ex.train_model(run.dist, run.schedule, train)
            out.csv("dropout_train_loss.csv", ["epoch", "loss"], [[i, float(v)] for i, v in enumerate(losses)])
    seeds = ex.seed_list(cfg.get("seed", 0), ssec.get("seeds", 10))
    rows = ex.sparsify_comparison(run, ucfg, seeds, ssec.get("n_test", 200), ssec.get("B", 100),
                                  ssec.get("R", 10), dropout, K, ssec.get("start_t"))
    out.dict_rows("sparsify.csv", rows)


def cmd_verify_identity(cfg, out, threads):
    schedule = ex.build_schedule(cfg.get("schedule"))
    dist = ex.build_distribution(cfg.get("data"))
    if dist is None:
        raise ConfigError("verify-identity needs a GMM data section")
    isec = cfg.get("identity") or {}
    ts = isec.get("timesteps", [1, schedule.T // 4, schedule.T // 2, schedule.T])
    reports = ex.identity_run(dist, schedule, ts, isec.get("N", 100000), cfg.get("seed", 0))
    rows = []
    for r in reports:
        for k in range(len(r.lhs)):
            rows.append([r.t, k, r.n, r.lhs[k], r.rhs[k], r.se_lhs[k], r.se_rhs[k], r.se_diff[k],
                         abs(r.lhs[k] - r.rhs[k]) / r.se_diff[k] if r.se_diff[k] > 0 else 0.0])
    out.csv("identity.csv", ["t", "axis", "N", "lhs", "rhs", "se_lhs", "se_rhs", "se_diff", "z"], rows)
    out.json("identity.json", [r.to_dict() for r in reports])


def cmd_profile(cfg, out, threads):
    run = _setup(cfg)
    _save_losses(out, run.losses)
    ucfg = ex.uncertainty_config(cfg.get("uncertainty"))
    psec = cfg.get("profile") or {}
    totals, mean, std = ex.profile_run(run, ucfg, psec.get("n_samples", 200), cfg.get("seed", 0),
                                       psec.get("units", "score"), threads)
    out.tensor("profile_totals.udt", totals)
    out.csv("profile.csv", ["step", "t", "mean", "std"],
            [[i, int(t), float(m), float(s)] for i, (t, m, s) in enumerate(zip(run.plan.steps, mean, std))])


def cmd_bench(cfg, out, threads):
    run = _setup(cfg)
    bsec = cfg.get("bench") or {}
    rows = ex.bench_sampling(run, bsec.get("n_samples", 256), bsec.get("M_values", [5, 20]),
                             bsec.get("repeats", 3), cfg.get("seed", 0), threads)
    out.dict_rows("bench_sampling.csv", rows)
    krows = ex.bench_kernels(bsec.get("kernel_sizes", [1000, 100000]), bsec.get("repeats", 3))
    out.dict_rows("bench_kernels.csv", krows)


HANDLERS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "guide": cmd_guide,
    "filter-eval": cmd_filter_eval,
    "sparsify-eval": cmd_sparsify_eval,
    "verify-identity": cmd_verify_identity,
    "profile": cmd_profile,
    "bench": cmd_bench,
}


def execute(command, config_path, out_dir, seed=None, threads=None):
    """Run one command and write its manifest; returns the manifest dict."""
    started = _now()
    cfg = cfgmod.load(config_path, seed=seed, command=command)
    threads = resolve_threads(threads)
    out = Outputs(out_dir)
    try:
        out.root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {out_dir}: {exc}") from exc
    HANDLERS[command](cfg, out, threads)
    out.json("config.json", cfg)
    manifest = {
        "root_seed": cfg.get("seed", 0),
        "config_digest": cfgmod.digest(cfg),
        "command": command,
        "backend": kernels.BACKEND,
        "started": started,
        "finished": _now(),
        "files": [{"path": p.relative_to(out.root).as_posix(), "sha256": sha256_file(p)} for p in out.files],
    }
    write_json(out.root / "manifest.json", manifest)
    return manifest


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        manifest = execute(args.command, args.config, args.out, args.seed, args.threads)
    except ScoreUQError as exc:
        print(f"scoreuq: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"scoreuq: I/O error: {exc}", file=sys.stderr)
        return StorageError.exit_code
    print(f"{manifest['command']}: wrote {len(manifest['files'])} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
