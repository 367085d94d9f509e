"""Run-configuration parsing and validation.

A run config is one JSON object with a ``"command"`` discriminator. Unknown
keys are rejected at every level, and guidance settings are only accepted by
the commands that actually guide.
"""

import hashlib
import json
from pathlib import Path

from .errors import ConfigError

COMMANDS = ("train", "sample", "guide", "filter-eval", "sparsify-eval", "verify-identity", "profile", "bench")

_COMMON = {"command", "seed", "schedule", "data", "predictor", "sampler", "chunk_size"}

TOP_KEYS = {
    "train": {"command", "seed", "schedule", "data", "train"},
    "sample": _COMMON | {"n_samples", "uncertainty", "save_trajectory"},
    "guide": _COMMON | {"n_samples", "uncertainty", "guidance", "compare_unguided", "save_trajectory"},
    "filter-eval": _COMMON | {"uncertainty", "guidance", "filter"},
    "sparsify-eval": _COMMON | {"uncertainty", "sparsify"},
    "verify-identity": {"command", "seed", "schedule", "data", "identity"},
    "profile": _COMMON | {"uncertainty", "profile"},
    "bench": _COMMON | {"uncertainty", "bench"},
}

SECTION_KEYS = {
    "schedule": {"T", "beta_start", "beta_end", "betas"},
    "data": {"benchmark", "gmm", "gmm_file", "points", "points_file"},
    "predictor": {"kind", "params_dir", "train"},
    "train": {"n_train", "hidden", "time_features", "dropout_rate", "learning_rate", "batch_size", "epochs", "seed"},
    "sampler": {"kind", "steps", "variance"},
    "uncertainty": {"M", "window", "scheme", "sigma_p"},
    "guidance": {"p", "lam", "threshold_mode", "thresholds", "calibration_samples", "grad_estimator",
                 "h_rel", "spsa_k", "guided_window"},
    "filter": {"pool_size", "keep", "n_reference", "seeds"},
    "sparsify": {"n_test", "B", "R", "seeds", "mc_dropout", "start_t"},
    "identity": {"timesteps", "N"},
    "profile": {"n_samples", "units"},
    "bench": {"n_samples", "M_values", "repeats", "kernel_sizes"},
}

_NESTED = {("predictor", "train"): SECTION_KEYS["train"], ("sparsify", "mc_dropout"): {"rate", "K"}}


def _check_keys(where, doc, allowed):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def validate(cfg):
    """Check structure and return the config unchanged; raises ConfigError."""
    _check_keys("config", cfg, set().union(*TOP_KEYS.values()))
    cmd = cfg.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    stray = set(cfg) - TOP_KEYS[cmd]
    if stray:
        raise ConfigError(f"keys {sorted(stray)} are not accepted by command {cmd!r}")
    for key, sub in cfg.items():
        if key in SECTION_KEYS:
            _check_keys(key, sub, SECTION_KEYS[key])
            for (outer, inner), allowed in _NESTED.items():
                if outer == key and inner in sub:
                    _check_keys(f"{outer}.{inner}", sub[inner], allowed)
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or not (0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return cfg


def load(path, seed=None, command=None):
    """Read, optionally override the seed, and validate a config file.

    ``command`` fills a missing ``"command"`` key and must match a present one.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if command is not None:
        if cfg.setdefault("command", command) != command:
            raise ConfigError(f"config is for command {cfg['command']!r}, not {command!r}")
    if seed is not None:
        cfg["seed"] = int(seed)
    return validate(cfg)


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(cfg):
    """SHA-256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical(cfg).encode("ascii")).hexdigest()
