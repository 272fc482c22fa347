"""Experiment configuration: defaults, YAML files, presets and ``--set`` overrides.

Precedence is CLI overrides > preset > file > defaults. Every key must exist
in :data:`DEFAULTS`; unknown keys are rejected so typos cannot silently fall
back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Optional

import yaml

OUTPUT_ROOT_ENV = "IQFED_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "run": {
        "kind": "baseline",  # baseline | snr_hetero | cfo_hetero | quant_hetero | dirichlet
        "seed": 0,
        "n_jobs": 1,
    },
    "data": {
        "classes": ["BPSK", "QPSK", "PSK8", "QAM16"],
        "frame_length": 100,
        "num_clients": 4,
        # null -> the four-client label-skew tables scaled by table_divisor
        "unlabeled_table": None,
        "labeled_table": None,
        "table_divisor": 1,
        "dirichlet_alpha": 0.5,
        "dirichlet_unlabeled_per_class": 14000,
        "dirichlet_labeled_per_class": 2800,
        "snr_range": [-10.0, 10.0],
        "client_snr_ranges": [[-10.0, -5.0], [-5.0, 0.0], [0.0, 5.0], [5.0, 10.0]],
        "cfo": 0.01,
        "client_cfo_proportions": [[0.4, 0.4, 0.1, 0.1], [0.4, 0.1, 0.4, 0.1], [0.1, 0.4, 0.4, 0.1], [0.1, 0.1, 0.4, 0.4]],
        "cfo_intervals": [[0.0, 0.01], [0.01, 0.1], [0.1, 1.0], [1.0, 20.0]],
        "test_divisor": 10,
        "test_snr_range": [-10.0, 10.0],
    },
    "encoder": {"depth": 10, "kernel_size": 3, "channels": 89, "feature_dim": 320},
    "ssl": {"negatives": 10, "min_window": 4, "batch_size": 20, "lr": 0.001},
    "federate": {
        "rounds": 10,
        "local_steps": 2500,
        # per-client list such as [f32, f16, int8, int8]; null means no rounding
        "quantization": None,
        "client_quantization": ["f32", "f16", "int8", "int8"],
    },
    "classify": {"C": 1.0, "epochs": 200, "lr": 0.1, "standardize": True},
    "evaluate": {
        "snr_grid": list(range(-10, 10)),
        "refit_per_snr": False,
        "sweep_frames_divisor": 10,
    },
    "theory": {
        "lemma_m": [2, 4, 8],
        "lemma_gamma": [1.0, 10.0, 1000.0],
        "lemma_lambda": [0.0, 0.1, 1.0],
        "lemma_R": 1.0,
        "lemma_P": 1.0,
        "lemma_samples": 100000,
        "thm1_m": 4,
        "thm1_steps": 2000,
        "thm1_windows": [1, 8, 64],
        "thm1_runs": 5,
        "thm1_clients": 4,
        "thm1_gamma": 10.0,
        "thm1_lambda": 0.1,
        "thm1_radius": 1000.0,
        "thm2_instances": 20,
        "thm2_trials": 10000,
        "thm2_max_points": 20,
        "thm2_max_dim": 8,
        "thm2_mu": 0.5,
    },
}

# Desk-scale recipes. ``desk-binary`` and ``desk-hetero`` are the end-to-end
# acceptance settings; ``paper`` keeps the full-size defaults.
PRESETS: dict = {
    "paper": {},
    "desk-binary": {
        "data": {
            "classes": ["BPSK", "QPSK"],
            "unlabeled_table": [[250, 250]] * 4,
            "labeled_table": [[50, 50]] * 4,
            "snr_range": [10.0, 10.0],
            "test_snr_range": [10.0, 10.0],
        },
        "encoder": {"depth": 6, "channels": 16, "feature_dim": 64},
        "ssl": {"batch_size": 10, "min_window": 64},
        "federate": {"rounds": 3, "local_steps": 300},
    },
    "desk-hetero": {
        "data": {"table_divisor": 10},
        "encoder": {"depth": 6, "channels": 16, "feature_dim": 64},
        "ssl": {"batch_size": 10, "min_window": 64},
        "federate": {"rounds": 5, "local_steps": 300},
        "evaluate": {"sweep_frames_divisor": 1},
    },
    "smoke": {
        "data": {
            "classes": ["BPSK", "QPSK"],
            "unlabeled_table": [[20, 20], [20, 20]],
            "labeled_table": [[20, 20], [20, 20]],
            "num_clients": 2,
        },
        "encoder": {"depth": 2, "channels": 4, "feature_dim": 8},
        "ssl": {"batch_size": 2, "negatives": 2, "min_window": 8},
        "federate": {"rounds": 2, "local_steps": 3},
        "classify": {"epochs": 20},
        "evaluate": {"snr_grid": [-10, 0, 9]},
        "theory": {
            "lemma_m": [2],
            "lemma_gamma": [10.0],
            "lemma_lambda": [0.0],
            "lemma_samples": 2000,
            "thm1_steps": 50,
            "thm1_windows": [1, 4],
            "thm1_runs": 1,
            "thm2_instances": 2,
            "thm2_trials": 500,
        },
    },
}


def merge(base: dict, update: dict, path: str = "") -> dict:
    """Recursive merge; every key of ``update`` must already exist in ``base``."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' is a section and needs a mapping")
            out[key] = merge(out[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> dict:
    """``section.key=value`` -> nested dict; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    parts = [p for p in dotted.strip().split(".") if p]
    if len(parts) < 2:
        raise ConfigError(f"override '{text}' must name a section and a key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in '{text}': {exc}") from exc
    nested = value
    for part in reversed(parts):
        nested = {part: nested}
    return nested


def load_file(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping of sections")
    return data


def resolve(path=None, preset: Optional[str] = None, overrides: Iterable[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = merge(cfg, load_file(path))
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(sorted(PRESETS))})")
        cfg = merge(cfg, PRESETS[preset])
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    kind = cfg["run"]["kind"]
    if kind not in ("baseline", "snr_hetero", "cfo_hetero", "quant_hetero", "dirichlet"):
        raise ConfigError(f"unknown run.kind '{kind}'")
    d = cfg["data"]
    if not d["classes"] or len(set(d["classes"])) != len(d["classes"]):
        raise ConfigError("data.classes must be a non-empty list without repeats")
    if d["frame_length"] < max(2, cfg["ssl"]["min_window"]):
        raise ConfigError("data.frame_length must be at least ssl.min_window")
    if d["num_clients"] < 1 or d["table_divisor"] < 1 or d["test_divisor"] < 1:
        raise ConfigError("num_clients, table_divisor and test_divisor must be positive")
    if cfg["federate"]["rounds"] < 1:
        raise ConfigError("federate.rounds must be at least 1")
    if cfg["federate"]["local_steps"] < 0 or cfg["ssl"]["batch_size"] < 1:
        raise ConfigError("federate.local_steps must be >= 0 and ssl.batch_size >= 1")
    if kind == "dirichlet" and not d["dirichlet_alpha"] > 0:
        raise ConfigError("data.dirichlet_alpha must be positive")
    for name in ("snr_range", "test_snr_range"):
        lo, hi = d[name]
        if lo > hi:
            raise ConfigError(f"data.{name} is reversed")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def default_output_dir(cfg: dict) -> Path:
    return output_root() / f"{cfg['run']['kind']}-{config_hash(cfg)}"
