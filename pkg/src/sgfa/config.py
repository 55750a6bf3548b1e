"""Run configuration: one YAML file plus command-line overrides.

Layout (every key optional; defaults shown by :func:`default_config`)::

    seed: 0
    model:    {family: sparse-gfa, K: 5, parameterization: noncentered,
               hyper: {p0: null, a_rho: 1, b_rho: 1, nu: 4, s: 2, a_alpha: 0.001, b_alpha: 0.001}}
    sampler:  {chains: 4, warmup: 1000, samples: 2500, target_accept: 0.8,
               max_tree_depth: 10, init_jitter: 2.0, initializations: 5, n_jobs: 1}
    scenario: {K_true: 3, group_sizes: [50, 50, 50], D: [60, 40, 20], noise_sd: [3, 6, 4], ...}
    data:     {views: [], label_column: null, labels: null, confounds: null}
    preprocess: {missing_threshold: 0.1, sample_threshold: null, regress: true, ddof: 0}
    analysis: {cosine: 0.8, welch: false}
    output:   {draws: csv}

``sampler.samples`` counts all iterations, warm-up included.
"""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError, InvalidArgumentError
from .model import HyperParams, ModelFamily
from .sampler import SamplerConfig
from .synthgen import SyntheticScenario

OUTPUT_ROOT_ENV = "SGFA_OUTPUT_ROOT"
PRESETS = {"synthetic": {"model": {"K": 5}}, "real": {"model": {"K": 20}}}
DRAW_FORMATS = ("csv", "binary", "none")
PARAMETERIZATIONS = ("noncentered", "centered")


def default_config() -> dict:
    scen = asdict(SyntheticScenario())
    scen = {k: list(v) if isinstance(v, tuple) else v for k, v in scen.items() if k != "seed"}
    sampler = {f.name: getattr(SamplerConfig(), f.name) for f in fields(SamplerConfig) if f.name != "seed"}
    hyper = asdict(HyperParams())
    return {
        "seed": 0,
        "model": {"family": ModelFamily.SPARSE_GFA_RHS.value, "K": 5, "parameterization": "noncentered",
                  "hyper": hyper},
        "sampler": sampler,
        "scenario": scen,
        "data": {"views": [], "label_column": None, "labels": None, "confounds": None},
        "preprocess": {"missing_threshold": 0.10, "sample_threshold": None, "regress": True, "ddof": 0},
        "analysis": {"cosine": 0.80, "welch": False},
        "output": {"draws": "csv"},
    }


def _merge(base: dict, override: dict, path="") -> dict:
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


def load_config(path=None, overrides: Optional[dict] = None, preset: Optional[str] = None) -> dict:
    """Defaults <- preset <- file <- overrides, then validated."""
    cfg = default_config()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        _merge(cfg, copy.deepcopy(PRESETS[preset]))
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, loaded)
    if overrides:
        _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Build every typed object once so that invalid values fail before any work."""
    try:
        if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
        ModelFamily.parse(cfg["model"]["family"])
        if not isinstance(cfg["model"]["K"], int) or cfg["model"]["K"] < 1:
            raise ConfigError(f"model.K must be a positive integer, got {cfg['model']['K']!r}")
        if cfg["model"]["parameterization"] not in PARAMETERIZATIONS:
            raise ConfigError(f"model.parameterization must be one of {PARAMETERIZATIONS}")
        hyper_of(cfg)
        sampler_of(cfg)
        scenario_of(cfg)
        pre = cfg["preprocess"]
        if not 0 < float(pre["missing_threshold"]) <= 1:
            raise ConfigError("preprocess.missing_threshold must lie in (0, 1]")
        if pre["sample_threshold"] is not None and not 0 < float(pre["sample_threshold"]) <= 1:
            raise ConfigError("preprocess.sample_threshold must lie in (0, 1]")
        if pre["ddof"] not in (0, 1):
            raise ConfigError("preprocess.ddof must be 0 or 1")
        if not 0 < float(cfg["analysis"]["cosine"]) <= 1:
            raise ConfigError("analysis.cosine must lie in (0, 1]")
        if cfg["output"]["draws"] not in DRAW_FORMATS:
            raise ConfigError(f"output.draws must be one of {DRAW_FORMATS}")
    except ConfigError:
        raise
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def hyper_of(cfg: dict) -> HyperParams:
    h = dict(cfg["model"]["hyper"])
    if h.get("p0") is not None and not isinstance(h["p0"], (list, tuple)):
        raise ConfigError("model.hyper.p0 must be null or a list with one entry per view")
    return HyperParams(**h)


def sampler_of(cfg: dict) -> SamplerConfig:
    return SamplerConfig(**cfg["sampler"], seed=cfg["seed"])


def scenario_of(cfg: dict, seed: Optional[int] = None) -> SyntheticScenario:
    return SyntheticScenario(**cfg["scenario"], seed=cfg["seed"] if seed is None else seed)


def output_root(explicit=None) -> Path:
    """Explicit path, else ``$SGFA_OUTPUT_ROOT``, else ``./sgfa-runs``."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "sgfa-runs"))
