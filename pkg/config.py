#!/usr/bin/env python3
"""
Detector configuration.

Settings live in a YAML file (see detector.yaml) with one mapping per
section. Whatever the file leaves out falls back to the defaults below;
unknown keys and out-of-range values raise ConfigError naming the dotted key.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, Optional

import yaml

from errors import ConfigError


def load_yaml(path) -> Dict[str, Any]:
    """Read a YAML mapping; an empty file is an empty mapping."""
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return doc


def _number(value, key, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key=key)
    if integer and not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", key=key)
    return value


def _check(cond: bool, message: str, key: str):
    if not cond:
        raise ConfigError(message, key=key)


class _Section:
    """Shared loader for the section dataclasses below."""

    SECTION = ""
    RULES: Dict[str, Callable[[Any, str], None]] = {}

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]] = None, section: Optional[str] = None):
        section = section or cls.SECTION
        if values is None:
            values = {}
        if not isinstance(values, dict):
            raise ConfigError("expected a mapping", key=section)
        known = {f.name: f for f in fields(cls)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError("unknown setting", key=f"{section}.{key}")
            rule = cls.RULES.get(key)
            if rule is not None and value is not None:
                rule(value, f"{section}.{key}")
        return cls(**values)

    def json(self):
        return asdict(self)


def _positive(integer=False):
    def rule(value, key):
        _check(_number(value, key, integer) > 0, "must be positive", key)
    return rule


def _open_unit(value, key):
    _check(0 < _number(value, key) < 1, "must be strictly between 0 and 1", key)


def _half_open_unit(value, key):
    _check(0 < _number(value, key) <= 1, "must be in (0, 1]", key)


def _contamination(value, key):
    _check(0 < _number(value, key) < 0.5, "must be in (0, 0.5)", key)


def _non_negative_int(value, key):
    _check(_number(value, key, integer=True) >= 0, "must be a non-negative integer", key)


def _flag(value, key):
    _check(isinstance(value, bool), f"expected true or false, got {value!r}", key)


def _text(value, key):
    _check(isinstance(value, str) and value != "", f"expected a non-empty string, got {value!r}", key)


@dataclass
class FeatureConfig(_Section):
    SECTION = "features"
    samp: float = 1.0
    throughput_bin: float = 1.0


FeatureConfig.RULES = {'samp': _positive(), 'throughput_bin': _positive()}


@dataclass
class EnsembleConfig(_Section):
    SECTION = "anomaly"
    nu: float = 0.05
    gamma: Optional[float] = None
    n_trees: int = 100
    psi: int = 256
    contamination: float = 0.02
    h_frac: float = 0.75
    mcd_starts: int = 200
    ocsvm_tol: float = 1e-3
    parallel: bool = False


EnsembleConfig.RULES = {
    'nu': _half_open_unit,
    'gamma': _positive(),
    'n_trees': _positive(integer=True),
    'psi': lambda v, k: _check(_number(v, k, integer=True) >= 2, "must be at least 2", k),
    'contamination': _contamination,
    'h_frac': _half_open_unit,
    'mcd_starts': _positive(integer=True),
    'ocsvm_tol': _positive(),
    'parallel': _flag,
}


@dataclass
class AttackConfig(_Section):
    SECTION = "attack"
    n_trees: int = 100
    max_features: int = 4
    max_depth: Optional[int] = None
    min_leaf: int = 1
    bootstrap: bool = True
    train_fraction: float = 0.6
    knn_k: int = 5
    svm_lambda: float = 1e-4
    svm_epochs: int = 50
    logreg_l2: float = 1e-2
    logreg_tol: float = 1e-5
    logreg_max_iter: int = 100_000


AttackConfig.RULES = {
    'n_trees': _positive(integer=True),
    'max_features': _positive(integer=True),
    'max_depth': _positive(integer=True),
    'min_leaf': _positive(integer=True),
    'bootstrap': _flag,
    'train_fraction': _open_unit,
    'knn_k': _positive(integer=True),
    'svm_lambda': _positive(),
    'svm_epochs': _positive(integer=True),
    'logreg_l2': _positive(),
    'logreg_tol': _positive(),
    'logreg_max_iter': _positive(integer=True),
}


@dataclass
class PipelineConfig(_Section):
    """Detection run settings; samp and throughput_bin come from the features section."""
    SECTION = "pipeline"
    device_ip: str = "10.0.0.10"
    samp: float = 1.0
    throughput_bin: float = 1.0
    rule_priority: int = 100
    anomaly_model: str = "models/anomaly.json"
    attack_model: str = "models/attack.json"
    seed: int = 0


PipelineConfig.RULES = {
    'device_ip': _text,
    'samp': _positive(),
    'throughput_bin': _positive(),
    'rule_priority': _non_negative_int,
    'anomaly_model': _text,
    'attack_model': _text,
    'seed': _non_negative_int,
}


@dataclass
class DetectorConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    anomaly: EnsembleConfig = field(default_factory=EnsembleConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def json(self):
        return {
            'features': self.features.json(),
            'anomaly': self.anomaly.json(),
            'attack': self.attack.json(),
            'pipeline': self.pipeline.json(),
        }


_SECTIONS = {
    'features': FeatureConfig,
    'anomaly': EnsembleConfig,
    'attack': AttackConfig,
    'pipeline': PipelineConfig,
}


def config_from_dict(doc: Optional[Dict[str, Any]]) -> DetectorConfig:
    doc = doc or {}
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError("unknown section", key=key)
    loaded = {name: cls.from_dict(doc.get(name)) for name, cls in _SECTIONS.items()}
    pipeline = doc.get('pipeline') or {}
    # the sampling window is configured once, under features
    if 'samp' not in pipeline:
        loaded['pipeline'].samp = loaded['features'].samp
    if 'throughput_bin' not in pipeline:
        loaded['pipeline'].throughput_bin = loaded['features'].throughput_bin
    return DetectorConfig(**loaded)


def load_config(path=None) -> DetectorConfig:
    """
    Load detector settings.

    Args:
        path: YAML file; None (or a missing default file) gives pure defaults

    Returns:
        DetectorConfig
    """
    if path is None:
        default = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'detector.yaml')
        if not os.path.exists(default):
            return DetectorConfig()
        path = default
    elif not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    return config_from_dict(load_yaml(path))
