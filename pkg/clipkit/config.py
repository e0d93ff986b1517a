"""Run configuration: dataclass defaults, a JSON config file, ``key=value`` overrides.

The config file has two optional sections, ``train`` and ``probe``, whose
keys are field names of ``TrainConfig`` and ``ProbeConfig``. Overrides use
``section.key=value``; a bare ``key=value`` targets ``train``.
"""
from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

from django.conf import settings

from .exceptions import ConfigError

TAU_MIN, TAU_MAX = 0.01, 100.0

PRESETS = {
    'mlp-small': {'depth': 2, 'hidden': 64, 'embed_dim': 32, 'token_dim': 32, 'learning_rate': 5e-4},
    'mlp-large': {'depth': 3, 'hidden': 256, 'embed_dim': 64, 'token_dim': 64, 'learning_rate': 5e-5},
}


@dataclass(frozen=True)
class TrainConfig:
    preset: str = 'mlp-small'
    batch_size: int = 256
    learning_rate: Optional[float] = None
    epochs: int = 30
    warmup_steps: int = 0
    seed: int = 0
    tau_mode: str = 'fixed'
    tau: float = 0.07
    image_trainable_layers: Optional[int] = None
    text_trainable_layers: Optional[int] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: Optional[float] = None
    depth: Optional[int] = None
    hidden: Optional[int] = None
    embed_dim: Optional[int] = None
    token_dim: Optional[int] = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f'unknown preset {self.preset!r}; choose from {sorted(PRESETS)}')
        if self.batch_size < 1:
            raise ConfigError('batch_size must be at least 1')
        if self.epochs < 1:
            raise ConfigError('epochs must be at least 1')
        if self.warmup_steps < 0:
            raise ConfigError('warmup_steps must be non-negative')
        if self.tau_mode not in ('fixed', 'learnable'):
            raise ConfigError("tau_mode must be 'fixed' or 'learnable'")
        if not self.tau > 0:
            raise ConfigError('tau must be positive')
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError('learning_rate must be positive')
        for name in ('image_trainable_layers', 'text_trainable_layers'):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f'{name} must be non-negative')
        for name in ('depth', 'hidden', 'embed_dim', 'token_dim'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f'{name} must be at least 1')

    def _preset(self, name):
        value = getattr(self, name)
        return PRESETS[self.preset][name] if value is None else value

    @property
    def base_lr(self):
        return self._preset('learning_rate')

    @property
    def model_shape(self):
        return {name: self._preset(name) for name in ('depth', 'hidden', 'embed_dim', 'token_dim')}

    @property
    def learnable_tau(self):
        return self.tau_mode == 'learnable'

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.01
    max_epochs: int = 2000
    patience: int = 20
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ConfigError('val_fraction must be in (0, 1)')
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError('max_epochs and patience must be at least 1')
        if not self.learning_rate > 0:
            raise ConfigError('learning_rate must be positive')

    def as_dict(self):
        return asdict(self)


SECTIONS = {'train': TrainConfig, 'probe': ProbeConfig}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    seed: int = 0
    overrides: Tuple[str, ...] = ()
    params: Dict[str, object] = field(default_factory=dict)
    verbosity: int = 1
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    @property
    def fingerprint(self):
        # paths, threads and verbosity are excluded
        return fingerprint({
            'subcommand': self.subcommand,
            'seed': self.seed,
            'params': self.params,
            'train': self.train.as_dict(),
            'probe': self.probe.as_dict(),
        })


def fingerprint(payload) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def _coerce(cls, name, raw):
    hints = typing.get_type_hints(cls)
    if name not in hints:
        raise ConfigError(f'unknown config key {cls.__name__}.{name}')
    hint = hints[name]
    args = typing.get_args(hint)
    optional = type(None) in args
    target = next((a for a in args if a is not type(None)), hint)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ('none', 'null', '')):
        if optional:
            return None
        raise ConfigError(f'{name} cannot be empty')
    try:
        if target is int:
            if isinstance(raw, float) and raw != int(raw):
                raise ValueError(raw)
            return int(raw)
        if target is float:
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f'{name}: cannot read {raw!r} as {target.__name__}') from None


def _apply(section_values, cls, updates):
    for name, raw in updates.items():
        section_values[name] = _coerce(cls, name, raw)


def load_config(path=None, overrides: Sequence[str] = ()):
    """Return ``(TrainConfig, ProbeConfig)`` from defaults, config file and overrides."""
    values = {section: {} for section in SECTIONS}
    path = path if path is not None else settings.SARCLIP['CONFIG_PATH']
    if path:
        try:
            document = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as exc:
            raise ConfigError(f'cannot read config file {path}: {exc}') from exc
        if not isinstance(document, dict):
            raise ConfigError(f'{path}: config must be an object')
        for section, body in document.items():
            if section not in SECTIONS:
                raise ConfigError(f'{path}: unknown config section {section!r}')
            if not isinstance(body, dict):
                raise ConfigError(f'{path}: section {section!r} must be an object')
            _apply(values[section], SECTIONS[section], body)

    for item in overrides:
        key, sep, raw = item.partition('=')
        if not sep:
            raise ConfigError(f'override {item!r} is not key=value')
        section, dot, name = key.strip().rpartition('.')
        section = section if dot else 'train'
        if section not in SECTIONS:
            raise ConfigError(f'unknown config section {section!r} in {item!r}')
        _apply(values[section], SECTIONS[section], {name: raw})

    try:
        return TrainConfig(**values['train']), ProbeConfig(**values['probe'])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(config, **changes):
    try:
        return replace(config, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
