"""Experiment configuration: ``key = value`` files, one defaults table, DRF validation and a stable hash.

Blank lines and ``#`` comments are ignored. ``none`` clears an optional key so
the subcommand default applies.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .cache import CacheConfig, ReplacementPolicy
from .exceptions import ConfigRejected, ParseError, UnknownKey
from .pipeline import MicroarchConfig

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = '1.0.0'


@dataclass(frozen=True)
class ExperimentParams:
    rounds: Optional[int] = None
    trials: Optional[int] = None
    iterations: int = 1000
    n_sets: int = 32
    seq_len: int = 6
    par_len: int = 5
    prefetch_enabled: bool = True
    prefetch_distance: int = 11
    arb_policy: str = 'random'
    misalign_delay: Optional[int] = None
    k_div: int = 4
    add_buffer_len: Optional[int] = None
    rob_guard: bool = True
    timer_granularity: int = 10000
    timer_jitter: int = 2500
    secret_bits: int = 256
    calibration_trials: int = 16
    ref_kind: str = 'add'
    target_kind: str = 'add'
    max_target_len: int = 40
    use_racing_fix: bool = True
    present: bool = True
    order: str = 'AFirst'
    prepared: str = ''
    race_kind: str = 'presence'
    ref_len: int = 20
    target_len: int = 5
    clock_ghz: float = 2.0


CACHE_KEYS = {
    'cache_sets': 'sets',
    'cache_ways': 'ways',
    'cache_policy': 'policy',
    'cache_levels': 'levels',
    'cache_inclusive': 'inclusive',
    'llc_sets': 'llc_sets',
    'llc_ways': 'llc_ways',
    'weak_fill': 'weak_fill',
}


def _defaults_of(cls, names=None) -> dict:
    values = {}
    for f in fields(cls):
        if names is None or f.name in names:
            value = f.default
            values[f.name] = value.value if isinstance(value, ReplacementPolicy) else value
    return values


MICRO_DEFAULTS = _defaults_of(MicroarchConfig)
CACHE_DEFAULTS = {key: _defaults_of(CacheConfig)[name] for key, name in CACHE_KEYS.items()}
PARAM_DEFAULTS = _defaults_of(ExperimentParams)
DEFAULTS = {**MICRO_DEFAULTS, **CACHE_DEFAULTS, **PARAM_DEFAULTS}


@dataclass(frozen=True)
class ResolvedConfig:
    micro: MicroarchConfig = field(default_factory=MicroarchConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    params: ExperimentParams = field(default_factory=ExperimentParams)

    @property
    def seed(self) -> int:
        return self.micro.seed

    def as_dict(self) -> dict:
        values = asdict(self.micro)
        cache = asdict(self.cache)
        for key, name in CACHE_KEYS.items():
            value = cache[name]
            values[key] = value.value if isinstance(value, ReplacementPolicy) else value
        values.update(asdict(self.params))
        return dict(sorted(values.items()))

    def config_hash(self) -> str:
        return config_hash(self.as_dict())

    def with_overrides(self, **overrides) -> ResolvedConfig:
        values = self.as_dict()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return resolve(values)


def config_hash(values: dict) -> str:
    payload = json.dumps(values, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode()).hexdigest()


def default_config_hash() -> str:
    return ResolvedConfig().config_hash()


def _scalar(raw: str):
    return None if raw.strip().lower() in ('none', 'null') else raw.strip()


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Split a config file into raw values and the line each key came from"""
    values, lines = {}, {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if not stripped:
            continue
        if '=' not in stripped:
            raise ParseError(number, f"expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split('=', 1))
        if not key:
            raise ParseError(number, "missing key")
        if key not in DEFAULTS:
            raise UnknownKey(number, key)
        values[key] = _scalar(raw)
        lines[key] = number
    return values, lines


def _validated(serializer_class, keys, values: dict, lines: dict) -> dict:
    data = {key: values.get(key, DEFAULTS[key]) for key in keys}
    serializer = serializer_class(data=data)
    if serializer.is_valid():
        return dict(serializer.validated_data)
    errors = serializer.errors
    for key, messages in errors.items():
        if key == 'non_field_errors':
            continue
        raise ParseError(lines.get(key, 0), f"{key}: {' '.join(str(m) for m in messages)}")
    raise ConfigRejected(' '.join(str(m) for m in errors.get('non_field_errors', [])))


def resolve(values: dict, lines: Optional[dict] = None) -> ResolvedConfig:
    """Validate raw values (strings or typed) against the defaults table"""
    from .serializers import CacheConfigSerializer, ExperimentParamsSerializer, MicroarchConfigSerializer

    lines = lines or {}
    for key in values:
        if key not in DEFAULTS:
            raise UnknownKey(lines.get(key, 0), key)
    micro_values = _validated(MicroarchConfigSerializer, MICRO_DEFAULTS, values, lines)
    cache_values = _validated(CacheConfigSerializer, CACHE_DEFAULTS, values, lines)
    param_values = _validated(ExperimentParamsSerializer, PARAM_DEFAULTS, values, lines)

    micro = MicroarchConfig(**micro_values)
    geometry = {CACHE_KEYS[key]: value for key, value in cache_values.items()}
    geometry['policy'] = ReplacementPolicy(geometry['policy'])
    try:
        cache = CacheConfig(
            hit_latency=micro.l1_latency,
            miss_latency=micro.dram_latency,
            llc_latency=micro.llc_latency,
            seed=micro.seed,
            **geometry,
        )
    except ValueError as exc:
        raise ConfigRejected(str(exc)) from exc
    return ResolvedConfig(micro, cache, ExperimentParams(**param_values))


def load_config(path) -> ResolvedConfig:
    if path is None:
        return ResolvedConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(0, f"cannot read {path}: {exc.strerror}") from exc
    values, lines = parse_config_text(text)
    config = resolve(values, lines)
    logger.info(f"loaded {len(values)} keys from {path} (hash {config.config_hash()[:12]})")
    return config
