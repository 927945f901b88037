"""
UGSD Run Configuration
YAML experiment files, environment overrides and seed sub-streams

Precedence: command-line flags > environment (.env via python-dotenv) >
config file > built-in defaults.
"""

from __future__ import annotations

import copy
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from adaptive import LengthConfig
from bench import BenchmarkSpec
from core import derive_seed
from errors import ConfigError, UgsdError
from simtime import CostModel
from verifier import AcceptanceConfig

logger = logging.getLogger(__name__)

STRATEGIES = ("ugsd", "edge_only", "cloud_only")
TRANSPORTS = ("inprocess", "loopback", "stream")

ENV_OVERRIDES = {
    "UGSD_HOST": (("serve.host", "transport.host"), str),
    "UGSD_PORT": (("serve.port", "transport.port"), int),
    "UGSD_STATUS_PORT": (("serve.status_port",), int),
    "UGSD_SEED": (("seed",), int),
}

DEFAULT_PORT = 8765


def parse_gamma(value) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"gamma must be a number, got {value!r}")
    if isinstance(value, str):
        value = value.strip().lower().replace("+", "")
        value = {"inf": math.inf, ".inf": math.inf, "-inf": -math.inf, "-.inf": -math.inf}.get(value, value)
    try:
        gamma = float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"gamma must be a number or +/-inf, got {value!r}") from e
    if math.isnan(gamma):
        raise ConfigError("gamma must not be NaN")
    return gamma


# ========================================
# SECTIONS
# ========================================

@dataclass(frozen=True)
class GateSettings:
    """Either a fixed gamma or a target escalation rate to calibrate gamma from"""

    gamma: Optional[float] = None
    escalation_rate: Optional[float] = None

    def __post_init__(self):
        if self.gamma is not None and self.escalation_rate is not None:
            raise ConfigError("set gate.gamma or gate.escalation_rate, not both")
        if self.escalation_rate is not None and not 0.0 <= self.escalation_rate <= 1.0:
            raise ConfigError(f"escalation_rate must be in [0, 1], got {self.escalation_rate}")


@dataclass(frozen=True)
class TransportSettings:
    kind: str = "inprocess"
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in TRANSPORTS:
            raise ConfigError(f"transport.kind must be one of {TRANSPORTS}, got {self.kind!r}")


@dataclass(frozen=True)
class ServeSettings:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    status_port: Optional[int] = None
    verifier: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    bundle: Optional[Path] = None
    strategy: str = "ugsd"
    gate: GateSettings = field(default_factory=GateSettings)
    acceptance: AcceptanceConfig = field(default_factory=AcceptanceConfig)
    lengths: LengthConfig = field(default_factory=LengthConfig)
    cost: CostModel = field(default_factory=CostModel)
    transport: TransportSettings = field(default_factory=TransportSettings)
    serve: ServeSettings = field(default_factory=ServeSettings)
    seed: Optional[int] = None
    output_dir: Path = Path("runs/latest")
    workers: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}")

    @property
    def session_seed(self) -> int:
        return derive_seed(self.seed, "sessions") if self.seed is not None else 0


# ========================================
# LOADING
# ========================================

_SECTIONS = {
    "gate": GateSettings,
    "acceptance": AcceptanceConfig,
    "lengths": LengthConfig,
    "cost": CostModel,
    "transport": TransportSettings,
    "serve": ServeSettings,
}
_TOP_LEVEL = {"benchmark", "bundle", "strategy", "seed", "output_dir", "workers"} | set(_SECTIONS)


def _build(cls: type, doc: Any, section: str):
    if doc is None:
        doc = {}
    if not isinstance(doc, Mapping):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    values = dict(doc)
    if section == "gate" and values.get("gamma") is not None:
        values["gamma"] = parse_gamma(values["gamma"])
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError, UgsdError) as e:
        raise ConfigError(f"invalid {section!r} section: {e}") from e


def set_dotted(doc: dict, key: str, value):
    """Set doc['a']['b'] for key 'a.b', creating sections as needed"""
    parts = key.split(".")
    target = doc
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(f"cannot override {key!r}: {part!r} is not a section")
    target[parts[-1]] = value


def env_overrides(environ: Mapping[str, str] = os.environ) -> dict[str, Any]:
    overrides = {}
    for name, (keys, cast) in ENV_OVERRIDES.items():
        raw = environ.get(name)
        if raw is None or raw == "":
            continue
        try:
            value = cast(raw)
        except ValueError as e:
            raise ConfigError(f"environment variable {name}={raw!r} is invalid") from e
        overrides.update((key, value) for key in keys)
    return overrides


def config_from_document(doc: Optional[Mapping], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    doc = copy.deepcopy(dict(doc or {}))
    for key, value in (overrides or {}).items():
        set_dotted(doc, key, value)

    unknown = set(doc) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")

    seed = doc.get("seed")
    benchmark = BenchmarkSpec.from_document(doc.get("benchmark") or {})
    if seed is not None:
        try:
            seed = int(seed)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"seed must be an integer, got {seed!r}") from e
        benchmark = replace(benchmark, corpus_seed=derive_seed(seed, "corpus"),
                            draft_seed=derive_seed(seed, "draft"))

    sections = {name: _build(cls, doc.get(name), name) for name, cls in _SECTIONS.items()}
    try:
        return RunConfig(
            benchmark=benchmark,
            bundle=Path(doc["bundle"]) if doc.get("bundle") else None,
            strategy=str(doc.get("strategy", "ugsd")),
            seed=seed,
            output_dir=Path(doc.get("output_dir", "runs/latest")),
            workers=int(doc.get("workers", 1)),
            **sections,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_run_config(path: Optional[str | Path] = None,
                    flags: Optional[Mapping[str, Any]] = None,
                    environ: Mapping[str, str] = os.environ) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level")
        logger.debug(f"📄 loaded config from {path}")

    overrides = env_overrides(environ)
    overrides.update({k: v for k, v in (flags or {}).items() if v is not None})
    return config_from_document(doc, overrides)
