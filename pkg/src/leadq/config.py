"""Experiment configuration: nested dataclasses behind flat ``section.key = value`` files."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .fl import RoundConfig
from .marl.learner import MarlConfig
from .policies import POLICY_KINDS


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"       # "synthetic" or a CSV path
    n_classes: int = 10
    dim: int = 16
    per_class: int = 5000
    spread: float = 1.0
    center_scale: float = 1.0
    test_size: int = 2000

    def __post_init__(self):
        if self.source == "synthetic":
            if self.n_classes < 2 or self.dim < 2:
                raise ConfigurationError("data.n_classes and data.dim must be >= 2")
            if self.per_class < 1:
                raise ConfigurationError("data.per_class must be >= 1")
            if not self.spread > 0:
                raise ConfigurationError("data.spread must be positive")
        if self.test_size < 1:
            raise ConfigurationError("data.test_size must be >= 1")


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "dirichlet"
    alpha: float = 0.5
    classes_per_client: int = 2

    def __post_init__(self):
        if self.kind not in ("dirichlet", "quantity"):
            raise ConfigurationError("partition.kind must be 'dirichlet' or 'quantity'")
        if self.kind == "dirichlet" and not self.alpha > 0:
            raise ConfigurationError("partition.alpha must be positive")
        if self.kind == "quantity" and self.classes_per_client < 1:
            raise ConfigurationError("partition.classes_per_client must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("model.hidden widths must be >= 1")
        if self.activation not in ("relu", "tanh", "identity"):
            raise ConfigurationError("model.activation must be relu, tanh or identity")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    fl: RoundConfig = field(default_factory=RoundConfig)
    leadq: MarlConfig = field(default_factory=MarlConfig)
    clients: int = 10
    n_arrivals: int = 10
    n_query: int = 1
    initial_labeled: int = 1
    rounds: int = 500
    held_out_size: int = 1000
    policy: str = "leadq"
    seeds: tuple = (0,)
    out: str = "runs/default"
    checkpoint_every: int = 10
    kl_smoothing: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "policy", self.policy.replace("-", "_"))
        if self.clients < 1:
            raise ConfigurationError("clients must be >= 1")
        if self.n_arrivals < 1:
            raise ConfigurationError("n_arrivals must be >= 1")
        if not 0 <= self.n_query <= self.n_arrivals:
            raise ConfigurationError("n_query must lie in [0, n_arrivals]")
        if self.initial_labeled < 0 or self.rounds < 0:
            raise ConfigurationError("initial_labeled and rounds must be >= 0")
        if self.held_out_size < 1:
            raise ConfigurationError("held_out_size must be >= 1")
        if self.policy not in POLICY_KINDS or self.policy == "warmup":
            raise ConfigurationError(f"policy must be one of random, uncertainty, coreset_local, "
                                     f"coreset_global, leadq; got {self.policy!r}")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")
        if self.kl_smoothing < 0:
            raise ConfigurationError("kl_smoothing must be >= 0")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_SECTIONS = ("data", "partition", "model", "fl", "leadq")


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def to_flat(cfg: ExperimentConfig) -> dict:
    flat = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for g in dataclasses.fields(value):
                flat[f"{f.name}.{g.name}"] = _plain(getattr(value, g.name))
        else:
            flat[f.name] = _plain(value)
    return flat


def _coerce(template, value, key):
    if isinstance(template, bool):
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        if isinstance(value, bool):
            return value
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(template, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(template, float):
            return float(value)
        if isinstance(template, tuple):
            if isinstance(value, (int, float)):
                value = [value]
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return tuple(value)
        if isinstance(template, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: cannot interpret {value!r}") from None
    return value


def from_flat(flat: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply flat ``section.key`` overrides onto ``base`` (defaults when omitted)."""
    base = base or ExperimentConfig()
    top = {}
    nested = {s: {} for s in _SECTIONS}
    for key, value in flat.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in nested:
                raise ConfigurationError(f"unknown config section in {key!r}")
            sub = getattr(base, section)
            if name not in {g.name for g in dataclasses.fields(sub)}:
                raise ConfigurationError(f"unknown config key {key!r}")
            nested[section][name] = _coerce(getattr(sub, name), value, key)
        else:
            if key not in {f.name for f in dataclasses.fields(base)} or key in _SECTIONS:
                raise ConfigurationError(f"unknown config key {key!r}")
            top[key] = _coerce(getattr(base, key), value, key)
    try:
        for section, changes in nested.items():
            if changes:
                top[section] = dataclasses.replace(getattr(base, section), **changes)
        return dataclasses.replace(base, **top)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def _parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text) -> dict:
    flat = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected 'key = value'")
        key, value = line.split("=", 1)
        flat[key.strip()] = _parse_value(value)
    return flat


def serialize(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in to_flat(cfg).items())


def parse(text, base=None) -> ExperimentConfig:
    return from_flat(parse_config_text(text), base)


def load(path, base=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    return parse(path.read_text(), base)


def builtin_config_path(name):
    """Path of a config shipped with the package (``published``, ``coreset_gap``, ``policy_compare``)."""
    p = Path(__file__).parent / "configs" / f"{name}.cfg"
    if not p.exists():
        raise ConfigurationError(f"no built-in config named {name!r}")
    return p
