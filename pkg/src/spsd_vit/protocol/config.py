"""Experiment configuration: dataclasses, YAML loading, strict validation.

Unknown keys anywhere in a config file are rejected with the full key
path, so typos fail loudly before any work starts.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from ..data import AugmentConfig, SyntheticDomainSpec
from ..distill import MODES, DistillConfig
from ..errors import ConfigError
from ..model import NetworkConfig
from ..optim import AdamWConfig

SETTINGS = ("multi_source", "single_source")
DEFAULT_LAMBDA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_BETA_GRID = (0.2, 0.4, 0.6, 0.8)

# accepted spelling variants, normalised at load time
_KEY_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"
    seed: int = 0
    per_domain: int = 500
    num_classes: int = 5
    image_size: int = 32
    domains: tuple = ()
    root: str = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "folder"):
            raise ConfigError(f"data.kind must be 'synthetic' or 'folder', got {self.kind!r}")
        if self.kind == "synthetic":
            if not self.domains:
                raise ConfigError("synthetic data needs at least one entry in data.domains")
            specs = tuple(
                d if isinstance(d, SyntheticDomainSpec) else _build(SyntheticDomainSpec, d, "data.domains[]")
                for d in self.domains
            )
            object.__setattr__(self, "domains", specs)
        else:
            if not self.root:
                raise ConfigError("folder data needs data.root")


@dataclass(frozen=True)
class SweepGrid:
    lam: tuple = DEFAULT_LAMBDA_GRID
    beta_final: tuple = DEFAULT_BETA_GRID

    def __post_init__(self):
        if not self.lam or not self.beta_final:
            raise ConfigError("sweep grids must be non-empty")
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        object.__setattr__(self, "beta_final", tuple(float(v) for v in self.beta_final))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    method: str = "spsd"
    setting: str = "multi_source"
    total_steps: int = 3000
    eval_every: int = 100
    batch_size: int = 32
    seeds: tuple = (0, 1, 2)
    targets: tuple = None
    heatmap_samples: int = 4
    network: NetworkConfig = None
    distill: DistillConfig = field(default_factory=DistillConfig)
    optim: AdamWConfig = field(default_factory=AdamWConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepGrid = None

    def __post_init__(self):
        if not self.name or any(ch in self.name for ch in "/\\"):
            raise ConfigError(f"name must be a non-empty path-free string, got {self.name!r}")
        if self.method not in MODES:
            raise ConfigError(f"method must be one of {MODES}, got {self.method!r}")
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        for field_name in ("total_steps", "eval_every", "batch_size", "heatmap_samples"):
            if getattr(self, field_name) < (0 if field_name == "heatmap_samples" else 1):
                raise ConfigError(f"{field_name} must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        seeds = tuple(int(s) for s in self.seeds)
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"duplicate seeds: {seeds}")
        object.__setattr__(self, "seeds", seeds)
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.distill.mode != self.method:
            object.__setattr__(self, "distill", dataclasses.replace(self.distill, mode=self.method))
        if self.network is not None:
            if self.augment.out_size != self.network.image_size:
                raise ConfigError(
                    f"augment.out_size {self.augment.out_size} must equal "
                    f"network.image_size {self.network.image_size}"
                )
            if self.data.kind == "synthetic" and self.data.image_size != self.network.image_size:
                raise ConfigError(
                    f"data.image_size {self.data.image_size} must equal "
                    f"network.image_size {self.network.image_size}"
                )
            if self.data.kind == "synthetic" and self.network.num_classes != self.data.num_classes:
                raise ConfigError(
                    f"network.num_classes {self.network.num_classes} must equal "
                    f"data.num_classes {self.data.num_classes}"
                )


def _build(cls, raw, path):
    """Construct dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        key = _KEY_ALIASES.get(key, key)
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {where!r}")
        if isinstance(value, list):
            value = tuple(
                tuple(v) if isinstance(v, list) else v for v in value
            )
        kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {
    "network": NetworkConfig,
    "distill": DistillConfig,
    "optim": AdamWConfig,
    "augment": AugmentConfig,
    "data": DataConfig,
    "sweep": SweepGrid,
}


def config_from_dict(raw):
    """Build an :class:`ExperimentConfig` from a parsed-YAML dictionary."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    raw = dict(raw)
    augment_raw = raw.get("augment")
    out_size_given = isinstance(augment_raw, dict) and "out_size" in augment_raw
    sections = {}
    for key, cls in _SECTIONS.items():
        if key in raw:
            value = raw.pop(key)
            if value is None:  # an explicit null means "section absent"
                continue
            if key == "network" and isinstance(value, dict) and "num_classes" not in value:
                data_raw = raw.get("data") or {}
                if isinstance(data_raw, dict):
                    value = dict(value)
                    value["num_classes"] = data_raw.get(
                        "num_classes", DataConfig.num_classes
                    )
            sections[key] = _build(cls, value, key)
    top = _build_top(raw)
    network = sections.get("network")
    data = sections.get("data")
    if network is None and data is not None and data.kind == "synthetic":
        network = NetworkConfig(num_classes=data.num_classes, image_size=data.image_size)
        sections["network"] = network
    if network is not None and not out_size_given:
        augment = sections.get("augment", AugmentConfig())
        if augment.out_size != network.image_size:
            sections["augment"] = dataclasses.replace(
                augment, out_size=network.image_size
            )
    return ExperimentConfig(**top, **sections)


def _build_top(raw):
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(_SECTIONS)
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


def load_experiment_config(path):
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(config):
    """Round-trippable plain-dict snapshot of a config."""
    out = dataclasses.asdict(config)
    return json.loads(json.dumps(out))  # tuples -> lists, plain types only


def config_fingerprint(config):
    """Stable hash identifying a config (used to guard resume)."""
    payload = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
