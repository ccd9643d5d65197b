"""Experiment configuration: INI-style ``key = value`` entries in sections.

Unknown sections or keys are errors; a silent typo would corrupt an ablation.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError


@dataclass
class ExperimentSection:
    name: str = "experiment"
    seed: int = 0
    out: str = "runs/default"
    deterministic: bool = True


@dataclass
class NetworkSection:
    layers: str = "dense:4, dense:32"
    timesteps: int = 4
    encoding: str = "auto"


@dataclass
class NeuronSection:
    kind: str = "qblif"
    n_max: int = 20
    beta: float = 0.5
    alpha: float = 1.0
    v_theta: float = 1.0
    gamma_init: float = 1.0
    train_beta_alpha: bool = False


@dataclass
class SurrogateSection:
    kind: str = "relsg_et"
    arctan_sharpness: float = 2.0


@dataclass
class OptimizerSection:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 50
    cosine: bool = True


@dataclass
class DataSection:
    task: str = "temporal-xor"
    n_train: int = 3000
    n_test: int = 1000
    noise: float = 0.3
    n_patterns: int = 4
    dim: int = 16
    frames: int = 2
    n_classes: int = 4
    separation: float = 10.0
    sigma: float = 0.1
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""


@dataclass
class AblationSection:
    neurons: str = "binary, ilif, qblif"
    surrogates: str = "box_et, relsg_et"
    seeds: str = "0, 1, 2"
    timesteps: int = 2


@dataclass
class StatsSection:
    threshold: float = 0.01


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    neuron: NeuronSection = field(default_factory=NeuronSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    data: DataSection = field(default_factory=DataSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    stats: StatsSection = field(default_factory=StatsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Stable hash of everything except the output directory."""
        d = self.to_dict()
        d["experiment"].pop("out")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def out_dir(self) -> Path:
        return Path(self.experiment.out)

    def resolved_encoding(self) -> str:
        enc = self.network.encoding
        if enc == "auto":
            return "frames" if self.data.task == "temporal-xor" else "direct"
        return enc


def _convert(raw: str, typ, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    hints = typing.get_type_hints(ExperimentConfig)
    for section in parser.sections():
        if section not in hints:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        types = typing.get_type_hints(type(target))
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            setattr(target, key, _convert(raw, types[key], f"[{section}] {key}"))
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in values.items()]
        lines.append("")
    return "\n".join(lines)


def apply_overrides(cfg: ExperimentConfig, seed=None, timesteps=None, n_max=None,
                    surrogate=None, neuron=None, out=None) -> ExperimentConfig:
    cfg = dataclasses.replace(cfg, **{f.name: dataclasses.replace(getattr(cfg, f.name))
                                      for f in dataclasses.fields(cfg)})
    if seed is not None:
        cfg.experiment.seed = seed
    if timesteps is not None:
        cfg.network.timesteps = timesteps
    if n_max is not None:
        cfg.neuron.n_max = n_max
    if surrogate is not None:
        cfg.surrogate.kind = surrogate
    if neuron is not None:
        cfg.neuron.kind = neuron
    if out is not None:
        cfg.experiment.out = out
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    from .network import parse_layers
    from .neurons import NeuronKind
    from .surrogates import SurrogateKind

    try:
        NeuronKind.parse(cfg.neuron.kind)
        SurrogateKind.parse(cfg.surrogate.kind)
        for k in _split(cfg.ablation.neurons):
            NeuronKind.parse(k)
        for k in _split(cfg.ablation.surrogates):
            SurrogateKind.parse(k)
        [int(s) for s in _split(cfg.ablation.seeds)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    parse_layers(cfg.network.layers)
    if cfg.network.timesteps < 1:
        raise ConfigError("[network] timesteps must be >= 1")
    if cfg.network.encoding not in ("auto", "direct", "frames"):
        raise ConfigError("[network] encoding must be auto, direct or frames")
    if cfg.neuron.n_max < 1:
        raise ConfigError("[neuron] n_max must be >= 1")
    if cfg.data.task not in ("gaussians", "temporal-xor", "idx"):
        raise ConfigError(f"[data] unknown task {cfg.data.task!r}")
    if cfg.data.task == "idx":
        for key in ("train_images", "test_images"):
            path = getattr(cfg.data, key)
            if not path or not Path(path).exists():
                raise ConfigError(f"[data] {key} does not exist: {path!r}")
        for key in ("train_labels", "test_labels"):
            path = getattr(cfg.data, key)
            if path and not Path(path).exists():
                raise ConfigError(f"[data] {key} does not exist: {path!r}")


def _split(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]
