import os
from dataclasses import dataclass, field, fields, replace, asdict
from typing import Any, Dict, List, Optional

import yaml

from .errors import ConfigError
from .reinforcement import RESAMPLE_MODES


@dataclass
class ModalityConfig:
    dim: int = 16
    informative: int = 8   # leading dims carrying the class signal
    noise: float = 1.0     # std of the informative dims


@dataclass
class SynthConfig:
    num_classes: int = 3
    samples_per_class: int = 200
    seed: int = 7
    modalities: List[ModalityConfig] = field(default_factory=lambda: [
        ModalityConfig(dim=16, informative=8, noise=0.3),
        ModalityConfig(dim=16, informative=2, noise=1.5),
    ])

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes", "synth.num_classes")
        if self.samples_per_class < 2:
            raise ConfigError("need at least 2 samples per class", "synth.samples_per_class")
        if not self.modalities:
            raise ConfigError("need at least one modality", "synth.modalities")
        for i, mod in enumerate(self.modalities):
            if mod.dim < 1:
                raise ConfigError("dimension must be positive", f"synth.modalities[{i}].dim")
            if not 0 <= mod.informative <= mod.dim:
                raise ConfigError("informative dims must lie in [0, dim]", f"synth.modalities[{i}].informative")
            if mod.noise <= 0:
                raise ConfigError("noise scale must be > 0", f"synth.modalities[{i}].noise")


@dataclass
class TrainConfig:
    epochs: int = 60
    warmup: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lambda1: float = 1.0
    lambda2: float = 1.0
    temperature: float = 0.1     # smooth-min temperature
    slope: float = -2.0          # resample slope k
    probe_weight: float = 1.0
    hidden_dim: int = 16
    seed: int = 0
    train_fraction: float = 0.8
    # Strategy toggles
    dff: bool = True
    bmml: bool = True
    dsr: bool = True
    resample_mode: str = "dsr"
    defer_resample: bool = False  # train extras in the next epoch instead of the current one
    max_epoch_factor: float = 4.0
    smoothing: float = 0.0        # Laplace smoothing on soft joints
    degenerate_eps: float = 1e-8
    cmi_floor: float = 0.1        # lower bound on the joint contribution that L_phi_cmi divides by

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("must be >= 1", "train.epochs")
        if not 0 <= self.warmup <= self.epochs:
            raise ConfigError("must lie in [0, epochs]", "train.warmup")
        if self.batch_size < 2:
            raise ConfigError("must be >= 2 (mutual information needs two samples)", "train.batch_size")
        for key in ("lr", "temperature", "max_epoch_factor"):
            if getattr(self, key) <= 0:
                raise ConfigError("must be > 0", f"train.{key}")
        for key in ("momentum", "weight_decay", "lambda1", "lambda2", "probe_weight", "smoothing", "cmi_floor"):
            if getattr(self, key) < 0:
                raise ConfigError("must be >= 0", f"train.{key}")
        if self.slope >= 0:
            raise ConfigError("resample slope must be negative", "train.slope")
        if self.hidden_dim < 1:
            raise ConfigError("must be >= 1", "train.hidden_dim")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("must lie in (0, 1)", "train.train_fraction")
        if self.resample_mode not in RESAMPLE_MODES:
            raise ConfigError(f"must be one of {RESAMPLE_MODES}", "train.resample_mode")


@dataclass
class OutputConfig:
    output_dir: str = "runs"
    log_dir: str = "logs"
    seeds: List[int] = field(default_factory=list)  # empty => [train.seed]
    workers: int = 1
    dataset_path: str = ""   # CSV dataset; empty => generate from synth
    progress: bool = True

    def validate(self):
        if self.workers < 1:
            raise ConfigError("must be >= 1", "output.workers")


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def load(cls, config_path: Optional[str] = "config/config.yaml") -> 'ExperimentConfig':
        """Load configuration from a YAML file. Unknown keys are rejected."""
        if not config_path or not os.path.exists(config_path):
            return cls()

        with open(config_path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ConfigError("top level must be a mapping")
        _reject_unknown(data, {"synth", "train", "output"}, "")

        synth_data = dict(data.get("synth") or {})
        modalities = synth_data.pop("modalities", None)
        synth = _build(SynthConfig, synth_data, "synth")
        if modalities is not None:
            if not isinstance(modalities, list):
                raise ConfigError("must be a list", "synth.modalities")
            synth = replace(synth, modalities=[
                _build(ModalityConfig, m or {}, f"synth.modalities[{i}]") for i, m in enumerate(modalities)
            ])

        cfg = cls(
            synth=synth,
            train=_build(TrainConfig, data.get("train") or {}, "train"),
            output=_build(OutputConfig, data.get("output") or {}, "output"),
        )
        cfg.validate()
        return cfg

    def validate(self):
        self.synth.validate()
        self.train.validate()
        self.output.validate()

    def run_seeds(self) -> List[int]:
        return list(self.output.seeds) or [self.train.seed]

    def with_overrides(self, train: Optional[Dict[str, Any]] = None,
                       output: Optional[Dict[str, Any]] = None) -> 'ExperimentConfig':
        """Return a copy with flag values applied on top of file values."""
        train_kw = {k: v for k, v in (train or {}).items() if v is not None}
        output_kw = {k: v for k, v in (output or {}).items() if v is not None}
        _reject_unknown(train_kw, _field_names(TrainConfig), "train")
        _reject_unknown(output_kw, _field_names(OutputConfig), "output")
        cfg = replace(
            self,
            train=replace(self.train, **{k: _coerce(TrainConfig, k, v, "train") for k, v in train_kw.items()}),
            output=replace(self.output, **{k: _coerce(OutputConfig, k, v, "output") for k, v in output_kw.items()}),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _reject_unknown(data: Dict[str, Any], known: set, prefix: str):
    for key in data:
        if key not in known:
            raise ConfigError("unknown configuration key", f"{prefix}.{key}" if prefix else str(key))


def _coerce(cls, name: str, value: Any, prefix: str) -> Any:
    default = getattr(cls(), name)
    key = f"{prefix}.{name}"
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            # yaml reads "1e-3" as a string
            return float(value)
        if isinstance(default, str):
            return str(value)
        if isinstance(default, list):
            if not isinstance(value, list):
                raise TypeError
            return [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r}", key) from None
    return value


def _build(cls, data: Dict[str, Any], prefix: str):
    if not isinstance(data, dict):
        raise ConfigError("must be a mapping", prefix)
    _reject_unknown(data, _field_names(cls), prefix)
    return cls(**{k: _coerce(cls, k, v, prefix) for k, v in data.items()})
