"""Experiment configuration: JSON in, fully-defaulted JSON echoed out."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoders import EncoderSpec
from .errors import ConfigError
from .train import TrainingConfig

OUT_ENV = "DSSJE_OUT"


def default_output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass
class SyntheticConfig:
    n_classes: int = 30
    n_train_classes: int = 20
    n_val_classes: int = 0
    images_per_class: int = 50
    captions_per_image: int = 10
    n_attributes: int = 12
    # None -> the encoder's embed_dim, so the identity image encoder fits
    feature_dim: int | None = None
    noise_sigma: float = 0.5
    seed: int = 0
    phrase_dropout: bool = True
    word_vector_dim: int = 16


@dataclass
class DatasetConfig:
    path: str | None = None
    synthetic: SyntheticConfig | None = None


@dataclass
class EvaluationConfig:
    captions_per_class: int | str = "all"
    split: str = "test"
    seed: int = 0
    sweep_axis: str | None = None
    sweep_counts: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128, "all"])
    sweep_repeats: int = 10


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    encoder: EncoderSpec
    training: TrainingConfig
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.resolved().to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        _check_keys(cls, d, "experiment")
        seed = int(d.get("seed", 0))
        ds = dict(d.get("dataset") or {})
        _check_keys(DatasetConfig, ds, "dataset")
        enc = dict(d.get("encoder") or {})
        enc.setdefault("seed", seed)
        synth = ds.get("synthetic")
        if synth is None and ds.get("path") is None:
            synth = {}
        if synth is not None:
            synth = dict(synth)
            _check_keys(SyntheticConfig, synth, "dataset.synthetic")
            synth.setdefault("seed", seed)
            if synth.get("feature_dim") is None:
                synth["feature_dim"] = enc.get("embed_dim", EncoderSpec.embed_dim)
            synth = SyntheticConfig(**synth)
        tr = dict(d.get("training") or {})
        tr.setdefault("seed", seed)
        ev = dict(d.get("evaluation") or {})
        _check_keys(EvaluationConfig, ev, "evaluation")
        ev.setdefault("seed", seed)
        return cls(DatasetConfig(ds.get("path"), synth), EncoderSpec.from_dict(enc),
                   TrainingConfig.from_dict(tr), EvaluationConfig(**ev), d.get("output_dir"), seed)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(raw)


def _check_keys(cls, d: dict, where: str) -> None:
    extra = set(d) - {f.name for f in fields(cls)}
    if extra:
        raise ConfigError(f"unknown {where} fields {sorted(extra)}")


def parse_count(text: str) -> int | str:
    if text == "all":
        return "all"
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"caption count must be a positive integer or 'all', got {text!r}") from None
    if n < 1:
        raise ConfigError(f"caption count must be positive, got {n}")
    return n
