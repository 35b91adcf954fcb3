"""
Run configuration: a flat `section.key = value` file validated into pydantic
models. Every seed is split off `root.seed`; section models never take a
seed from the file.
"""

import hashlib
from collections.abc import Sequence
from enum import Enum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ucf.downstream.common import ALL_KINDS, ClassifierKind
from ucf.datagen import GenConfig
from ucf.encoder import EncoderConfig
from ucf.errors import ConfigError, MissingArtifactError
from ucf.evaluation.tsne import TsneConfig
from ucf.trainer import TrainConfig
from ucf.utils import derive_seed, validate_config

SECTIONS = ("root", "gen", "encoder", "train", "eval", "tsne")
SEEDED_SECTIONS = ("gen", "train", "tsne")

SEED_LABELS = {
    "gen": "gen",
    "encoder": "encoder.init",
    "train": "train",
    "cv": "eval.cv",
    "holdout": "eval.holdout",
    "tsne": "eval.tsne",
}


class RootConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0, lt=2**64)


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    classifiers: tuple[ClassifierKind, ...] = ALL_KINDS
    folds: int = Field(5, ge=2)
    cv_split: Literal["val", "train"] = "val"
    threshold: float = 0.5
    holdout_labels: Literal["ground_truth", "pu"] = "ground_truth"
    project_split: Literal["val", "unlabeled_train"] = "val"
    tsne_max_points: int = Field(2000, ge=10)
    num_processes: int = Field(1, ge=1)

    @field_validator("classifiers", mode="before")
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return value

    @field_validator("classifiers")
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("at least one classifier is required")
        if len(set(value)) != len(value):
            raise ValueError("classifiers are listed more than once")
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    root: RootConfig = RootConfig()
    gen: GenConfig = GenConfig()
    encoder: EncoderConfig = EncoderConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    tsne: TsneConfig = TsneConfig()

    @model_validator(mode="after")
    def _feature_count(self):
        if self.gen.n_features != self.encoder.input_dim:
            raise ValueError(
                f"gen.n_features={self.gen.n_features} differs from encoder.input_dim={self.encoder.input_dim}"
            )
        return self

    @property
    def seed(self) -> int:
        return self.root.seed

    def seed_for(self, what: str) -> int:
        return derive_seed(self.root.seed, SEED_LABELS[what])

    def classifier_seed(self, kind: ClassifierKind | str) -> int:
        return derive_seed(self.root.seed, f"downstream.{ClassifierKind(kind).value}")

    def gen_config(self) -> GenConfig:
        return self.gen.model_copy(update={"seed": self.seed_for("gen")})

    def train_config(self) -> TrainConfig:
        return self.train.model_copy(update={"seed": self.seed_for("train")})

    def tsne_config(self) -> TsneConfig:
        return self.tsne.model_copy(update={"seed": self.seed_for("tsne")})

    def to_flat(self) -> dict[str, str]:
        """Every setting as `section.key -> text`, sorted by key."""
        flat = {}
        for section in SECTIONS:
            model = getattr(self, section)
            for name in sorted(type(model).model_fields):
                if section in SEEDED_SECTIONS and name == "seed":
                    continue
                flat[f"{section}.{name}"] = _render(getattr(model, name))
        return flat

    def render(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()


def _render(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_render(v) for v in value)
    return str(value)


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    """
    Parse `key = value` lines. `#` starts a comment; blank lines are skipped.
    A key may appear only once.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: '{key}' is set twice")
        values[key] = value
    return values


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got '{item}'")
    key, value = (part.strip() for part in item.split("=", 1))
    return key, value


def nest(values: dict[str, str]) -> dict[str, dict[str, str]]:
    nested: dict[str, dict[str, str]] = {}
    for key, value in values.items():
        section, dot, name = key.partition(".")
        if not dot or not name or "." in name:
            raise ConfigError(f"'{key}' is not of the form section.key")
        if section not in SECTIONS:
            raise ConfigError(f"unknown section '{section}' in '{key}' (known: {', '.join(SECTIONS)})")
        if section in SEEDED_SECTIONS and name == "seed":
            raise ConfigError(f"'{key}' cannot be set; every seed is derived from root.seed")
        nested.setdefault(section, {})[name] = value
    return nested


def build_run_config(values: dict[str, str]) -> RunConfig:
    return validate_config(RunConfig, nest(values))


def load_run_config(
    path: str | Path, overrides: Sequence[str] = (), seed: int | None = None
) -> RunConfig:
    """Config file, then `--set` overrides in order, then `--seed`."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(str(path))
    values = parse_flat(path.read_text(encoding="utf-8"), str(path))
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    if seed is not None:
        values["root.seed"] = str(seed)
    return build_run_config(values)
