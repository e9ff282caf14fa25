"""
YAML run configuration.

    model:      registry name + optional encoder weight manifests
    data:       dataset roots, which datasets to pool/test, split seed/ratio
    train:      TrainConfig
    eval:       MetricConfig
    output_dir: where every command writes (resolved_config.yaml included)

`${VAR}` references in string values are expanded after `.env` is loaded.
"""
import os
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from adapters.polyp import STANDARD_COUNTS
from adapters.splits import DEFAULT_RATIO, DEFAULT_SPLIT_SEED
from common.errors import ConfigError
from eval.sweep import MetricConfig
from training.checkpoint import config_hash
from training.loop import TrainConfig
from training.schedule import schedule_notes

RESOLVED_NAME = "resolved_config.yaml"


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    encoder_1_weights: Optional[str] = None
    encoder_2_weights: Optional[str] = None

    def recipe(self, img_size: int) -> Dict[str, Any]:
        """Keyword arguments for models.base.get_model."""
        return {
            "name": self.name,
            "encoder_1_weights": self.encoder_1_weights,
            "encoder_2_weights": self.encoder_2_weights,
            "img_size": img_size,
        }


class DataSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_root: Optional[str] = None
    test_root: Optional[str] = None
    train_datasets: List[str] = Field(default_factory=lambda: list(STANDARD_COUNTS["train"]))
    test_datasets: List[str] = Field(default_factory=lambda: list(STANDARD_COUNTS["test"]))
    split_seed: int = DEFAULT_SPLIT_SEED
    split_ratio: float = Field(DEFAULT_RATIO, gt=0, lt=1)
    split_manifest: Optional[str] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelSection
    data: DataSection = Field(default_factory=DataSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: MetricConfig = Field(default_factory=MetricConfig)
    output_dir: str = "runs/default"

    def recipe(self) -> Dict[str, Any]:
        return self.model.recipe(self.train.img_size)

    def hash(self) -> str:
        """Hash of the model and train sections; the seed is stored beside it, not in it."""
        train = self.train.model_dump(mode="json", exclude={"seed"})
        return config_hash({"model": self.model.model_dump(mode="json"), "train": train})


def _expand(value: Any) -> Any:
    if isinstance(value, str):
        return os.path.expandvars(value)
    if isinstance(value, dict):
        return {k: _expand(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand(v) for v in value]
    return value


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(raw: Dict[str, Any]) -> RunConfig:
    raw = dict(raw or {})
    raw.pop("notes", None)
    try:
        return RunConfig.model_validate(_expand(raw))
    except ValidationError as e:
        raise ConfigError(f"{e.error_count()} config error(s): {_format_errors(e)}") from e


def load_config(path: str) -> RunConfig:
    load_dotenv()
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    return parse_config(raw)


def write_resolved_config(cfg: RunConfig, out_dir: Optional[str] = None) -> str:
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    doc = cfg.model_dump(mode="json")
    doc["notes"] = {
        **schedule_notes(cfg.train.pct_start, cfg.train.div_factor, cfg.train.final_div_factor),
        "config_hash": cfg.hash(),
    }
    path = os.path.join(out_dir, RESOLVED_NAME)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)
    return path
