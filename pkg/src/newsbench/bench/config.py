"""Experiment configuration: loading, validation, defaults and hashing."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..green import CARBON_INTENSITIES, DEFAULT_INTENSITY, DEFAULT_PROFILE, HARDWARE_PROFILES
from ..training import PretrainConfig, TrainConfig
from ..zoo import VARIANT_KINDS, BASE_MODELS, PLMConfig, VariantSpec, enumerate_grid

logger = logging.getLogger(__name__)

EMISSION_MODES = ("train_only", "total")
SHARD_FORMATS = ("ndjson", "binary")
SPLIT_METHODS = ("random", "temporal")
ENV_PATHS = {"train_dir": "NEWSBENCH_TRAIN_DIR", "dev_dir": "NEWSBENCH_DEV_DIR", "output_dir": "NEWSBENCH_OUTPUT_DIR"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "custom"
    train_dir: str | None = None
    dev_dir: str | None = None
    synthetic: Mapping[str, Any] | None = None
    split_seed: int = 0
    split_method: str = "random"
    min_freq: int = 1
    max_title_len: int = 30

    def to_dict(self) -> dict:
        return {f.name: (dict(v) if isinstance(v := getattr(self, f.name), Mapping) else v) for f in fields(self)}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    variants: tuple[VariantSpec, ...]
    train: TrainConfig = TrainConfig()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hardware_profile: str = DEFAULT_PROFILE
    carbon_intensity: str = DEFAULT_INTENSITY
    emissions: str = "train_only"
    output_dir: str = "runs"
    embed_dim: int = 64
    plm: PLMConfig = PLMConfig()
    pretrain: PretrainConfig = PretrainConfig()
    shard_format: str = "ndjson"
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    @property
    def store_path(self) -> Path:
        return Path(self.output_dir) / "results.ndjson"

    def spec_hash(self, spec: VariantSpec) -> str:
        """Deterministic hash of everything that determines one variant's result."""
        payload = {
            "dataset": self.dataset.to_dict(),
            "spec": spec.to_dict(),
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
            "hardware_profile": self.hardware_profile,
            "carbon_intensity": self.carbon_intensity,
            "emissions": self.emissions,
        }
        if spec.variant_kind in ("PLM_NR", "BERT_OLEO"):
            payload["plm"] = self.plm.to_dict()
        if spec.variant_kind == "PREC":
            payload["pretrain"] = self.pretrain.to_dict()
        return config_hash(payload)


def config_hash(payload: Mapping) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_keys(section: str, given: Mapping, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {', '.join(unknown)}")


def _check_enum(name: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"invalid {name} {value!r}; expected one of {list(allowed)}")


def parse_variant(item, embed_dim: int) -> VariantSpec:
    if isinstance(item, str):
        base, sep, kind = item.partition("-")
        if not sep:
            raise ConfigError(f"variant {item!r} must look like BASE-KIND, e.g. NAML-PREC")
        item = {"base_model": base, "variant_kind": kind}
    if not isinstance(item, Mapping):
        raise ConfigError(f"cannot parse variant {item!r}")
    _check_keys("variant", item, ("base_model", "variant_kind", "embed_dim", "overrides"))
    _check_enum("base_model", item.get("base_model"), BASE_MODELS)
    _check_enum("variant_kind", item.get("variant_kind"), VARIANT_KINDS)
    return VariantSpec(item["base_model"], item["variant_kind"], item.get("embed_dim", embed_dim),
                       dict(item.get("overrides", {})))


def resolve_variants(selector, embed_dim: int = 64) -> tuple[VariantSpec, ...]:
    """`all` (the full 30-variant grid), one variant, or a list of them."""
    if selector in (None, "all", "grid"):
        return tuple(enumerate_grid(embed_dim))
    if isinstance(selector, (str, Mapping)):
        selector = [selector]
    specs = tuple(parse_variant(s, embed_dim) for s in selector)
    if not specs:
        raise ConfigError("variant selector resolves to no variants")
    return specs


TOP_LEVEL_KEYS = ("dataset", "variants", "train", "seeds", "hardware_profile", "carbon_intensity", "emissions",
                  "output_dir", "embed_dim", "plm", "pretrain", "shard_format")


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    raw = dict(raw or {})
    _check_keys("config", raw, TOP_LEVEL_KEYS)

    ds_raw = dict(raw.get("dataset") or {})
    _check_keys("dataset", ds_raw, [f.name for f in fields(DatasetConfig)])
    for key in ("train_dir", "dev_dir"):
        if os.environ.get(ENV_PATHS[key]):
            ds_raw[key] = os.environ[ENV_PATHS[key]]
    dataset = DatasetConfig(**ds_raw)
    _check_enum("split_method", dataset.split_method, SPLIT_METHODS)
    if dataset.synthetic is None and not (dataset.train_dir and dataset.dev_dir):
        raise ConfigError("dataset needs train_dir and dev_dir, or a synthetic section")

    embed_dim = int(raw.get("embed_dim", 64))
    train_raw = dict(raw.get("train") or {})
    _check_keys("train", train_raw, [f.name for f in fields(TrainConfig)])
    train = TrainConfig(**train_raw)

    plm_raw = dict(raw.get("plm") or {})
    _check_keys("plm", plm_raw, [f.name for f in fields(PLMConfig)])
    plm = PLMConfig(**plm_raw)

    pre_raw = dict(raw.get("pretrain") or {})
    _check_keys("pretrain", pre_raw, [f.name for f in fields(PretrainConfig)])
    if "plm" in pre_raw:
        sub = dict(pre_raw["plm"] or {})
        _check_keys("pretrain.plm", sub, [f.name for f in fields(PLMConfig)])
        pre_raw["plm"] = PLMConfig(**sub)
    pretrain = PretrainConfig(**pre_raw)

    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds:
        raise ConfigError("at least one seed is required")

    emissions = raw.get("emissions", "train_only")
    _check_enum("emissions", emissions, EMISSION_MODES)
    shard_format = raw.get("shard_format", "ndjson")
    _check_enum("shard_format", shard_format, SHARD_FORMATS)
    profile = raw.get("hardware_profile", DEFAULT_PROFILE)
    _check_enum("hardware_profile", profile, HARDWARE_PROFILES)
    intensity = raw.get("carbon_intensity", DEFAULT_INTENSITY)
    _check_enum("carbon_intensity", intensity, CARBON_INTENSITIES)

    output_dir = os.environ.get(ENV_PATHS["output_dir"]) or raw.get("output_dir", "runs")
    return ExperimentConfig(
        dataset=dataset,
        variants=resolve_variants(raw.get("variants", "all"), embed_dim),
        train=train,
        seeds=tuple(int(s) for s in seeds),
        hardware_profile=profile,
        carbon_intensity=intensity,
        emissions=emissions,
        output_dir=str(output_dir),
        embed_dim=embed_dim,
        plm=plm,
        pretrain=pretrain,
        shard_format=shard_format,
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)  # JSON is valid YAML
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)
