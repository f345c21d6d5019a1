"""Run configuration: INI file with defaults, dotted overrides, digest.

The config file is the single source of truth for a run; command-line
`--set section.key=value` overrides are equivalent to editing the file.
Every key has a default and unknown sections/keys are errors, so typos
fail loudly.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields

from .predictor import PredictorConfig
from .world import SyntheticWorldSpec


class ConfigError(ValueError):
    """Bad config file, key, or value; the message names the key."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/toy"


@dataclass(frozen=True)
class WorldSection:
    relation_count: int = 8
    entities_per_relation: int = 100
    objects_per_relation: int = 20
    eval_fraction: float = 0.5


@dataclass(frozen=True)
class PredictorSection:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 1024
    max_len: int = 16


@dataclass(frozen=True)
class PredictorStageSection:
    learning_rate: float = 1e-3
    epochs: int = 5
    batch_size: int = 64
    target_p_at_1: float = 0.95
    fail_p_at_1: float = 0.80
    eval_every: int = 10


@dataclass(frozen=True)
class IdentityStageSection:
    learning_rate: float = 1e-3
    epochs: int = 5
    batch_size: int = 64
    target_decode: float = 0.99
    fail_decode: float = 0.95
    eval_every: int = 10


@dataclass(frozen=True)
class BerteseStageSection:
    learning_rate: float = 3e-4
    epochs: int = 5
    batch_size: int = 64
    lambda1: float = 0.3
    lambda2: float = 0.5
    ste_mode: str = "hard"
    snap_input: bool = False
    # learning rate appropriate at full model scale; kept for reference
    # and selectable via learning_rate if desired
    full_scale_lr: float = 1e-5


@dataclass(frozen=True)
class FtStageSection:
    learning_rate: float = 1e-3
    epochs: int = 5
    batch_size: int = 64


@dataclass(frozen=True)
class RunConfig:
    run: RunSection
    world: WorldSection
    predictor: PredictorSection
    predictor_stage: PredictorStageSection
    identity_stage: IdentityStageSection
    bertese_stage: BerteseStageSection
    ft_stage: FtStageSection

    def world_spec(self) -> SyntheticWorldSpec:
        return SyntheticWorldSpec(
            relation_count=self.world.relation_count,
            entities_per_relation=self.world.entities_per_relation,
            objects_per_relation=self.world.objects_per_relation,
            eval_fraction=self.world.eval_fraction,
            seed=self.run.seed,
        )

    def predictor_config(self, vocab_size: int) -> PredictorConfig:
        p = self.predictor
        return PredictorConfig(
            dim=p.dim, layers=p.layers, heads=p.heads, ffn_dim=p.ffn_dim,
            max_len=p.max_len, vocab_size=vocab_size,
        )


_SECTIONS = {
    "run": RunSection,
    "world": WorldSection,
    "predictor": PredictorSection,
    "predictor_stage": PredictorStageSection,
    "identity_stage": IdentityStageSection,
    "bertese_stage": BerteseStageSection,
    "ft_stage": FtStageSection,
}


def _parse_value(section: str, key: str, raw: str, target_type: type):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError:
        raise ConfigError(
            f"config key {section}.{key}: cannot parse {raw!r} as {target_type.__name__}"
        ) from None


def _validate(config: RunConfig) -> RunConfig:
    for section_name in ("predictor_stage", "identity_stage", "bertese_stage", "ft_stage"):
        stage = getattr(config, section_name)
        if stage.learning_rate <= 0:
            raise ConfigError(f"config key {section_name}.learning_rate: must be positive")
        if stage.batch_size < 1:
            raise ConfigError(f"config key {section_name}.batch_size: must be at least 1")
        if stage.epochs < 1:
            raise ConfigError(f"config key {section_name}.epochs: must be at least 1")
    b = config.bertese_stage
    if b.lambda1 < 0 or b.lambda2 < 0:
        raise ConfigError("config key bertese_stage.lambda1/lambda2: must be nonnegative")
    if b.ste_mode not in ("hard", "soft"):
        raise ConfigError(
            f"config key bertese_stage.ste_mode: must be hard or soft, got {b.ste_mode!r}"
        )
    return config


def _build(raw: dict[str, dict[str, str]]) -> RunConfig:
    built = {}
    for section_name, cls in _SECTIONS.items():
        type_map = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        values = {}
        for key, raw_value in raw.get(section_name, {}).items():
            if key not in type_map:
                raise ConfigError(f"unknown config key {section_name}.{key}")
            values[key] = _parse_value(section_name, key, raw_value, type_map[key])
        built[section_name] = cls(**values)
    return _validate(RunConfig(**built))


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Parse an INI config file (or pure defaults) plus dotted overrides."""
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config file {path}: {e}") from e
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            raw[section] = dict(parser.items(section))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key_path, value = item.split("=", 1)
        if "." not in key_path:
            raise ConfigError(f"override key {key_path!r} must look like section.key")
        section, key = key_path.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        raw.setdefault(section, {})[key.strip()] = value
    return _build(raw)


def config_to_ini(config: RunConfig) -> str:
    """Canonical INI rendering of the full effective configuration."""
    out = io.StringIO()
    for section_name, cls in _SECTIONS.items():
        section = getattr(config, section_name)
        out.write(f"[{section_name}]\n")
        for f in fields(cls):
            out.write(f"{f.name} = {getattr(section, f.name)}\n")
        out.write("\n")
    return out.getvalue()


def config_digest(config: RunConfig) -> str:
    return hashlib.sha256(config_to_ini(config).encode("utf-8")).hexdigest()[:16]
