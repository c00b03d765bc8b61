"""INI pipeline configuration; unknown sections and keys are rejected."""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field

from .crf import CrfConfig
from .graphgan import GanConfig
from .parsernet import ModelConfig
from .pipeline import ClusteringConfig
from .scene import SceneConfig

SEED_ENV = "MHPARSE_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scale: float = 0.02
    steps: int = 500
    jobs: int = 1


@dataclass(frozen=True)
class CrfSwitch:
    enabled: bool = False


@dataclass(frozen=True)
class MetricsConfig:
    thresholds: tuple = (0.5,)
    pcp_threshold: float = 0.5


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = ""
    checkpoint: str = ""
    pred_dir: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    crf: CrfConfig = field(default_factory=CrfConfig)
    refine: CrfSwitch = field(default_factory=CrfSwitch)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Same config with one seed pushed into every section that has one."""
        return dataclasses.replace(
            self, run=dataclasses.replace(self.run, seed=seed),
            scene=dataclasses.replace(self.scene, seed=seed),
            gan=dataclasses.replace(self.gan, seed=seed),
            clustering=dataclasses.replace(self.clustering, seed=seed))


def _parse_value(raw: str, default, where: str):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("none", ""):
                return None
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _section(cls, items: dict, name: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        kwargs[key] = _parse_value(raw, getattr(defaults, key), f"[{name}] {key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def parse_config(text: str, source: str = "<string>") -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sections = {f.name: f.default_factory for f in dataclasses.fields(PipelineConfig)}
    built = {}
    for name in cp.sections():
        if name not in sections:
            raise ConfigError(f"{source}: unknown section [{name}]")
        built[name] = _section(type(sections[name]()), dict(cp.items(name)), name)
    cfg = PipelineConfig(**built)
    if cp.has_section("run") and cp.has_option("run", "seed"):
        cfg = cfg.with_seed(cfg.run.seed)
    return cfg


def load_config(path=None, env=None) -> PipelineConfig:
    """Config from ``path`` (defaults when None) with the seed env override applied."""
    if path is None:
        cfg = PipelineConfig()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        cfg = parse_config(text, str(path))
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        try:
            cfg = cfg.with_seed(int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg
