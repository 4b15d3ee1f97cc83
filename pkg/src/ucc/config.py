"""Run configuration: plain ``section.key = value`` text with typed sections."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError


class ConfigError(ContractError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class DataConfig:
    pool: str = ""
    idx_images: str = ""
    idx_labels: str = ""
    idx_classes: tuple[int, ...] = ()
    idx_limit: int = 0
    images: str = ""
    val_images: str = ""
    val_fraction: float = 0.2
    bag_size: int = 32
    bags_per_label: int = 300
    val_bags_per_label: int = 100
    resample_bags: bool = False


@dataclass
class ModelConfig:
    features: int = 8
    feature_hidden: tuple[int, ...] = (32,)
    drn_hidden: tuple[int, ...] = (64, 32)
    decoder_hidden: tuple[int, ...] = (32,)
    bins: int = 11
    bandwidth: float = 0.1
    alpha: float = 0.5
    ucc_lo: int = 1
    ucc_hi: int = 4
    pooling: str = "kde"


@dataclass
class TrainSection:
    learning_rate: float = 0.5
    batch_size: int = 16
    max_iterations: int = 4000
    patience: int = 2000
    validation_period: int = 250


@dataclass
class ClusterConfig:
    method: str = "kmeans"
    k: int = 0  # 0: number of classes in the pool
    restarts: int = 10
    affinity_scale: float = 0.0  # 0: median pairwise distance


@dataclass
class EvalConfig:
    trials: int = 100
    bag_size: int = 0  # 0: data.bag_size


@dataclass
class SegConfig:
    patch_size: int = 16
    ucc1_low: float = 0.20
    ucc1_high: float = 0.80
    ucc2_low: float = 0.30
    ucc2_high: float = 0.70
    clusterer: str = "kmeans"
    per_image: bool = False
    reference_images: str = ""


@dataclass
class GenConfig:
    kind: str = "blobs"
    classes: int = 4
    dim: int = 8
    per_class: int = 500
    scale: float = 0.05
    separation: float = 4.0
    images: int = 50
    train_images: int = 150
    val_images: int = 45
    image_size: int = 128
    channels: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    gen: GenConfig = field(default_factory=GenConfig)

    def set(self, key: str, raw: str) -> None:
        parts = key.strip().split(".")
        if len(parts) == 1 and parts[0] == "seed":
            self.seed = _convert(int, raw, key)
            return
        if len(parts) != 2:
            raise ConfigError([f"{key}: keys look like section.name"])
        section = getattr(self, parts[0], None)
        if not dataclasses.is_dataclass(section):
            raise ConfigError([f"{key}: unknown section {parts[0]!r}"])
        hints = typing.get_type_hints(type(section))
        if parts[1] not in hints:
            raise ConfigError([f"{key}: unknown key in section {parts[0]!r}"])
        setattr(section, parts[1], _convert(hints[parts[1]], raw, key))

    def items(self):
        yield "seed", self.seed
        for f in dataclasses.fields(self):
            if f.name == "seed":
                continue
            section = getattr(self, f.name)
            for sf in dataclasses.fields(section):
                yield f"{f.name}.{sf.name}", getattr(section, sf.name)

    def validate(self) -> None:
        from .kde_pool import KdeConfig
        from .model import POOLINGS, TrainConfig
        from .segmentation import SegThresholds

        problems = []
        m, d = self.model, self.data
        for label, make in [
            ("model.bins/model.bandwidth", lambda: KdeConfig(m.bins, m.bandwidth)),
            ("train.*", lambda: TrainConfig(self.train.learning_rate, self.train.batch_size,
                                            self.train.max_iterations, self.train.patience,
                                            self.train.validation_period, self.seed)),
            ("seg.ucc*", lambda: SegThresholds(self.seg.ucc1_low, self.seg.ucc1_high,
                                               self.seg.ucc2_low, self.seg.ucc2_high)),
        ]:
            try:
                make()
            except ContractError as exc:
                problems.append(f"{label}: {exc}")
        if not 0 <= m.alpha <= 1:
            problems.append(f"model.alpha: must lie in [0, 1], got {m.alpha}")
        if m.ucc_lo < 1 or m.ucc_hi < m.ucc_lo:
            problems.append(f"model.ucc_lo/ucc_hi: bad range {m.ucc_lo}..{m.ucc_hi}")
        if m.features < 1:
            problems.append("model.features: must be positive")
        if not m.drn_hidden:
            problems.append("model.drn_hidden: needs at least one hidden layer")
        if m.pooling not in POOLINGS:
            problems.append(f"model.pooling: must be one of {POOLINGS}")
        if d.bag_size < 1 or d.bags_per_label < 0 or d.val_bags_per_label < 0:
            problems.append("data.bag_size/bags_per_label: must be positive")
        if not 0 < d.val_fraction < 1:
            problems.append("data.val_fraction: must lie in (0, 1)")
        if self.cluster.method not in ("kmeans", "spectral"):
            problems.append("cluster.method: must be kmeans or spectral")
        if self.seg.clusterer not in ("kmeans", "spectral"):
            problems.append("seg.clusterer: must be kmeans or spectral")
        if self.seg.patch_size < 1:
            problems.append("seg.patch_size: must be positive")
        if self.gen.kind not in ("blobs", "textures"):
            problems.append("gen.kind: must be blobs or textures")
        if problems:
            raise ConfigError(problems)


def _convert(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typing.get_origin(kind) is tuple:
            return tuple(int(t) for t in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError:
        raise ConfigError([f"{key}: cannot parse {raw!r}"]) from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in cfg.items())


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected key = value")
            continue
        key, raw = line.split("=", 1)
        try:
            cfg.set(key, raw)
        except ConfigError as exc:
            problems.extend(f"{source}:{lineno}: {p}" for p in exc.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | None, overrides=(), seed: int | None = None) -> RunConfig:
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError([f"config file not found: {p}"])
        cfg = parse_config(p.read_text(), str(p))
    else:
        cfg = RunConfig()
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"--set {item}: expected key=value"])
        key, raw = item.split("=", 1)
        cfg.set(key, raw)
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg
