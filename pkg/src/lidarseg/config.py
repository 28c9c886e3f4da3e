"""Pipeline configuration: nested dataclasses loaded from a TOML file.

Example::

    seed = 7
    threshold = 0.9

    [ground_filter]
    method = "csf"

    [ground_filter.cloth]
    cell_size = 0.5

    [classifier]
    kind = "svm"

    [classifier.svm]
    C = 10.0
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .clustering import DbscanParams, MeanShiftParams
from .errors import ConfigError
from .features import EIGEN_MODES
from .ground_filter import ClothParams, RansacParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class GroundFilterConfig:
    method: str = "csf"
    cloth: ClothParams = field(default_factory=ClothParams)
    ransac: RansacParams = field(default_factory=RansacParams)

    def validate(self):
        if self.method not in ("csf", "ransac"):
            raise ConfigError(f"ground_filter.method must be csf or ransac, not {self.method!r}")
        self.cloth.validate()
        self.ransac.validate()


@dataclass
class ClusteringConfig:
    method: str = "meanshift"
    meanshift: MeanShiftParams = field(default_factory=MeanShiftParams)
    dbscan: DbscanParams = field(default_factory=DbscanParams)

    def validate(self):
        if self.method not in ("meanshift", "dbscan"):
            raise ConfigError(f"clustering.method must be meanshift or dbscan, not {self.method!r}")
        self.meanshift.validate()
        self.dbscan.validate()

    @property
    def min_cluster_size(self) -> int:
        return self.meanshift.min_cluster_size


@dataclass
class FeatureConfig:
    eigen_mode: str = "eigenvalues"

    def validate(self):
        if self.eigen_mode not in EIGEN_MODES:
            raise ConfigError(f"features.eigen_mode must be one of {EIGEN_MODES}")


@dataclass
class TreeParams:
    max_depth: int = 10
    min_leaf: int = 1

    def validate(self):
        if self.max_depth < 0 or self.min_leaf < 1:
            raise ConfigError("tree needs max_depth >= 0 and min_leaf >= 1")


@dataclass
class SvmParams:
    C: float = 10.0
    epochs: int = 100
    batch_size: int = 16

    def validate(self):
        if self.C <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("svm needs C > 0, epochs >= 0, batch_size >= 1")


@dataclass
class MlpParams:
    epochs: int = 50
    dropout_rate: float = 0.5
    learning_rate: float = 0.05
    batch_size: int = 32
    hidden_layers: int = 2

    def validate(self):
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("mlp.dropout_rate must be in [0, 1)")
        if self.hidden_layers not in (1, 2, 3):
            raise ConfigError("mlp.hidden_layers must be 1, 2 or 3")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("mlp needs epochs >= 0, batch_size >= 1, learning_rate > 0")


@dataclass
class ClassifierConfig:
    kind: str = "tree"
    undersample: bool = False
    tree: TreeParams = field(default_factory=TreeParams)
    svm: SvmParams = field(default_factory=SvmParams)
    mlp: MlpParams = field(default_factory=MlpParams)

    def validate(self):
        if self.kind not in ("tree", "svm", "mlp"):
            raise ConfigError(f"classifier.kind must be tree, svm or mlp, not {self.kind!r}")
        self.tree.validate()
        self.svm.validate()
        self.mlp.validate()


@dataclass
class OutputConfig:
    write_ply: bool = False
    figures: bool = True


@dataclass
class PipelineConfig:
    ground_filter: GroundFilterConfig = field(default_factory=GroundFilterConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    threshold: float = 0.9
    seed: int = 0
    parallelism: int = 1
    split: list = field(default_factory=lambda: [23, 13])

    def validate(self) -> "PipelineConfig":
        self.ground_filter.validate()
        self.clustering.validate()
        self.features.validate()
        self.classifier.validate()
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if len(self.split) != 2 or min(self.split) < 0 or sum(self.split) <= 0:
            raise ConfigError("split must be two non-negative numbers, e.g. [23, 13]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _build(cls, data, "").validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
        return cls.from_dict(data)


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{prefix.rstrip('.')}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, default, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key} must be an array")
    return value


def default_config_toml() -> str:
    """The default configuration rendered as TOML."""
    lines = []

    def emit(obj, section):
        scalars = [(f.name, getattr(obj, f.name)) for f in dataclasses.fields(obj)
                   if f.init and not dataclasses.is_dataclass(getattr(obj, f.name))]
        if section:
            lines.append(f"\n[{section}]")
        for k, v in scalars:
            if isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {v!r}")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                emit(v, f"{section}.{f.name}" if section else f.name)

    emit(PipelineConfig(), "")
    return "\n".join(lines).lstrip() + "\n"


def write_default_config(path) -> Path:
    path = Path(path)
    path.write_text(default_config_toml())
    return path
