"""Run configuration: flat ``section.key = value`` text files.

Blank lines and ``#`` comments are ignored.  Every key must be known; values
are parsed to the type of the default.  Lists are comma separated.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..anar import AnarConfig
from ..backbones import BackboneSpec
from ..r2dns import MODES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    backbone_name: str = "tiny_resnet"
    backbone_num_stages: int = 4
    backbone_stage_channels: tuple[int, ...] = (32, 64, 128, 256)
    backbone_num_classes: int = 4
    anar_variant: int = 3
    anar_interpolation_upsample: bool = False
    flows_count: int = 3
    flows_eta: float = 0.5
    flows_mode: str = "attention"
    optim_lr: float = 0.05
    optim_momentum: float = 0.9
    optim_weight_decay: float = 5e-4
    optim_milestones: tuple[float, ...] = (0.5, 0.75)
    optim_factor: float = 0.1
    train_epochs: int = 30
    train_batch_size: int = 64
    train_max_steps: int = 0
    train_seed: int = 0
    train_augment: bool = False
    data_dataset: str = "synthetic"
    data_dir: str = ""
    data_seed: int = 1234
    data_n_train: int = 5000
    data_n_test: int = 1000
    data_mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    data_std: tuple[float, ...] = (0.25, 0.25, 0.25)
    paths_out: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.flows_mode not in MODES:
            raise ConfigError(f"flows.mode must be one of {MODES}, got {self.flows_mode!r}")
        if self.data_dataset not in ("cifar10", "synthetic"):
            raise ConfigError(f"data.dataset must be cifar10 or synthetic, got {self.data_dataset!r}")
        if self.data_dataset == "cifar10" and not self.data_dir:
            raise ConfigError("data.dir is required for cifar10")
        if self.train_epochs < 1 or self.train_batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be positive")
        if len(self.data_mean) != 3 or len(self.data_std) != 3 or min(self.data_std) <= 0:
            raise ConfigError("data.mean and data.std need three entries, std positive")
        if not 1 <= self.flows_count <= self.backbone_num_stages:
            raise ConfigError(f"flows.count must lie in 1..{self.backbone_num_stages}, got {self.flows_count}")
        if not 0 <= self.flows_eta <= 1:
            raise ConfigError(f"flows.eta must lie in [0, 1], got {self.flows_eta}")
        if any(not 0 < m <= 1 for m in self.optim_milestones):
            raise ConfigError("optim.milestones are fractions of the epoch budget in (0, 1]")
        try:
            self.backbone()
            if self.flows_mode == "attention":
                self.anar(32)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def backbone(self) -> BackboneSpec:
        return BackboneSpec(self.backbone_name, self.backbone_num_stages, self.backbone_stage_channels, self.backbone_num_classes)

    def anar(self, channels: int = 32) -> AnarConfig:
        return AnarConfig(self.anar_variant, channels, self.anar_interpolation_upsample)

    def milestone_epochs(self) -> list[int]:
        return [int(round(m * self.train_epochs)) for m in self.optim_milestones]

    def items(self) -> dict[str, object]:
        return {_dotted(f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items().items())

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw).validate()


def _dotted(field_name: str) -> str:
    section, key = field_name.split("_", 1)
    return f"{section}.{key}"


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


_FIELDS = {_dotted(f.name): f for f in dataclasses.fields(RunConfig)}


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        elem = type(default[0]) if default else float
        return tuple(elem(p.strip()) for p in raw.split(",") if p.strip())
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        f = _FIELDS[key]
        try:
            values[f.name] = _parse_value(raw, f.default)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from e
    try:
        return RunConfig(**values).validate()
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def config_diff(a: RunConfig, b: RunConfig) -> dict[str, tuple]:
    ia, ib = a.items(), b.items()
    return {k: (ia[k], ib[k]) for k in ia if ia[k] != ib[k]}


def assert_comparable(a: RunConfig, b: RunConfig, allowed=("flows.", "anar.", "paths.")) -> None:
    """Fail unless the two runs differ only in attention-related (or output) keys."""
    bad = [k for k in config_diff(a, b) if not k.startswith(allowed)]
    if bad:
        raise ConfigError(f"configs differ outside {allowed}: {bad}")
