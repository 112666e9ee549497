"""Training configuration and its flat ``key = value`` file format.

Nested sections use dotted keys::

    # comments start with '#'
    epochs = 200
    grid.S = 15
    grid.x_range = -55, 55
    network.backbone = tiny_backbone
    network.block_schedule = 512x3, 256x4, 256x3, 128x3
    loss.iou = 10
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from ..errors import ConfigError
from ..grid_codec import GridSpec
from ..loss import LossWeights
from ..network import NetworkConfig

DATA_ROOT_ENV = "MONONEXT_DATA_ROOT"


@dataclass(frozen=True)
class TrainConfig:
    data_root: str = ""
    out_dir: str = "runs/mononext"
    train_split: str = "train"
    val_split: str = "val"
    class_names: Tuple[str, ...] = ("Car",)
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 8
    epochs: int = 200
    seed: int = 0
    augment: bool = True
    flip_prob: float = 0.5
    contrast_prob: float = 0.5
    contrast_range: Tuple[float, float] = (1.0, 1.5)
    cosine_lr: bool = False
    grad_clip: float = 0.0
    checkpoint_every: int = 10
    val_every: int = 10
    max_frames: int = 0
    prefetch: int = 2
    num_threads: int = 0
    threshold: float = 0.5
    nms_iou: float = 0.3
    protocol: str = "R11"
    grid: GridSpec = field(default_factory=GridSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.grid.num_classes != self.network.num_classes:
            raise ConfigError("grid.num_classes and network.num_classes differ")
        if len(self.class_names) != self.grid.num_classes:
            raise ConfigError("class_names must list one name per class")
        if self.network.grid_size != self.grid.S:
            raise ConfigError(f"network input {self.network.input_size} gives a "
                              f"{self.network.grid_size} grid, but grid.S = {self.grid.S}")

    def resolved_data_root(self) -> str:
        root = self.data_root or os.environ.get(DATA_ROOT_ENV, "")
        if not root:
            raise ConfigError(f"no dataset root: set data_root or ${DATA_ROOT_ENV}")
        return root

    def model_config(self) -> dict:
        """Config echo stored in checkpoints and checked before prediction."""
        return {
            "network": self.network.to_dict(),
            "grid": dataclasses.asdict(self.grid),
            "class_names": list(self.class_names),
        }


_SECTIONS = {"grid": GridSpec, "network": NetworkConfig, "loss": LossWeights}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_like(text: str, default: Any):
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if default and isinstance(default[0], tuple):
            return tuple(tuple(int(v) for v in p.lower().split("x")) for p in parts)
        if default and isinstance(default[0], str):
            return tuple(parts)
        if default and isinstance(default[0], int) and not isinstance(default[0], bool):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    raise ValueError(f"cannot parse {text!r}")


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def read_config_file(path) -> Dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read(), str(path))


def build_config(values: Mapping[str, str], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Apply string ``values`` (dotted keys) on top of ``base`` with type coercion."""
    base = base or TrainConfig()
    top: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {k: {} for k in _SECTIONS}
    for key, value in values.items():
        section, _, name = key.partition(".")
        try:
            if name:
                if section not in _SECTIONS:
                    raise ConfigError(f"unknown config section {section!r}")
                current = getattr(base, section)
                if name not in {f.name for f in dataclasses.fields(current)}:
                    raise ConfigError(f"unknown config key {key!r}")
                nested[section][name] = _parse_like(value, getattr(current, name))
            else:
                if key not in {f.name for f in dataclasses.fields(TrainConfig)} or key in _SECTIONS:
                    raise ConfigError(f"unknown config key {key!r}")
                top[key] = _parse_like(value, getattr(base, key))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    for section, changes in nested.items():
        if changes:
            try:
                top[section] = dataclasses.replace(getattr(base, section), **changes)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {section} settings: {exc}") from None
    return dataclasses.replace(base, **top)


def config_to_text(cfg: TrainConfig) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            if v and isinstance(v[0], tuple):
                return ", ".join("x".join(str(i) for i in t) for t in v)
            return ", ".join(str(i) for i in v)
        return str(v)

    lines = []
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            lines += [f"{f.name}.{g.name} = {fmt(getattr(val, g.name))}" for g in dataclasses.fields(val)]
        else:
            lines.append(f"{f.name} = {fmt(val)}")
    return "\n".join(lines) + "\n"
