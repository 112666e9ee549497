"""MonoNext network: backbone, ConvNext-style blocks and five task heads.

Feature maps are NCHW inside the model; :meth:`MonoNext.forward` returns the
grid tensor channels-last, ``(B, S, S, 1 + C + 7)``, in the layout of
:mod:`mononext.grid_codec`.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

BACKBONES = ("mobilenet_v2_like", "tiny_backbone")
TASKS = ("conf", "class", "pos", "dim", "yaw")
CHECKPOINT_FORMAT = "mononext-checkpoint/1"


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 480
    backbone: str = "mobilenet_v2_like"
    block_schedule: Tuple[Tuple[int, int], ...] = ((512, 3), (256, 4), (256, 3), (128, 3))
    head_block: Tuple[int, int] = (256, 1)
    num_classes: int = 1
    depthwise_k7: bool = True
    tiny_channels: Tuple[int, ...] = (16, 32, 64, 96, 128)

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; choose from {BACKBONES}")
        if self.input_size % 32:
            raise ValueError("input_size must be a multiple of the backbone stride 32")
        object.__setattr__(self, "block_schedule", tuple(tuple(map(int, b)) for b in self.block_schedule))
        object.__setattr__(self, "head_block", tuple(map(int, self.head_block)))
        object.__setattr__(self, "tiny_channels", tuple(map(int, self.tiny_channels)))
        if self.block_schedule[-1][0] != 128:
            raise ValueError("the last block must have 128 filters")
        if self.backbone == "tiny_backbone" and len(self.tiny_channels) != 5:
            raise ValueError("tiny_backbone needs five stride-2 stages to reach stride 32")

    @property
    def grid_size(self) -> int:
        return self.input_size // 32

    def head_widths(self) -> dict:
        return {"conf": 1, "class": self.num_classes, "pos": 3, "dim": 3, "yaw": 1}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{k: (tuple(map(tuple, v)) if k == "block_schedule" else v) for k, v in d.items()})


class LayerNorm2d(nn.LayerNorm):
    """LayerNorm over channels at each spatial position of an NCHW tensor."""

    def forward(self, x):
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, self.normalized_shape, self.weight, self.bias, self.eps)
        return x.permute(0, 3, 1, 2)


class ConvNextSubBlock(nn.Module):
    def __init__(self, channels: int, depthwise: bool = True):
        super().__init__()
        self.channels = channels
        self.conv7 = nn.Conv2d(channels, channels, 7, padding=3, groups=channels if depthwise else 1)
        self.norm = LayerNorm2d(channels, eps=1e-6)
        self.expand = nn.Conv2d(channels, 4 * channels, 1)
        self.act = nn.GELU()
        self.project = nn.Conv2d(4 * channels, channels, 1)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"sub-block expects {self.channels} channels, got {x.shape[1]}")
        return x + self.project(self.act(self.expand(self.norm(self.conv7(x)))))


class ConvNextBlock(nn.Module):
    def __init__(self, in_channels: int, filters: int, kernel: int, depthwise: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, filters, kernel, stride=1, padding="same")
        self.sub = ConvNextSubBlock(filters, depthwise)
        self.norm = LayerNorm2d(filters, eps=1e-6)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"block expects {self.in_channels} channels, got {x.shape[1]}")
        return self.norm(self.sub(self.conv(x)))


class TinyBackbone(nn.Sequential):
    def __init__(self, channels: Sequence[int]):
        layers = []
        prev = 3
        for ch in channels:
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
            prev = ch
        super().__init__(*layers)
        self.out_channels = prev
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)


def _mobilenet_v2():
    from torchvision.models import mobilenet_v2

    features = mobilenet_v2(weights=None).features
    features.out_channels = 1280
    return features


class Head(nn.Module):
    def __init__(self, in_channels: int, block: Tuple[int, int], width: int, task: str,
                 depthwise: bool = True):
        super().__init__()
        self.task = task
        self.block = ConvNextBlock(in_channels, block[0], block[1], depthwise)
        self.out = nn.Conv2d(block[0], width, 1)

    def forward(self, x):
        logits = self.out(self.block(x))
        if self.task == "class":
            return torch.softmax(logits, dim=1)
        return torch.sigmoid(logits)


class MonoNext(nn.Module):
    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone == "tiny_backbone":
            self.backbone = TinyBackbone(cfg.tiny_channels)
        else:
            self.backbone = _mobilenet_v2()
        prev = self.backbone.out_channels
        blocks = []
        for filters, kernel in cfg.block_schedule:
            blocks.append(ConvNextBlock(prev, filters, kernel, cfg.depthwise_k7))
            prev = filters
        self.blocks = nn.Sequential(*blocks)
        self.heads = nn.ModuleDict(
            {t: Head(prev, cfg.head_block, w, t, cfg.depthwise_k7) for t, w in cfg.head_widths().items()}
        )
        self._init_weights()

    def _init_weights(self):
        for part in (self.blocks, self.heads):
            for m in part.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.trunc_normal_(m.weight, std=0.02)
                    nn.init.zeros_(m.bias)
        for m in self.modules():
            if isinstance(m, ConvNextSubBlock):
                nn.init.zeros_(m.project.weight)
                nn.init.zeros_(m.project.bias)
        nn.init.constant_(self.heads["conf"].out.bias, math.log(0.01 / 0.99))

    def _check_input(self, images):
        if images.dim() == 3:
            images = images.unsqueeze(0)
        n = self.cfg.input_size
        if images.dim() != 4 or tuple(images.shape[1:]) != (3, n, n):
            raise ValueError(f"expected images shaped (B, 3, {n}, {n}), got {tuple(images.shape)}")
        return images

    def backbone_forward(self, images):
        images = self._check_input(images)
        return self.backbone((images - 0.5) / 0.25)

    def extract_features(self, images):
        return self.blocks(self.backbone_forward(images))

    def head_forward(self, features, task: str):
        if task not in self.heads:
            raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
        return self.heads[task](features)

    def forward(self, images):
        feats = self.extract_features(images)
        out = torch.cat([self.heads[t](feats) for t in TASKS], dim=1)
        return out.permute(0, 2, 3, 1)


def count_parameters(cfg: NetworkConfig) -> int:
    return sum(p.numel() for p in MonoNext(cfg).parameters() if p.requires_grad)


def images_to_tensor(images, size: int) -> torch.Tensor:
    """Stack HxWx3 uint8/float images into a (B, 3, size, size) float tensor in [0, 1]."""
    batch = []
    for img in images:
        t = torch.as_tensor(np.ascontiguousarray(img))
        if t.dtype == torch.uint8:
            t = t.float() / 255.0
        t = t.float().permute(2, 0, 1).unsqueeze(0)
        if t.shape[-2:] != (size, size):
            t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
        batch.append(t)
    return torch.cat(batch, dim=0).clamp_(0.0, 1.0)


# ---------------------------------------------------------------- checkpoints


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, model: MonoNext, extra_config: dict = None, meta: dict = None):
    """Write an ``.npz`` archive: format tag, JSON config echo, one array per tensor."""
    config = {"network": model.cfg.to_dict(), **(extra_config or {})}
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    arrays["__config__"] = np.array(json.dumps(config, sort_keys=True, default=list))
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True, default=str))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["__format__"])
        if fmt != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: unsupported checkpoint format {fmt!r}")
        config = json.loads(str(data["__config__"]))
        meta = json.loads(str(data["__meta__"]))
        state = {k[len("param/"):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith("param/")}
    return config, state, meta


def load_checkpoint(path, expected_config: dict = None):
    """Rebuild the model; refuse when ``expected_config`` differs from the saved echo."""
    config, state, meta = read_checkpoint(path)
    if expected_config is not None:
        want = json.loads(json.dumps(expected_config, sort_keys=True, default=list))
        if want != config:
            raise ConfigError(
                f"checkpoint config {config_digest(config)} does not match "
                f"current config {config_digest(want)}"
            )
    model = MonoNext(NetworkConfig.from_dict(config["network"]))
    model.load_state_dict(state)
    model.eval()
    return model, config, meta
