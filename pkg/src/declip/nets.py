"""Residual hourglass generator, DCGAN-style discriminator, VGG16 features."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import vgg16

GEN_CHANNELS = (32, 64, 64, 128, 128, 256, 256)
GEN_DOWNSAMPLE = (1, 3, 5)  # zero-based encoder layers with stride 2
DISC_CHANNELS = (32, 64, 64, 128, 128, 256, 256, 512, 512)

# VGG16 `features` indices of the ReLU following each conv layer.
VGG16_RELU = {
    "conv1_1": 1, "conv1_2": 3,
    "conv2_1": 6, "conv2_2": 8,
    "conv3_1": 11, "conv3_2": 13, "conv3_3": 15,
    "conv4_1": 18, "conv4_2": 20, "conv4_3": 22,
    "conv5_1": 25, "conv5_2": 27, "conv5_3": 29,
}
DEFAULT_VGG_LAYERS = ("conv5_1", "conv5_2", "conv5_3")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def count_conv_layers(module: nn.Module) -> int:
    return sum(isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)) for m in module.modules())


def _init_hidden(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu", generator=gen)
            nn.init.zeros_(m.bias)


class _Block(nn.Module):
    """3x3 conv (or stride-2 transposed conv) -> batch norm -> Elu."""

    def __init__(self, cin, cout, stride=1, transposed=False, batch_norm=True):
        super().__init__()
        if transposed:
            self.conv = nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=1, output_padding=1)
        else:
            self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm = nn.BatchNorm2d(cout) if batch_norm else nn.Identity()

    def forward(self, x):
        return F.elu(self.norm(self.conv(x)))


class Generator(nn.Module):
    """Hourglass encoder-decoder predicting a residual added to its input.

    The decoder mirrors the encoder: every stride-2 encoder conv is matched
    by a stride-2 transposed conv, and each decoder activation is summed with
    the encoder activation of the same resolution.  A final 3x3 conv head
    (no norm, no activation) emits the residual; it is zero-initialized so a
    fresh generator is the identity map.

    In training mode ``restored`` is returned unclamped; in eval mode it is
    clamped to [0, 1].
    """

    def __init__(self, channels=GEN_CHANNELS, downsample=GEN_DOWNSAMPLE,
                 batch_norm: bool = True, seed: int = 0):
        super().__init__()
        self.channels = tuple(channels)
        self.downsample = tuple(sorted(downsample))
        self.batch_norm = batch_norm
        n = len(self.channels)
        cin = 3
        self.encoder = nn.ModuleList()
        for i, c in enumerate(self.channels):
            self.encoder.append(_Block(cin, c, stride=2 if i in self.downsample else 1,
                                       batch_norm=batch_norm))
            cin = c
        self.decoder = nn.ModuleList()
        for i in range(n - 1, 0, -1):
            self.decoder.append(_Block(self.channels[i], self.channels[i - 1],
                                       transposed=i in self.downsample, batch_norm=batch_norm))
        self.head = nn.Conv2d(self.channels[0], 3, 3, padding=1)
        gen = torch.Generator().manual_seed(seed)
        _init_hidden(self, gen)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def factor(self) -> int:
        return 2 ** len(self.downsample)

    def arch(self) -> dict:
        return {"net": "generator", "channels": list(self.channels),
                "downsample": list(self.downsample), "batch_norm": self.batch_norm}

    def forward(self, clipped: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h, w = clipped.shape[-2:]
        if h % self.factor or w % self.factor:
            raise ValueError(f"spatial dims {h}x{w} not divisible by {self.factor}; "
                             "use infer_any_size")
        skips = []
        x = clipped
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        # skips[-1] is x itself; decoder step k adds skips[n-2-k]
        for k, block in enumerate(self.decoder):
            x = block(x) + skips[len(skips) - 2 - k]
        residual = self.head(x)
        restored = clipped + residual
        if not self.training:
            restored = restored.clamp(0.0, 1.0)
        return residual, restored


class Discriminator(nn.Module):
    """Strided-conv classifier emitting one unbounded logit per image."""

    def __init__(self, input_size: int = 224, channels=DISC_CHANNELS,
                 batch_norm: bool = True, seed: int = 0):
        super().__init__()
        self.input_size = input_size
        self.channels = tuple(channels)
        self.batch_norm = batch_norm
        layers = []
        cin, size = 3, input_size
        for i, c in enumerate(self.channels):
            stride = 2 if i % 2 == 1 else 1  # even layers in 1-based counting
            layers.append(_Block(cin, c, stride=stride, batch_norm=batch_norm and i > 0))
            cin = c
            if stride == 2:
                size = (size - 1) // 2 + 1
        self.features = nn.Sequential(*layers)
        self.project = nn.Linear(cin * size * size, 1)
        gen = torch.Generator().manual_seed(seed)
        _init_hidden(self, gen)
        # initial logits stay near zero whatever the input size
        fan_in = self.project.in_features
        nn.init.normal_(self.project.weight, std=0.1 / fan_in ** 0.5, generator=gen)
        nn.init.zeros_(self.project.bias)

    def arch(self) -> dict:
        return {"net": "discriminator", "input_size": self.input_size,
                "channels": list(self.channels), "batch_norm": self.batch_norm}

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if tuple(img.shape[-2:]) != (self.input_size, self.input_size):
            raise ValueError(f"discriminator expects {self.input_size}x{self.input_size} "
                             f"inputs, got {tuple(img.shape[-2:])}")
        return self.project(self.features(img).flatten(1)).squeeze(1)


class FeatureExtractor(nn.Module):
    """Frozen VGG16 trunk returning post-activation maps of selected layers.

    Inputs are images in [0, 1]; ImageNet normalization is applied here.
    Weights come from a local file only, either a full torchvision VGG16
    state dict or one holding just the ``features`` trunk.
    """

    def __init__(self, weights_path=None, layers=DEFAULT_VGG_LAYERS,
                 state_dict: dict | None = None):
        super().__init__()
        if not layers:
            raise ValueError("at least one feature layer is required")
        unknown = [name for name in layers if name not in VGG16_RELU]
        if unknown:
            raise ValueError(f"unknown VGG16 layers {unknown}")
        self.layers = tuple(layers)
        self.indices = tuple(VGG16_RELU[name] for name in self.layers)
        trunk = vgg16(weights=None).features
        if state_dict is None:
            if weights_path is None:
                raise ValueError("VGG16 weights path required")
            path = Path(weights_path)
            if not path.is_file():
                raise FileNotFoundError(f"VGG16 weights not found: {path}")
            state_dict = torch.load(path, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state_dict):
            state_dict = {k[len("features."):]: v for k, v in state_dict.items()
                          if k.startswith("features.")}
        trunk.load_state_dict(state_dict)
        self.trunk = trunk[:max(self.indices) + 1]
        for p in self.trunk.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.trunk.eval()

    def train(self, mode: bool = True):
        # frozen: never leave eval mode
        return super().train(False)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        x = (img - self.mean.to(img.dtype)) / self.std.to(img.dtype)
        wanted = set(self.indices)
        out = []
        for i, layer in enumerate(self.trunk):
            x = layer(x)
            if i in wanted:
                out.append(x)
        return out


def vgg_features(extractor: FeatureExtractor, img: torch.Tensor) -> list[torch.Tensor]:
    return extractor(img)


def infer_any_size(gen: Generator, img: torch.Tensor) -> torch.Tensor:
    """Run the generator on any H, W >= 8 by reflect-padding to a multiple of its factor.

    Accepts a CHW or NCHW tensor and returns the same layout, clamped to [0, 1].
    """
    single = img.dim() == 3
    x = img[None] if single else img
    h, w = x.shape[-2:]
    if min(h, w) < 8:
        raise ValueError(f"image too small: {h}x{w}")
    f = gen.factor
    ph, pw = -h % f, -w % f
    if ph or pw:
        # reflect padding needs pad < dim; pad repeatedly for tiny inputs
        while ph or pw:
            sh, sw = min(ph, x.shape[-2] - 1), min(pw, x.shape[-1] - 1)
            x = F.pad(x, (0, sw, 0, sh), mode="reflect")
            ph, pw = ph - sh, pw - sw
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            _, restored = gen(x)
    finally:
        gen.train(was_training)
    restored = restored[..., :h, :w].clamp(0.0, 1.0)
    return restored[0] if single else restored


def param_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(t.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def arch_fingerprint(*descriptions: dict) -> str:
    blob = json.dumps(descriptions, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
