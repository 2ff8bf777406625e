"""Segmentation model zoo: ResNet34-backed 2-D nets, a MiT-B0 U-Net, a 3-D U-Net.

All 2-D models accept (N, 3, H, W) for any H, W: inputs are reflect-padded
up to the backbone's stride multiple and logits cropped back, so the
162-wide imaging window works without external padding. Two output planes,
background then foreground. The 3-D model takes (N, 3, X, Y, Z) and emits a
single foreground logit plane.

Encoders come from torchvision (ResNet34) and, for the transformer variant,
from the Segformer implementation in `transformers` (imported lazily, built
offline from config). Pretrained weights are opt-in and never required.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models import resnet34
from torchvision.models.segmentation.deeplabv3 import ASPP, DeepLabHead


def build_model(architecture: str, num_classes: int, pretrained: bool = False) -> nn.Module:
    builders = {
        "unet_resnet34": lambda: UNetResNet34(num_classes, pretrained),
        "deeplabv3": lambda: DeepLabV3ResNet34(num_classes, pretrained),
        "deeplabv3plus": lambda: DeepLabV3PlusResNet34(num_classes, pretrained),
        "unet_mitb0": lambda: UNetMitB0(num_classes),
        "unet3d": lambda: UNet3D(in_channels=3, num_classes=num_classes),
    }
    if architecture not in builders:
        raise ValueError(f"unknown architecture {architecture!r}")
    return builders[architecture]()


def _pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    h, w = x.shape[-2:]
    pad_h = (multiple - h % multiple) % multiple
    pad_w = (multiple - w % multiple) % multiple
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x, pad_h, pad_w


def _crop(x: torch.Tensor, pad_h: int, pad_w: int) -> torch.Tensor:
    if pad_h:
        x = x[..., : x.shape[-2] - pad_h, :]
    if pad_w:
        x = x[..., :, : x.shape[-1] - pad_w]
    return x


class _ResNet34Encoder(nn.Module):
    """ResNet34 feature pyramid at strides 2/4/8/16/32 (64/64/128/256/512)."""

    channels = (64, 64, 128, 256, 512)

    def __init__(self, pretrained: bool = False):
        super().__init__()
        weights = "IMAGENET1K_V1" if pretrained else None
        backbone = resnet34(weights=weights)
        self.stem = nn.Sequential(backbone.conv1, backbone.bn1, backbone.relu)
        self.pool = backbone.maxpool
        self.layer1 = backbone.layer1
        self.layer2 = backbone.layer2
        self.layer3 = backbone.layer3
        self.layer4 = backbone.layer4

    def forward(self, x):
        f0 = self.stem(x)                 # /2
        f1 = self.layer1(self.pool(f0))   # /4
        f2 = self.layer2(f1)              # /8
        f3 = self.layer3(f2)              # /16
        f4 = self.layer4(f3)              # /32
        return f0, f1, f2, f3, f4


class _DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x, skip=None):
        x = F.interpolate(x, scale_factor=2.0, mode="nearest")
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.conv(x)


class UNetResNet34(nn.Module):
    def __init__(self, num_classes: int = 2, pretrained: bool = False):
        super().__init__()
        self.encoder = _ResNet34Encoder(pretrained)
        ch = self.encoder.channels
        self.decode4 = _DecoderBlock(ch[4], ch[3], 256)
        self.decode3 = _DecoderBlock(256, ch[2], 128)
        self.decode2 = _DecoderBlock(128, ch[1], 64)
        self.decode1 = _DecoderBlock(64, ch[0], 32)
        self.decode0 = _DecoderBlock(32, 0, 16)
        self.head = nn.Conv2d(16, num_classes, 1)

    def forward(self, x):
        x, pad_h, pad_w = _pad_to_multiple(x, 32)
        f0, f1, f2, f3, f4 = self.encoder(x)
        d = self.decode4(f4, f3)
        d = self.decode3(d, f2)
        d = self.decode2(d, f1)
        d = self.decode1(d, f0)
        d = self.decode0(d)
        return _crop(self.head(d), pad_h, pad_w)


class DeepLabV3ResNet34(nn.Module):
    """DeepLabV3 head on the ResNet34 backbone; output stride 32 (BasicBlock
    supports no dilation), logits upsampled back to input size."""

    def __init__(self, num_classes: int = 2, pretrained: bool = False):
        super().__init__()
        self.encoder = _ResNet34Encoder(pretrained)
        self.head = DeepLabHead(512, num_classes)

    def forward(self, x):
        size = x.shape[-2:]
        x, _, _ = _pad_to_multiple(x, 32)
        f4 = self.encoder(x)[4]
        out = self.head(f4)
        return F.interpolate(out, size=size, mode="bilinear", align_corners=False)


class DeepLabV3PlusResNet34(nn.Module):
    """DeepLabV3+ decoder: ASPP over the deep features plus a low-level skip."""

    def __init__(self, num_classes: int = 2, pretrained: bool = False):
        super().__init__()
        self.encoder = _ResNet34Encoder(pretrained)
        self.aspp = ASPP(512, [6, 12, 18], out_channels=256)
        self.low_proj = nn.Sequential(
            nn.Conv2d(64, 48, 1, bias=False), nn.BatchNorm2d(48), nn.ReLU(inplace=True)
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(256 + 48, 256, 3, padding=1, bias=False),
            nn.BatchNorm2d(256),
            nn.ReLU(inplace=True),
            nn.Conv2d(256, num_classes, 1),
        )

    def forward(self, x):
        size = x.shape[-2:]
        x, _, _ = _pad_to_multiple(x, 32)
        feats = self.encoder(x)
        low = self.low_proj(feats[1])  # /4
        deep = self.aspp(feats[4])     # /32
        deep = F.interpolate(deep, size=low.shape[-2:], mode="bilinear", align_corners=False)
        out = self.fuse(torch.cat([deep, low], dim=1))
        return F.interpolate(out, size=size, mode="bilinear", align_corners=False)


class UNetMitB0(nn.Module):
    """U-Net decoder over a MiT-B0 (Segformer) transformer encoder.

    The encoder is constructed offline from its configuration (random init);
    `transformers` is imported lazily so the dependency stays optional.
    """

    def __init__(self, num_classes: int = 2):
        super().__init__()
        try:
            from transformers import SegformerConfig, SegformerModel
        except ImportError as exc:
            raise ImportError(
                "unet_mitb0 needs the 'transformers' package (pip install "
                "dixontrain[transformer])"
            ) from exc
        config = SegformerConfig(
            num_channels=3,
            hidden_sizes=[32, 64, 160, 256],
            depths=[2, 2, 2, 2],
            num_attention_heads=[1, 2, 5, 8],
            sr_ratios=[8, 4, 2, 1],
        )
        self.encoder = SegformerModel(config)
        self.decode3 = _DecoderBlock(256, 160, 128)
        self.decode2 = _DecoderBlock(128, 64, 64)
        self.decode1 = _DecoderBlock(64, 32, 32)
        self.head = nn.Conv2d(32, num_classes, 1)

    def forward(self, x):
        size = x.shape[-2:]
        x, _, _ = _pad_to_multiple(x, 32)
        hidden = self.encoder(x, output_hidden_states=True).hidden_states  # /4 /8 /16 /32
        d = self.decode3(hidden[3], hidden[2])
        d = self.decode2(d, hidden[1])
        d = self.decode1(d, hidden[0])
        out = self.head(d)  # /4
        return F.interpolate(out, size=size, mode="bilinear", align_corners=False)


class _DoubleConv3D(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm3d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv3d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm3d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.conv(x)


class UNet3D(nn.Module):
    """Three-level volumetric U-Net emitting one foreground logit plane."""

    def __init__(self, in_channels: int = 3, num_classes: int = 1, base: int = 16):
        super().__init__()
        self.enc1 = _DoubleConv3D(in_channels, base)
        self.enc2 = _DoubleConv3D(base, base * 2)
        self.enc3 = _DoubleConv3D(base * 2, base * 4)
        self.pool = nn.MaxPool3d(2)
        self.up2 = nn.ConvTranspose3d(base * 4, base * 2, 2, stride=2)
        self.dec2 = _DoubleConv3D(base * 4, base * 2)
        self.up1 = nn.ConvTranspose3d(base * 2, base, 2, stride=2)
        self.dec1 = _DoubleConv3D(base * 2, base)
        self.head = nn.Conv3d(base, num_classes, 1)

    def forward(self, x):
        sizes = x.shape[-3:]
        pads = [(4 - s % 4) % 4 for s in sizes]
        if any(pads):
            x = F.pad(x, (0, pads[2], 0, pads[1], 0, pads[0]), mode="replicate")
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up2(e3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        out = self.head(d1)
        return out[..., : sizes[0], : sizes[1], : sizes[2]]
