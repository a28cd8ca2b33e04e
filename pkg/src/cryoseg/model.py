"""Triple U-Net with progressive dense feature aggregation (PDFA).

Three encoder-decoders share the input resolution:

* the RGB branch sees the normalised colour patch,
* the H branch sees the hematoxylin map and is supervised with contours,
* the segmentation branch has no pixel input of its own; at every level it
  fuses the RGB and H features (and its own carried features) through PDFA
  blocks.

PDFA blocks replace concatenation at every fusion point, including the skip
merges inside the RGB and H decoders.
"""
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ValidationError

__all__ = [
    "NetworkConfig",
    "BranchOutputs",
    "PDFABlock",
    "UNetBranch",
    "SegmentationBranch",
    "TripleUNet",
    "pdfa_blocks",
]


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 4
    base_channels: int = 32
    growth_rate: int = 32
    input_size: int = 256
    seg_raw_input: bool = False

    def __post_init__(self):
        if self.depth < 2:
            raise ValidationError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 1 or self.growth_rate < 1:
            raise ValidationError("base_channels and growth_rate must be >= 1")
        if self.input_size % (2 ** self.depth):
            raise ValidationError(
                f"input_size {self.input_size} is not divisible by 2**depth = {2 ** self.depth}"
            )

    def width(self, level):
        return self.base_channels * 2 ** level

    def as_dict(self):
        return asdict(self)


@dataclass
class BranchOutputs:
    rgb_prob: torch.Tensor
    contour_prob: torch.Tensor
    seg_prob: torch.Tensor


def conv_bn_relu(cin, cout, kernel_size=3):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size, padding=kernel_size // 2),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DoubleConv(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(conv_bn_relu(cin, cout), conv_bn_relu(cout, cout))


class PDFABlock(nn.Module):
    """Densely connected block that injects one new feature map per layer.

    Layer ``k`` sees the concatenation of every feature injected so far
    (``features[0..k]``) and the outputs of layers ``0..k-1``; it emits
    ``growth_rate`` channels. The block output is the concatenation of all
    injected features and all layer outputs, so
    ``out_channels = sum(in_channels) + layer_count * growth_rate``.
    Layers past the last injected feature only see accumulated state.
    """

    def __init__(self, in_channels, growth_rate, layer_count):
        super().__init__()
        in_channels = list(in_channels)
        if layer_count < 1 or layer_count < len(in_channels) or not in_channels:
            raise ValidationError(
                f"layer_count={layer_count} cannot inject {len(in_channels)} feature maps"
            )
        self.in_channels_list = in_channels
        self.in_channels = sum(in_channels)
        self.growth_rate = growth_rate
        self.layer_count = layer_count
        self.out_channels = self.in_channels + layer_count * growth_rate
        layers = []
        seen = 0
        for k in range(layer_count):
            if k < len(in_channels):
                seen += in_channels[k]
            layers.append(conv_bn_relu(seen + k * growth_rate, growth_rate))
        self.layers = nn.ModuleList(layers)

    def forward(self, *features):
        if len(features) != len(self.in_channels_list):
            raise ValidationError(
                f"expected {len(self.in_channels_list)} feature maps, got {len(features)}"
            )
        size = features[0].shape[-2:]
        for f, c in zip(features, self.in_channels_list):
            if f.shape[-2:] != size:
                raise ValidationError(
                    f"spatial mismatch in PDFA inputs: {tuple(f.shape[-2:])} vs {tuple(size)}"
                )
            if f.shape[1] != c:
                raise ValidationError(f"expected {c} channels, got {f.shape[1]}")
        injected = []
        produced = []
        for k, layer in enumerate(self.layers):
            if k < len(features):
                injected.append(features[k])
            produced.append(layer(torch.cat(injected + produced, dim=1)))
        return torch.cat(list(features) + produced, dim=1)


class _Fuse(nn.Module):
    """PDFA followed by a 1x1 transition back to a fixed width."""

    def __init__(self, in_channels, growth_rate, layer_count, cout):
        super().__init__()
        self.pdfa = PDFABlock(in_channels, growth_rate, layer_count)
        self.transition = conv_bn_relu(self.pdfa.out_channels, cout, kernel_size=1)

    def forward(self, *features):
        return self.transition(self.pdfa(*features))


def _check_input(x, cfg, channels):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ValidationError(f"expected (N, {channels}, H, W) input, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    step = 2 ** cfg.depth
    if h % step or w % step:
        raise ValidationError(f"input size {h}x{w} is not divisible by {step}")


class UNetBranch(nn.Module):
    """Single-input encoder-decoder whose decoder skips merge through PDFA."""

    def __init__(self, in_channels, cfg):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        d = cfg.depth
        self.encoders = nn.ModuleList(
            [DoubleConv(in_channels if l == 0 else cfg.width(l - 1), cfg.width(l)) for l in range(d)]
        )
        self.bottleneck = DoubleConv(cfg.width(d - 1), cfg.width(d))
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(cfg.width(l + 1), cfg.width(l), 2, stride=2) for l in range(d)]
        )
        self.fuses = nn.ModuleList(
            [_Fuse([cfg.width(l)] * 2, cfg.growth_rate, 4, cfg.width(l)) for l in range(d)]
        )
        self.head = nn.Conv2d(cfg.width(0), 1, 1)

    def forward(self, x):
        """Return ``(encoder_features, decoder_features, logits)``.

        ``encoder_features[l]`` is the level-``l`` encoder output (the last
        entry is the bottleneck); ``decoder_features[l]`` is the fused decoder
        output at level ``l``.
        """
        _check_input(x, self.cfg, self.in_channels)
        enc = []
        for l, block in enumerate(self.encoders):
            x = block(x if l == 0 else F.max_pool2d(x, 2))
            enc.append(x)
        x = self.bottleneck(F.max_pool2d(x, 2))
        enc.append(x)
        dec = [None] * self.cfg.depth
        for l in reversed(range(self.cfg.depth)):
            x = self.fuses[l](self.ups[l](x), enc[l])
            dec[l] = x
        return enc, dec, self.head(x)


class SegmentationBranch(nn.Module):
    """Encoder-decoder that only consumes the other branches' features."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d, g = cfg.depth, cfg.growth_rate
        self.stem = DoubleConv(3, cfg.width(0)) if cfg.seg_raw_input else None
        enc = []
        for l in range(d + 1):
            carried = [cfg.width(l - 1)] if l > 0 else ([cfg.width(0)] if cfg.seg_raw_input else [])
            enc.append(_Fuse(carried + [cfg.width(l)] * 2, g, 3, cfg.width(l)))
        self.encoders = nn.ModuleList(enc)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(cfg.width(l + 1), cfg.width(l), 2, stride=2) for l in range(d)]
        )
        self.decoders = nn.ModuleList(
            [_Fuse([cfg.width(l)] * 4, g, 4, cfg.width(l)) for l in range(d)]
        )
        self.head = nn.Conv2d(cfg.width(0), 1, 1)

    def forward(self, rgb_feats, h_feats, raw=None):
        rgb_enc, rgb_dec = rgb_feats
        h_enc, h_dec = h_feats
        enc = []
        x = None
        for l, fuse in enumerate(self.encoders):
            if l == 0:
                carried = [self.stem(raw)] if self.stem is not None else []
            else:
                carried = [F.max_pool2d(x, 2)]
            x = fuse(*carried, rgb_enc[l], h_enc[l])
            enc.append(x)
        for l in reversed(range(self.cfg.depth)):
            x = self.decoders[l](self.ups[l](x), enc[l], rgb_dec[l], h_dec[l])
        return self.head(x)


class TripleUNet(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or NetworkConfig()
        self.rgb = UNetBranch(3, self.cfg)
        self.h = UNetBranch(1, self.cfg)
        self.seg = SegmentationBranch(self.cfg)

    def forward_logits(self, patch, hematoxylin):
        if hematoxylin.ndim == 3:
            hematoxylin = hematoxylin.unsqueeze(1)
        if patch.shape[0] != hematoxylin.shape[0] or patch.shape[-2:] != hematoxylin.shape[-2:]:
            raise ValidationError(
                f"patch {tuple(patch.shape)} and hematoxylin {tuple(hematoxylin.shape)} do not align"
            )
        rgb_enc, rgb_dec, rgb_logits = self.rgb(patch)
        h_enc, h_dec, h_logits = self.h(hematoxylin)
        seg_logits = self.seg((rgb_enc, rgb_dec), (h_enc, h_dec), raw=patch)
        return rgb_logits, h_logits, seg_logits

    def forward(self, patch, hematoxylin):
        """Patch ``(N, 3, H, W)`` in [0, 1] and hematoxylin ``(N, 1, H, W)``.

        Returns a :class:`BranchOutputs` of ``(N, 1, H, W)`` probability maps.
        """
        rgb, h, seg = self.forward_logits(patch, hematoxylin)
        return BranchOutputs(torch.sigmoid(rgb), torch.sigmoid(h), torch.sigmoid(seg))


def pdfa_blocks(module):
    return [m for m in module.modules() if isinstance(m, PDFABlock)]
