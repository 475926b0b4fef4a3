'''Res2Net-style encoder, 32-channel pyramid compression and the UNet-style
decoder. Chained together they form R2UNet.

A feature pyramid is a list of five tensors, index 0 holding level 1
(stride 2) and index 4 holding level 5 (stride 32).
'''
from __future__ import annotations
import dataclasses

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import COMPRESSED_CHANNELS, PYRAMID_LEVELS, SIZE_MULTIPLE
from ..errors import ValidationError

FeaturePyramid = list  # list[torch.Tensor], level 1 first


@dataclasses.dataclass(frozen=True)
class EncoderConfig:
    base_width: int = 16
    scale_s: int = 4
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    input_channels: int = 1

    def __post_init__(self):
        if self.base_width <= 0 or self.scale_s <= 0:
            raise ValidationError('base_width and scale_s must be positive')
        if self.base_width % self.scale_s:
            raise ValidationError(
                f'base_width ({self.base_width}) must be divisible by scale_s ({self.scale_s})')
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 0:
            raise ValidationError(f'blocks_per_stage needs 4 non-negative counts, got {self.blocks_per_stage}')

    @property
    def channels(self):
        '''Channels C_i of the raw pyramid levels 1..5.'''
        return [self.base_width * 2 ** i for i in range(PYRAMID_LEVELS)]

    @classmethod
    def full_scale(cls):
        return cls(base_width=256, scale_s=4, blocks_per_stage=(3, 4, 6, 3))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if 'blocks_per_stage' in d:
            d['blocks_per_stage'] = tuple(d['blocks_per_stage'])
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f'unknown encoder fields: {sorted(unknown)}')
        return cls(**d)


def check_input_size(x: torch.Tensor, multiple=SIZE_MULTIPLE):
    if x.ndim != 4:
        raise ValidationError(f'expected an (N, C, H, W) batch, got shape {tuple(x.shape)}')
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise ValidationError(f'input size {h}x{w} is not divisible by {multiple}')


def upsample_to(x, ref):
    return F.interpolate(x, size=ref.shape[-2:], mode='bilinear', align_corners=False)


class ConvBNReLU(nn.Sequential):
    def __init__(self, c_in, c_out, kernel_size=3, stride=1, relu=True):
        layers = [
            nn.Conv2d(c_in, c_out, kernel_size, stride=stride, padding=kernel_size // 2, bias=False),
            nn.BatchNorm2d(c_out),
        ]
        if relu:
            layers.append(nn.ReLU(inplace=True))
        super().__init__(*layers)


class Res2NetBlock(nn.Module):
    '''Shape-preserving Res2Net bottleneck.

    The entry 1x1 conv expands to ``scale * width`` channels which are split
    into ``scale`` groups. Group 1 passes through, group j computes
    ``y_j = conv3x3(x_j + y_{j-1})``. With ``scale=1`` the single group goes
    through one 3x3 conv (a plain bottleneck).
    '''
    def __init__(self, channels, scale=4, width=None):
        super().__init__()
        if width is None:
            if channels % scale:
                raise ValidationError(f'channels ({channels}) not divisible by scale ({scale})')
            width = channels // scale
        self.scale = scale
        self.width = width
        self.entry = ConvBNReLU(channels, width * scale, 1)
        self.convs = nn.ModuleList(ConvBNReLU(width, width, 3) for _ in range(max(scale - 1, 1)))
        self.exit = ConvBNReLU(width * scale, channels, 1, relu=False)

    @staticmethod
    def num_parameters(channels, scale=4, width=None):
        '''Closed-form parameter count (conv weights + batch-norm affine).'''
        width = channels // scale if width is None else width
        n_convs = max(scale - 1, 1)
        entry = channels * width * scale + 2 * width * scale
        paths = n_convs * (9 * width * width + 2 * width)
        exit = width * scale * channels + 2 * channels
        return entry + paths + exit

    def forward(self, x):
        groups = torch.split(self.entry(x), self.width, dim=1)
        if self.scale == 1:
            ys = [self.convs[0](groups[0])]
        else:
            ys = [groups[0]]
            for conv, xj in zip(self.convs, groups[1:]):
                ys.append(conv(xj + ys[-1]))
        return F.relu(self.exit(torch.cat(ys, dim=1)) + x)


def res2net_block(x, scale_s=4, width=None):
    '''Run a freshly initialized block on ``x`` (shape check helper).'''
    return Res2NetBlock(x.shape[1], scale_s, width)(x)


class Encoder(nn.Module):
    '''Stem (stride 2) plus four stages, each entered by a stride-2 transition.

    The stage-2 transition is the standard max-pool followed by a 1x1
    projection; later stages use a strided 3x3 conv.
    '''
    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.stem = ConvBNReLU(cfg.input_channels, ch[0], 7, stride=2)
        stages = []
        for i, n_blocks in enumerate(cfg.blocks_per_stage):
            c_in, c_out = ch[i], ch[i + 1]
            if i == 0:
                entry = nn.Sequential(nn.MaxPool2d(3, stride=2, padding=1), ConvBNReLU(c_in, c_out, 1))
            else:
                entry = ConvBNReLU(c_in, c_out, 3, stride=2)
            blocks = [Res2NetBlock(c_out, cfg.scale_s) for _ in range(n_blocks)]
            stages.append(nn.Sequential(entry, *blocks))
        self.stages = nn.ModuleList(stages)

    def forward(self, x) -> FeaturePyramid:
        check_input_size(x)
        levels = [self.stem(x)]
        for stage in self.stages:
            levels.append(stage(levels[-1]))
        return levels


def encoder_forward(image, cfg: EncoderConfig = EncoderConfig(), encoder=None):
    '''Raw pyramid of a single (1, H, W) image or an (N, 1, H, W) batch.'''
    x = image[None] if image.ndim == 3 else image
    return (encoder or Encoder(cfg))(x)


class PyramidCompression(nn.Module):
    '''1x1 then 3x3 conv per level, bringing every level to 32 channels.'''
    def __init__(self, channels, out_channels=COMPRESSED_CHANNELS):
        super().__init__()
        self.levels = nn.ModuleList(
            nn.Sequential(ConvBNReLU(c, out_channels, 1), ConvBNReLU(out_channels, out_channels, 3))
            for c in channels)

    def forward(self, raw: FeaturePyramid) -> FeaturePyramid:
        if len(raw) != len(self.levels):
            raise ValidationError(f'expected {len(self.levels)} pyramid levels, got {len(raw)}')
        return [m(f) for m, f in zip(self.levels, raw)]


def compress_pyramid(raw: FeaturePyramid, compression=None) -> FeaturePyramid:
    return (compression or PyramidCompression([f.shape[1] for f in raw]))(raw)


class Decoder(nn.Module):
    '''UNet-style decoder with 32 kernels in every conv.

    ``forward`` returns the logits at input resolution and the last
    32-channel feature map (stride 2) before the 1x1 head.
    '''
    def __init__(self, out_channels=1, channels=COMPRESSED_CHANNELS):
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.Sequential(ConvBNReLU(2 * channels, channels, 3), ConvBNReLU(channels, channels, 3))
            for _ in range(PYRAMID_LEVELS - 1))
        self.head = nn.Conv2d(channels, out_channels, 1)

    def features(self, p: FeaturePyramid):
        x = p[-1]
        # coarse to fine: levels 4, 3, 2, 1
        for block, skip in zip(self.blocks, reversed(p[:-1])):
            x = block(torch.cat([upsample_to(x, skip), skip], dim=1))
        return x

    def forward(self, p: FeaturePyramid):
        feat = self.features(p)
        logits = self.head(feat)
        logits = F.interpolate(logits, scale_factor=2, mode='bilinear', align_corners=False)
        return logits, feat


def decoder_forward(p: FeaturePyramid, out_channels=1, decoder=None):
    return (decoder or Decoder(out_channels))(p)[0]


class R2UNet(nn.Module):
    def __init__(self, encoder: EncoderConfig = EncoderConfig(), out_channels=1):
        super().__init__()
        self.out_channels = out_channels
        self.encoder = Encoder(encoder)
        self.compress = PyramidCompression(encoder.channels)
        self.decoder = Decoder(out_channels)

    def features(self, x) -> FeaturePyramid:
        return self.compress(self.encoder(x))

    def decode(self, p: FeaturePyramid):
        return self.decoder(p)

    def forward(self, x):
        '''Pre-sigmoid logits of shape (N, out_channels, H, W).'''
        return self.decode(self.features(x))[0]
