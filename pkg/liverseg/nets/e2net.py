'''Edge enhanced second-stage network.

Two R2UNet branches (segmentation and edge) whose compressed pyramids are
cross-refined by DCFF, plus a fusion head over the two branches' last
decoder features. Flags switch off DCFF (plain two-branch fusion) or the
edge branch altogether (a single R2UNet).
'''
from __future__ import annotations
import enum
import dataclasses

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import COMPRESSED_CHANNELS, PYRAMID_LEVELS
from ..errors import ValidationError
from .core import EncoderConfig, R2UNet, ConvBNReLU, FeaturePyramid, check_input_size, upsample_to


class FusionMode(str, enum.Enum):
    concat = 'concat'
    multiply = 'multiply'


@dataclasses.dataclass
class StageTwoOutput:
    '''Post-sigmoid outputs; ``s1`` and ``e`` are ``None`` without an edge branch.'''
    s1: torch.Tensor | None
    e: torch.Tensor | None
    s2: torch.Tensor

    def heads(self):
        return tuple(k for k in ('s1', 'e', 's2') if getattr(self, k) is not None)


def _combine(mode, a, b):
    return torch.cat([a, b], dim=1) if mode is FusionMode.concat else a * b


class DCFFRefine(nn.Module):
    '''Refine level ``k`` of pyramid A with levels ``k..5`` of pyramid B.

    For each level i >= k, A^k is average-pooled to level i and combined with
    B^i (concat + conv, or multiply + conv). The pair features are then
    merged from level 5 up to level k like the decoder (upsample, combine,
    two 3x3 convs) and the result is added to A^k.
    '''
    def __init__(self, k, mode=FusionMode.concat, channels=COMPRESSED_CHANNELS):
        super().__init__()
        if not 1 <= k <= PYRAMID_LEVELS:
            raise ValidationError(f'DCFF level must be in 1..{PYRAMID_LEVELS}, got {k}')
        self.k = k
        self.mode = mode = FusionMode(mode)
        c_in = 2 * channels if mode is FusionMode.concat else channels
        self.pairs = nn.ModuleList(ConvBNReLU(c_in, channels, 3) for _ in range(k, PYRAMID_LEVELS + 1))
        self.chain = nn.ModuleList(
            nn.Sequential(ConvBNReLU(c_in, channels, 3), ConvBNReLU(channels, channels, 3))
            for _ in range(k, PYRAMID_LEVELS))

    def pair_features(self, a_k, f_b: FeaturePyramid):
        '''Pair outputs for levels k..5 (finest first).'''
        out = []
        for conv, i in zip(self.pairs, range(self.k, PYRAMID_LEVELS + 1)):
            stride = 2 ** (i - self.k)
            a = F.avg_pool2d(a_k, stride) if stride > 1 else a_k
            out.append(conv(_combine(self.mode, a, f_b[i - 1])))
        return out

    def forward(self, f_a: FeaturePyramid, f_b: FeaturePyramid):
        a_k = f_a[self.k - 1]
        pairs = self.pair_features(a_k, f_b)
        x = pairs[-1]
        # chain[j] merges into pair level k + j; walk from level 4 down to k
        for block, pair in zip(reversed(self.chain), reversed(pairs[:-1])):
            x = block(_combine(self.mode, upsample_to(x, pair), pair))
        return x + a_k


class DCFF(nn.Module):
    '''Refines every level of one pyramid against the other.'''
    def __init__(self, mode=FusionMode.concat, channels=COMPRESSED_CHANNELS):
        super().__init__()
        self.mode = FusionMode(mode)
        self.levels = nn.ModuleList(DCFFRefine(k, mode, channels) for k in range(1, PYRAMID_LEVELS + 1))

    def forward(self, f_a: FeaturePyramid, f_b: FeaturePyramid) -> FeaturePyramid:
        if len(f_a) != PYRAMID_LEVELS or len(f_b) != PYRAMID_LEVELS:
            raise ValidationError('DCFF needs two 5-level pyramids')
        for a, b in zip(f_a, f_b):
            if a.shape != b.shape:
                raise ValidationError(f'pyramid levels not aligned: {tuple(a.shape)} vs {tuple(b.shape)}')
        return [m(f_a, f_b) for m in self.levels]


def dcff_refine(f_a: FeaturePyramid, f_b: FeaturePyramid, k, mode=FusionMode.concat, refine=None):
    '''Refined level-k feature of ``f_a`` (shape of ``f_a[k-1]``).'''
    refine = refine or DCFFRefine(k, mode, f_a[0].shape[1])
    if refine.k != k:
        raise ValidationError(f'refiner is for level {refine.k}, not {k}')
    return refine(f_a, f_b)


class E2Net(nn.Module):
    def __init__(self, encoder: EncoderConfig = EncoderConfig(), out_channels=2,
                 edge_branch=True, dcff=True, channels=COMPRESSED_CHANNELS):
        super().__init__()
        if dcff and not edge_branch:
            raise ValidationError('DCFF needs the edge branch')
        self.out_channels = out_channels
        self.edge_branch = edge_branch
        self.use_dcff = dcff
        self.seg = R2UNet(encoder, out_channels)
        if edge_branch:
            self.edge = R2UNet(encoder, out_channels)
            self.fusion = nn.Sequential(ConvBNReLU(2 * channels, channels, 3), ConvBNReLU(channels, channels, 3))
            self.fusion_head = nn.Conv2d(channels, out_channels, 1)
        if dcff:
            self.dcff_seg = DCFF(FusionMode.concat, channels)
            self.dcff_edge = DCFF(FusionMode.multiply, channels)

    @property
    def heads(self):
        return ('s1', 'e', 's2') if self.edge_branch else ('s2',)

    def forward(self, x) -> StageTwoOutput:
        check_input_size(x)
        if not self.edge_branch:
            return StageTwoOutput(None, None, torch.sigmoid(self.seg(x)))

        f1 = self.seg.features(x)
        f2 = self.edge.features(x)
        if self.use_dcff:
            f1, f2 = self.dcff_seg(f1, f2), self.dcff_edge(f2, f1)
        s1, h1 = self.seg.decode(f1)
        e, h2 = self.edge.decode(f2)
        s2 = self.fusion_head(self.fusion(torch.cat([h1, h2], dim=1)))
        s2 = F.interpolate(s2, size=x.shape[-2:], mode='bilinear', align_corners=False)
        return StageTwoOutput(torch.sigmoid(s1), torch.sigmoid(e), torch.sigmoid(s2))


def e2net_forward(image, model: E2Net) -> StageTwoOutput:
    x = image[None] if image.ndim == 3 else image
    return model(x)
