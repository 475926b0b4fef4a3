from __future__ import annotations
import dataclasses
from collections import OrderedDict

import torch.nn as nn

from ..errors import ValidationError
from .core import EncoderConfig, R2UNet, Res2NetBlock, Encoder, PyramidCompression, Decoder, compress_pyramid
from .e2net import E2Net, StageTwoOutput, DCFF, DCFFRefine, FusionMode

MODEL_KINDS = ('r2unet', 'e2net')


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    '''Everything needed to rebuild a network from a checkpoint.'''
    kind: str = 'r2unet'
    encoder: EncoderConfig = EncoderConfig()
    out_channels: int = 1
    edge_branch: bool = True
    dcff: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f'unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}')
        if self.out_channels < 1:
            raise ValidationError('out_channels must be >= 1')

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d['encoder'] = EncoderConfig.from_dict(d.get('encoder', {}))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f'unknown model fields: {sorted(unknown)}')
        return cls(**d)


def build_model(cfg: ModelConfig) -> nn.Module:
    if cfg.kind == 'r2unet':
        return R2UNet(cfg.encoder, cfg.out_channels)
    return E2Net(cfg.encoder, cfg.out_channels, edge_branch=cfg.edge_branch, dcff=cfg.dcff and cfg.edge_branch)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def parameter_summary(model: nn.Module, depth=1) -> OrderedDict:
    '''Trainable parameter counts per sub-module, ``depth`` levels deep.'''
    summary = OrderedDict()
    for name, module in model.named_modules():
        if name and name.count('.') < depth:
            summary[name] = count_parameters(module)
    summary['total'] = count_parameters(model)
    return summary
