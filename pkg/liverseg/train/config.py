'''Training configuration and config-file loading.

A config file is a JSON object with optional ``train``, ``encoder`` and
``phantom`` sections. Flags passed as overrides win over file values::

    {"train": {"batch_size": 8, "max_epochs": 40},
     "encoder": {"base_width": 16, "blocks_per_stage": [1, 1, 1, 1]}}
'''
from __future__ import annotations
import dataclasses

from ..config import INFER_PAD, SIZE_MULTIPLE
from ..errors import ValidationError
from ..nets import EncoderConfig
from ..phantom import PhantomSpec
from ..util import read_json


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    batch_size: int = 8
    plateau_patience: int = 3
    min_delta: float = 1e-4
    decay_factor: float = 10.0
    max_decays: int = 2
    max_epochs: int = 60
    stage1_crop: int = 96
    stage2_size: int = 96
    pad_range: tuple[int, int] = (10, 60)
    infer_pad: int = INFER_PAD
    liver_fraction: float = 0.5
    epoch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValidationError('lr0 must be > 0')
        if self.batch_size < 1 or self.plateau_patience < 1 or self.max_epochs < 1:
            raise ValidationError('batch_size, plateau_patience and max_epochs must be >= 1')
        if self.decay_factor <= 1 or self.max_decays < 0:
            raise ValidationError('decay_factor must be > 1 and max_decays >= 0')
        for name in ('stage1_crop', 'stage2_size'):
            v = getattr(self, name)
            if v <= 0 or v % SIZE_MULTIPLE:
                raise ValidationError(f'{name} ({v}) must be a positive multiple of {SIZE_MULTIPLE}')
        lo, hi = self.pad_range
        if lo < 0 or hi < lo:
            raise ValidationError(f'invalid pad_range {self.pad_range}')
        if not 0 <= self.liver_fraction <= 1:
            raise ValidationError('liver_fraction must be in [0, 1]')

    @classmethod
    def from_dict(cls, d):
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f'unknown train fields: {sorted(unknown)}')
        return cls(**d)


SECTIONS = {'train': TrainConfig, 'encoder': EncoderConfig, 'phantom': PhantomSpec}


def load_config(path=None, **overrides) -> dict:
    '''Resolve ``{"train", "encoder", "phantom"}`` configs.

    ``overrides`` are flat ``TrainConfig`` fields, or dotted
    ``section.field`` names; ``None`` values are ignored.
    '''
    data = read_json(path) if path else {}
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ValidationError(f'unknown config sections: {sorted(unknown)}')
    sections = {name: dict(data.get(name) or {}) for name in SECTIONS}
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, field = key.rpartition('.')
        sections[section or 'train'][field] = value
    return {name: SECTIONS[name].from_dict(values) for name, values in sections.items()}
