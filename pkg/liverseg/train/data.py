'''Slice datasets for both stages.

Random choices of sample ``i`` in epoch ``e`` come from an RNG seeded with
``(seed, e, i)``, so batches do not depend on the number of loader workers.
'''
from __future__ import annotations

import numpy as np
import torch
import tqdm
from torch.utils.data import Dataset, default_collate

from ..config import BACKGROUND_VALUE, SIZE_MULTIPLE, INFER_PAD
from ..errors import ValidationError
from ..ingest import load_case, extract_slices, SliceSample
from ..phantom import DatasetManifest
from ..supervision import edge_targets, EdgeKind
from ..util import rng_for
from ..crops import random_crop, crop_liver_region, pad_to_multiple

import logging
log = logging.getLogger(__name__)


def load_samples(manifest: DatasetManifest, case_ids) -> list[SliceSample]:
    samples = []
    for case_id in tqdm.tqdm(case_ids, desc='loading cases', leave=False):
        ct, labels = load_case(*manifest.paths(case_id))
        samples.extend(extract_slices(ct, labels))
    log.info('loaded %d slices from %d cases', len(samples), len(case_ids))
    return samples


def _tensor(a):
    return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))


class SliceDataset(Dataset):
    def __init__(self, samples, seed=0, train=True, epoch_size=None):
        if not samples:
            raise ValidationError('dataset is empty')
        self.samples = list(samples)
        self.seed = seed
        self.train = train
        self.epoch_size = epoch_size
        self.epoch = 0

    def set_epoch(self, epoch):
        self.epoch = epoch

    def rng(self, index):
        return rng_for(self.seed, self.epoch if self.train else 0, index)

    def __len__(self):
        return self.epoch_size or len(self.samples)


class Stage1Dataset(SliceDataset):
    '''Random square crops of whole slices, half of them from liver slices.

    Validation items are whole slices padded to a multiple of 32. With
    ``edge_kind`` the liver edge target is returned too.
    '''
    def __init__(self, samples, crop=96, liver_fraction=0.5, edge_kind=None, **kw):
        super().__init__(samples, **kw)
        self.crop = crop
        self.liver_fraction = liver_fraction
        self.edge_kind = EdgeKind(edge_kind) if edge_kind else None
        self.liver_idx = [i for i, s in enumerate(self.samples) if s.has_liver]
        self.other_idx = [i for i, s in enumerate(self.samples) if not s.has_liver]

    def _pick(self, rng):
        pools = (self.liver_idx, self.other_idx)
        pool = pools[0] if rng.uniform() < self.liver_fraction else pools[1]
        pool = pool or pools[0] or pools[1]
        return self.samples[pool[int(rng.integers(len(pool)))]]

    def __getitem__(self, index):
        if self.train:
            rng = self.rng(index)
            s = self._pick(rng)
            image, mask = random_crop(s.image, s.liver_mask, self.crop, rng)
        else:
            s = self.samples[index]
            image = pad_to_multiple(s.image, SIZE_MULTIPLE, BACKGROUND_VALUE)
            mask = pad_to_multiple(s.liver_mask, SIZE_MULTIPLE, 0)
        item = {'image': _tensor(image[None]), 'mask': _tensor(mask[None])}
        if self.edge_kind is not None:
            item['edge'] = _tensor(edge_targets(mask, np.zeros_like(mask), self.edge_kind)[:1])
        return item


class Stage2Dataset(SliceDataset):
    '''Liver-box crops around the ground-truth liver, resized to a square.

    Training pads are drawn uniformly from ``pad_range``; validation uses the
    fixed inference pad.
    '''
    def __init__(self, samples, size=96, pad_range=(10, 60), edge_kind=EdgeKind.dist, infer_pad=INFER_PAD, **kw):
        super().__init__([s for s in samples if s.has_liver], **kw)
        self.size = (size, size)
        self.pad_range = pad_range
        self.infer_pad = infer_pad
        self.edge_kind = EdgeKind(edge_kind) if edge_kind else None

    def __getitem__(self, index):
        if self.train:
            rng = self.rng(index)
            s = self.samples[int(rng.integers(len(self.samples)))] if self.epoch_size else self.samples[index]
            pad = int(rng.integers(self.pad_range[0], self.pad_range[1] + 1))
        else:
            s, pad = self.samples[index], self.infer_pad
        c, _ = crop_liver_region(s, None, pad, self.size)
        item = {
            'image': _tensor(c.image[None]),
            'mask': _tensor(np.stack([c.liver_mask, c.tumor_mask])),
        }
        if self.edge_kind is not None:
            item['edge'] = _tensor(edge_targets(c.liver_mask, c.tumor_mask, self.edge_kind))
        return item


def sample_stage1_batch(dataset: Stage1Dataset, cfg, step=0):
    '''The ``step``-th training batch of stage-1 crops, collated like the loader does.'''
    start = step * cfg.batch_size
    return default_collate([dataset[(start + i) % len(dataset)] for i in range(cfg.batch_size)])
