'''Crop policies shared by training and inference.

Stage 1 sees random square crops of whole slices. Stage 2 sees the liver
bounding box, padded on every side, resized to a fixed square.
'''
from __future__ import annotations
import dataclasses

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage as ndi

from .config import BACKGROUND_VALUE, INFER_PAD, PRESENCE_THRESHOLD, PRESENCE_MIN_PIXELS
from .errors import NoLiverError, ValidationError
from .ingest import SliceSample


@dataclasses.dataclass(frozen=True)
class CropSpec:
    bbox: tuple[int, int, int, int]  # y0, x0, y1, x1 (half-open)
    pad: int
    original_size: tuple[int, int]
    resized_to: tuple[int, int]

    @property
    def height(self):
        return self.bbox[2] - self.bbox[0]

    @property
    def width(self):
        return self.bbox[3] - self.bbox[1]


# ---------------------------------------------------------------------------- #
#                                    Stage 1                                   #
# ---------------------------------------------------------------------------- #

def pad_to(arr, size, value):
    '''Pad a 2D array at the bottom/right so both sides are at least ``size``.'''
    h, w = arr.shape
    ph, pw = max(size[0] - h, 0), max(size[1] - w, 0)
    if not ph and not pw:
        return arr
    return np.pad(arr, ((0, ph), (0, pw)), constant_values=value)


def pad_to_multiple(arr, multiple, value=BACKGROUND_VALUE):
    h, w = arr.shape[-2:]
    return pad_to(arr, (-(-h // multiple) * multiple, -(-w // multiple) * multiple), value)


def random_crop(image, mask, crop, rng: np.random.Generator):
    '''Uniformly placed ``crop x crop`` window; small slices are padded first.'''
    image = pad_to(image, (crop, crop), BACKGROUND_VALUE)
    mask = pad_to(mask, (crop, crop), 0)
    h, w = image.shape
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    return image[y0:y0 + crop, x0:x0 + crop], mask[y0:y0 + crop, x0:x0 + crop]


# ---------------------------------------------------------------------------- #
#                                    Stage 2                                   #
# ---------------------------------------------------------------------------- #

def liver_bbox(mask, pad):
    '''Tight half-open box of the mask, grown by ``pad`` and clipped to the image.'''
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise NoLiverError('liver source is empty')
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    h, w = mask.shape
    return (max(int(rows[0]) - pad, 0), max(int(cols[0]) - pad, 0),
            min(int(rows[-1]) + 1 + pad, h), min(int(cols[-1]) + 1 + pad, w))


def resize(arr, size, mode='bilinear'):
    '''Resize a 2D (or channel-first 3D) array with torch interpolation.'''
    t = torch.as_tensor(np.asarray(arr, dtype=np.float32))
    squeeze = t.ndim == 2
    t = t[None, None] if squeeze else t[None]
    kw = {'align_corners': False} if mode == 'bilinear' else {}
    out = F.interpolate(t, size=tuple(size), mode=mode, **kw)[0]
    return (out[0] if squeeze else out).numpy()


def crop_liver_region(sample: SliceSample, liver_source=None, pad=INFER_PAD, size=(256, 256)):
    '''Crop a slice around the liver and resize it to ``size``.

    Arguments:
        sample: the slice to crop.
        liver_source: the mask defining the box, ``None`` for the ground
            truth liver mask of the sample.
        pad: pixels added on each side of the tight box.
        size: output (h, w).

    Returns:
        ``(cropped SliceSample, CropSpec)``.
    '''
    source = sample.liver_mask if liver_source is None else liver_source
    if np.shape(source) != sample.image.shape:
        raise ValidationError(f'liver source shape {np.shape(source)} does not match slice {sample.image.shape}')
    y0, x0, y1, x1 = bbox = liver_bbox(source, pad)
    size = tuple(size)
    spec = CropSpec(bbox, int(pad), tuple(sample.image.shape), size)
    crop = lambda a: a[y0:y1, x0:x1]
    cropped = SliceSample(
        image=resize(crop(sample.image), size, 'bilinear'),
        liver_mask=resize(crop(sample.liver_mask), size, 'nearest') > 0.5,
        tumor_mask=resize(crop(sample.tumor_mask), size, 'nearest') > 0.5,
        case_id=sample.case_id,
        slice_index=sample.slice_index,
    )
    return cropped, spec


def uncrop(pred, spec: CropSpec, mode='nearest'):
    '''Map a (C, h, w) or (h, w) crop-space map back into the full slice.

    Pixels outside the box are 0.
    '''
    pred = np.asarray(pred)
    squeeze = pred.ndim == 2
    p = pred[None] if squeeze else pred
    back = resize(p.astype(np.float32), (spec.height, spec.width), mode)
    out = np.zeros((p.shape[0], *spec.original_size), dtype=np.float32)
    y0, x0, y1, x1 = spec.bbox
    out[:, y0:y1, x0:x1] = back
    out = out.astype(pred.dtype) if pred.dtype == bool else out
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------- #
#                                Presence gating                               #
# ---------------------------------------------------------------------------- #

def largest_component(mask):
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndi.label(mask)
    if n == 0:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def liver_present(prob, threshold=PRESENCE_THRESHOLD, min_pixels=PRESENCE_MIN_PIXELS):
    '''Whether the largest thresholded component has at least ``min_pixels``.'''
    mask = np.asarray(prob) >= threshold
    if not mask.any():
        return False
    return int(largest_component(mask).sum()) >= min_pixels
