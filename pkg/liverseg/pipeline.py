'''Volume inference: stage 1 per slice, liver gate, crop, stage 2, uncrop,
and stacking back into 3D liver/tumor masks.'''
from __future__ import annotations
import dataclasses
from pathlib import Path

import numpy as np
import torch
import tqdm
from PIL import Image

from .config import (
    PRESENCE_THRESHOLD, PRESENCE_MIN_PIXELS, INFER_PAD, SIZE_MULTIPLE, BACKGROUND_VALUE)
from .errors import ValidationError, InferenceError
from .ingest import CtVolume, LabelVolume, SliceSample, masks_to_labels
from .nets import StageTwoOutput
from .supervision import mask_edge
from .crops import CropSpec, crop_liver_region, uncrop, liver_present, largest_component, pad_to_multiple

import logging
log = logging.getLogger(__name__)


@dataclasses.dataclass
class SegmentationResult:
    liver: np.ndarray
    tumor: np.ndarray
    per_slice_cropspecs: dict[int, CropSpec | None]
    case_id: str

    def to_labels(self) -> LabelVolume:
        return LabelVolume(masks_to_labels(self.liver, self.tumor), self.case_id)


def _check_finite(t, z):
    if not torch.isfinite(t).all():
        raise InferenceError(z)


@torch.no_grad()
def stage1_probability(model, images: np.ndarray, first_index=0) -> np.ndarray:
    '''Liver probability for a (N, H, W) stack of normalized slices.

    Slices are padded with the background value to a multiple of 32 and the
    result is cropped back.
    '''
    n, h, w = images.shape
    x = torch.from_numpy(np.stack([pad_to_multiple(im, SIZE_MULTIPLE, BACKGROUND_VALUE) for im in images]))
    out = model(x[:, None].float())
    prob = out.s2[:, :1] if isinstance(out, StageTwoOutput) else torch.sigmoid(out)
    for i in range(n):
        _check_finite(prob[i], first_index + i)
    return prob[:, 0, :h, :w].numpy()


@torch.no_grad()
def stage2_probability(model, image: np.ndarray, slice_index=0) -> np.ndarray:
    out = model(torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None, None])
    if not isinstance(out, StageTwoOutput):
        raise ValidationError('stage-2 model must produce (s1, e, s2) outputs')
    if out.s2.shape[1] != 2:
        raise ValidationError(f'stage-2 model must produce 2 channels (liver, tumor), got {out.s2.shape[1]}')
    _check_finite(out.s2, slice_index)
    return out.s2[0].numpy()


def segment_volume(v: CtVolume, stage1, stage2, threshold=0.5, stage2_size=96, pad=INFER_PAD,
                   presence_threshold=PRESENCE_THRESHOLD, presence_min_pixels=PRESENCE_MIN_PIXELS,
                   keep_largest=False, batch_size=8, progress=False) -> SegmentationResult:
    '''Segment a normalized CT volume slice by slice.

    Arguments:
        v: normalized volume.
        stage1, stage2: models in eval mode.
        threshold: probability threshold of the final ``s2`` maps.
        stage2_size: side of the square stage-2 input.
        pad: pixels added around the box of the largest stage-1 liver component.
        keep_largest: keep only the largest 3D liver component.
    '''
    if not v.normalized:
        raise ValidationError(f'{v.case_id}: segment_volume needs a normalized volume')
    if stage2_size % SIZE_MULTIPLE:
        raise ValidationError(f'stage2_size {stage2_size} is not a multiple of {SIZE_MULTIPLE}')
    stage1.eval()
    stage2.eval()
    depth = v.shape[0]
    liver = np.zeros(v.shape, dtype=bool)
    tumor = np.zeros(v.shape, dtype=bool)
    specs: dict[int, CropSpec | None] = {}

    zs = range(0, depth, batch_size)
    for z0 in (tqdm.tqdm(zs, desc=v.case_id, leave=False) if progress else zs):
        probs = stage1_probability(stage1, v.voxels[z0:z0 + batch_size], z0)
        for i, prob in enumerate(probs):
            z = z0 + i
            if not liver_present(prob, presence_threshold, presence_min_pixels):
                specs[z] = None
                continue
            empty = np.zeros(prob.shape, dtype=bool)
            sample = SliceSample(v.voxels[z], empty, empty, v.case_id, z)
            liver_box = largest_component(prob >= presence_threshold)
            cropped, spec = crop_liver_region(sample, liver_box, pad, (stage2_size, stage2_size))
            s2 = stage2_probability(stage2, cropped.image, z)
            masks = uncrop(s2 >= threshold, spec)
            liver[z], tumor[z] = masks[0], masks[1]
            specs[z] = spec

    if keep_largest and liver.any():
        liver = largest_component(liver)
    tumor &= liver
    return SegmentationResult(liver, tumor, specs, v.case_id)


# ---------------------------------------------------------------------------- #
#                                    Overlays                                  #
# ---------------------------------------------------------------------------- #

LIVER_COLOR = (0, 255, 0)
TUMOR_COLOR = (255, 0, 0)


def overlay_slice(image, liver, tumor) -> Image.Image:
    '''Grayscale slice in [-1, 1] with liver/tumor contours drawn in color.'''
    gray = np.round((np.clip(image, -1, 1) + 1) * 127.5).astype(np.uint8)
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    rgb[mask_edge(liver)] = LIVER_COLOR
    rgb[mask_edge(tumor)] = TUMOR_COLOR
    return Image.fromarray(rgb)


def render_overlay(v: CtVolume, labels: LabelVolume, out_dir, stride=1, only_labeled=True) -> list[Path]:
    '''Write one contour-overlay PNG per slice for human review.'''
    if labels.shape != v.shape:
        raise ValidationError(f'label shape {labels.shape} does not match image shape {v.shape}')
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    liver, tumor = labels.liver, labels.tumor
    paths = []
    for z in range(0, v.shape[0], stride):
        if only_labeled and not liver[z].any():
            continue
        path = out_dir / f'{v.case_id}_z{z:04d}.png'
        overlay_slice(v.voxels[z], liver[z], tumor[z]).save(path)
        paths.append(path)
    log.info('wrote %d overlays to %s', len(paths), out_dir)
    return paths
