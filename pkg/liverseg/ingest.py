'''CT and label volume loading, HU windowing and slice decomposition.

Volumes are held in (z, y, x) order. NIfTI stores (x, y, z), so arrays are
transposed on read and write.
'''
from __future__ import annotations
import os
import zlib
import dataclasses
from pathlib import Path

import numpy as np
import nibabel as nib
from nibabel.filebasedimages import ImageFileError

from .config import HU_MIN, HU_MAX, CT_SUFFIX, SEG_SUFFIX
from .errors import ValidationError, VolumeReadError
from .util import strip_nifti_ext

import logging
log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class CtVolume:
    voxels: np.ndarray
    spacing: tuple[float, float, float]
    case_id: str
    normalized: bool = False
    affine: np.ndarray | None = dataclasses.field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise ValidationError(f'{self.case_id}: expected a 3D volume, got shape {self.voxels.shape}')
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise ValidationError(f'{self.case_id}: spacing must be 3 positive values, got {self.spacing}')
        if not np.isfinite(self.voxels).all():
            raise ValidationError(f'{self.case_id}: volume contains non-finite voxels')

    @property
    def shape(self):
        return self.voxels.shape


@dataclasses.dataclass(frozen=True)
class LabelVolume:
    '''Integer labels: 0 background, 1 liver, 2 tumor.'''
    labels: np.ndarray
    case_id: str

    def __post_init__(self):
        if self.labels.ndim != 3:
            raise ValidationError(f'{self.case_id}: expected 3D labels, got shape {self.labels.shape}')
        bad = np.setdiff1d(np.unique(self.labels), (0, 1, 2))
        if bad.size:
            raise ValidationError(f'{self.case_id}: label values outside {{0,1,2}}: {bad.tolist()}')

    @property
    def shape(self):
        return self.labels.shape

    @property
    def liver(self):
        return self.labels >= 1

    @property
    def tumor(self):
        return self.labels == 2

    @classmethod
    def from_masks(cls, liver, tumor, case_id):
        return cls(masks_to_labels(liver, tumor), case_id)


@dataclasses.dataclass(frozen=True)
class SliceSample:
    image: np.ndarray
    liver_mask: np.ndarray
    tumor_mask: np.ndarray
    case_id: str
    slice_index: int

    @property
    def has_liver(self):
        return bool(self.liver_mask.any())


# ---------------------------------------------------------------------------- #
#                                 Label helpers                                #
# ---------------------------------------------------------------------------- #

def enforce_nesting(liver, tumor):
    '''OR the tumor into the liver so that tumor implies liver.'''
    liver = np.asarray(liver, dtype=bool)
    tumor = np.asarray(tumor, dtype=bool)
    return liver | tumor, tumor


def label_to_masks(labels):
    labels = np.asarray(labels)
    return labels >= 1, labels == 2


def masks_to_labels(liver, tumor):
    liver, tumor = enforce_nesting(liver, tumor)
    labels = liver.astype(np.uint8)
    labels[tumor] = 2
    return labels


# ---------------------------------------------------------------------------- #
#                                    Reading                                   #
# ---------------------------------------------------------------------------- #

def case_id_from_path(path) -> str:
    name = strip_nifti_ext(os.path.basename(str(path)))
    for suffix in (CT_SUFFIX, SEG_SUFFIX):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    if name.startswith('volume-'):
        return name.replace('volume-', 'case-', 1)
    if name.startswith('segmentation-'):
        return name.replace('segmentation-', 'case-', 1)
    return name


def find_label_path(path) -> Path | None:
    '''Locate the sibling label file of a CT volume, if any.

    ``case_0001_ct.nii.gz`` pairs with ``case_0001_seg.nii.gz`` and LiTS
    ``volume-7.nii`` pairs with ``segmentation-7.nii``.
    '''
    path = Path(path)
    stem = strip_nifti_ext(path.name)
    ext = path.name[len(stem):]
    candidates = []
    if stem.endswith(CT_SUFFIX):
        candidates.append(stem[:-len(CT_SUFFIX)] + SEG_SUFFIX)
    if stem.startswith('volume-'):
        candidates.append(stem.replace('volume-', 'segmentation-', 1))
    for c in candidates:
        for e in (ext, '.nii.gz', '.nii'):
            p = path.with_name(c + e)
            if p.is_file():
                return p
    return None


def _read_nifti(path):
    '''Read a whole NIfTI array in (z, y, x) order plus its spacing and affine.'''
    path = Path(path)
    try:
        img = nib.load(str(path))
        # force a full read so truncated files fail here, not later
        data = np.asanyarray(img.dataobj)
        zooms = tuple(float(z) for z in img.header.get_zooms()[:3])
    except FileNotFoundError:
        raise
    except (OSError, EOFError, zlib.error, ValueError, ImageFileError) as e:
        raise VolumeReadError(f'cannot read NIfTI volume {path}: {e}') from e
    if data.ndim != 3:
        raise ValidationError(f'{path}: expected a 3D volume, got shape {data.shape}')
    return np.ascontiguousarray(data.transpose(2, 1, 0)), zooms[::-1], img.affine


def load_ct(path, case_id=None) -> CtVolume:
    data, spacing, affine = _read_nifti(path)
    return CtVolume(
        data.astype(np.float32), spacing,
        case_id or case_id_from_path(path), affine=affine)


def load_labels(path, case_id=None) -> LabelVolume:
    data, _, _ = _read_nifti(path)
    rounded = np.rint(data)
    if not np.array_equal(rounded, data):
        raise ValidationError(f'{path}: label volume contains non-integer values')
    rounded = rounded.astype(np.int16)
    bad = np.setdiff1d(np.unique(rounded), (0, 1, 2))
    if bad.size:
        raise ValidationError(f'{path}: label values outside {{0,1,2}}: {bad.tolist()}')
    return LabelVolume(masks_to_labels(*label_to_masks(rounded)), case_id or case_id_from_path(path))


def load_volume(path, label_path=None) -> tuple[CtVolume, LabelVolume | None]:
    '''Load a raw-HU CT volume and, when present, its label volume.

    Arguments:
        path (str): ``.nii`` or ``.nii.gz`` CT volume.
        label_path (str): explicit label file; defaults to the sibling found
            by :func:`find_label_path`.
    '''
    ct = load_ct(path)
    label_path = label_path or find_label_path(path)
    if label_path is None:
        return ct, None
    labels = load_labels(label_path, case_id=ct.case_id)
    if labels.shape != ct.shape:
        raise ValidationError(
            f'{ct.case_id}: label shape {labels.shape} does not match image shape {ct.shape}')
    log.debug('loaded %s %s spacing=%s', ct.case_id, ct.shape, ct.spacing)
    return ct, labels


# ---------------------------------------------------------------------------- #
#                                    Writing                                   #
# ---------------------------------------------------------------------------- #

def _affine(spacing, affine=None):
    if affine is not None:
        return affine
    return np.diag([*spacing[::-1], 1.0])


def save_ct(vol: CtVolume, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = nib.Nifti1Image(vol.voxels.transpose(2, 1, 0).astype(np.float32), _affine(vol.spacing, vol.affine))
    img.header.set_zooms(vol.spacing[::-1])
    nib.save(img, str(path))
    return path


def save_labels(labels: LabelVolume, path, spacing=(1.0, 1.0, 1.0), affine=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = nib.Nifti1Image(labels.labels.transpose(2, 1, 0).astype(np.uint8), _affine(spacing, affine))
    img.set_data_dtype(np.uint8)
    img.header.set_zooms(tuple(spacing)[::-1])
    nib.save(img, str(path))
    return path


# ---------------------------------------------------------------------------- #
#                                 Preprocessing                                #
# ---------------------------------------------------------------------------- #

def window_hu(x, lower=HU_MIN, upper=HU_MAX):
    '''Clamp HU to ``[lower, upper]`` and map linearly onto ``[-1, 1]``.'''
    half = (upper - lower) / 2
    return ((np.clip(x, lower, upper) - lower) / half - 1).astype(np.float32)


def window_and_normalize(v: CtVolume) -> CtVolume:
    '''Window a raw-HU volume into [-1, 1]. No-op on normalized volumes.'''
    if v.normalized:
        return v
    return dataclasses.replace(v, voxels=window_hu(v.voxels), normalized=True)


def extract_slices(v: CtVolume, l: LabelVolume | None = None) -> list[SliceSample]:
    '''Split a normalized volume into one sample per z index (ascending).'''
    if not v.normalized:
        raise ValidationError(f'{v.case_id}: extract_slices needs a normalized volume')
    if l is None:
        liver = tumor = np.zeros(v.shape, dtype=bool)
    else:
        if l.shape != v.shape:
            raise ValidationError(f'{v.case_id}: label shape {l.shape} does not match image shape {v.shape}')
        liver, tumor = l.liver, l.tumor
    return [
        SliceSample(v.voxels[z], liver[z], tumor[z], v.case_id, z)
        for z in range(v.shape[0])
    ]


def stack_slices(samples: list[SliceSample]) -> LabelVolume:
    '''Rebuild the label volume from slice samples ordered by ``slice_index``.'''
    if not samples:
        raise ValidationError('no slices to stack')
    samples = sorted(samples, key=lambda s: s.slice_index)
    liver = np.stack([s.liver_mask for s in samples])
    tumor = np.stack([s.tumor_mask for s in samples])
    return LabelVolume.from_masks(liver, tumor, samples[0].case_id)


def load_case(ct_path, seg_path=None) -> tuple[CtVolume, LabelVolume | None]:
    '''Load and normalize a case in one go.'''
    ct, labels = load_volume(ct_path, seg_path)
    return window_and_normalize(ct), labels
