'''Synthetic CT phantoms: a liver ellipsoid with low-contrast tumor spheres.

Every case is reproducible from ``(seed_base + case_index)`` alone, so
generating cases in parallel never changes the output.
'''
from __future__ import annotations
import dataclasses
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import tqdm

from .config import MANIFEST_NAME, CT_SUFFIX, SEG_SUFFIX
from .errors import ValidationError, PhantomGenerationError
from .ingest import CtVolume, LabelVolume, save_ct, save_labels, masks_to_labels
from .util import write_json, read_json

import logging
log = logging.getLogger(__name__)

MAX_PLACEMENT_TRIES = 200


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    '''Geometry and intensity model of one phantom.

    ``n_tumors`` is either a fixed count or an inclusive ``(min, max)`` range
    drawn per case. ``touch_prob`` is the chance that the first tumor is
    placed against the liver boundary.
    '''
    shape: tuple[int, int, int] = (64, 96, 96)
    liver_axes: tuple[float, float, float] = (20, 30, 26)
    n_tumors: int | tuple[int, int] = (1, 3)
    tumor_radius_range: tuple[float, float] = (3, 7)
    contrast: tuple[float, float, float] = (60.0, 100.0, -60.0)  # liver, tumor, background HU
    noise_sigma: float = 12.0
    spacing: tuple[float, float, float] = (2.5, 1.0, 1.0)
    touch_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        liver_mean, tumor_mean, background_mean = self.contrast
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValidationError(f'invalid phantom shape {self.shape}')
        if liver_mean == background_mean:
            raise ValidationError('liver and background means must differ')
        if tumor_mean == liver_mean:
            raise ValidationError('tumor and liver means must differ')
        lo, hi = self.tumor_count_range
        if lo < 0 or hi < lo:
            raise ValidationError(f'invalid tumor count {self.n_tumors}')
        rmin, rmax = self.tumor_radius_range
        if rmin <= 0 or rmax < rmin:
            raise ValidationError(f'invalid tumor radius range {self.tumor_radius_range}')
        if self.noise_sigma < 0:
            raise ValidationError('noise_sigma must be >= 0')
        if any(a > s / 2 for a, s in zip(self.liver_axes, self.shape)):
            raise ValidationError(f'liver axes {self.liver_axes} do not fit in shape {self.shape}')

    @property
    def tumor_count_range(self):
        if isinstance(self.n_tumors, (tuple, list)):
            return int(self.n_tumors[0]), int(self.n_tumors[1])
        return int(self.n_tumors), int(self.n_tumors)

    @classmethod
    def from_dict(cls, d):
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f'unknown phantom fields: {sorted(unknown)}')
        return cls(**d)


def _grid(shape):
    return np.ogrid[tuple(slice(0, s) for s in shape)]


def _ellipsoid(shape, center, axes):
    zz, yy, xx = _grid(shape)
    return (((zz - center[0]) / axes[0]) ** 2
            + ((yy - center[1]) / axes[1]) ** 2
            + ((xx - center[2]) / axes[2]) ** 2) <= 1


def _sphere_fits(liver, center, radius):
    '''Whether a (discrete) sphere lies fully inside the liver mask.'''
    r = int(np.ceil(radius))
    lo = [int(np.floor(c)) - r for c in center]
    hi = [int(np.floor(c)) + r + 2 for c in center]
    if any(l < 0 for l in lo) or any(h > s for h, s in zip(hi, liver.shape)):
        return False
    sub = tuple(slice(l, h) for l, h in zip(lo, hi))
    zz, yy, xx = _grid([h - l for l, h in zip(lo, hi)])
    ball = ((zz + lo[0] - center[0]) ** 2 + (yy + lo[1] - center[1]) ** 2
            + (xx + lo[2] - center[2]) ** 2) <= radius ** 2
    return bool(ball.any() and liver[sub][ball].all())


def _place_tumor(rng, liver, liver_center, axes, radius, touch):
    '''Find a center so the sphere fits in the liver. ``None`` if none found.'''
    axes = np.asarray(axes, dtype=float)
    for _ in range(MAX_PLACEMENT_TRIES):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction) or 1.0
        if touch:
            # march inward from the boundary until the sphere fits
            for t in np.linspace(1.0, 0.0, 40):
                center = np.asarray(liver_center) + direction * axes * t
                if _sphere_fits(liver, center, radius):
                    return center
        else:
            t = rng.uniform(0, 1) ** (1 / 3)
            center = np.asarray(liver_center) + direction * axes * t
            if _sphere_fits(liver, center, radius):
                return center
    return None


def generate_phantom(spec: PhantomSpec, case_id=None) -> tuple[CtVolume, LabelVolume]:
    '''Render a raw-HU phantom and its {0,1,2} label volume.'''
    rng = np.random.default_rng(spec.seed)
    case_id = case_id or f'phantom_{spec.seed:04d}'
    liver_mean, tumor_mean, background_mean = spec.contrast

    center = tuple((s - 1) / 2 for s in spec.shape)
    liver = _ellipsoid(spec.shape, center, spec.liver_axes)
    tumor = np.zeros(spec.shape, dtype=bool)

    lo, hi = spec.tumor_count_range
    n_tumors = int(rng.integers(lo, hi + 1))
    touch_first = bool(rng.uniform() < spec.touch_prob)
    zz, yy, xx = _grid(spec.shape)
    for i in range(n_tumors):
        radius = float(rng.uniform(*spec.tumor_radius_range))
        c = _place_tumor(rng, liver, center, spec.liver_axes, radius, touch=touch_first and i == 0)
        if c is None:
            raise PhantomGenerationError(spec.seed, f'could not place tumor {i} (radius {radius:.1f}) inside liver')
        tumor |= ((zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2) <= radius ** 2

    means = np.full(spec.shape, background_mean, dtype=np.float32)
    means[liver] = liver_mean
    means[tumor] = tumor_mean
    voxels = means + rng.normal(0, spec.noise_sigma, size=spec.shape).astype(np.float32)

    ct = CtVolume(voxels.astype(np.float32), tuple(float(s) for s in spec.spacing), case_id)
    labels = LabelVolume(masks_to_labels(liver, tumor), case_id)
    return ct, labels


# ---------------------------------------------------------------------------- #
#                                    Datasets                                  #
# ---------------------------------------------------------------------------- #

def split_counts(n_cases, split):
    if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1) > 1e-6:
        raise ValidationError(f'split fractions must be 3 non-negative values summing to 1, got {split}')
    n_train = int(round(n_cases * split[0]))
    n_val = min(int(round(n_cases * split[1])), n_cases - n_train)
    return n_train, n_val, n_cases - n_train - n_val


def case_name(index):
    return f'case_{index:04d}'


def _write_case(args):
    spec, out_dir, case_id = args
    ct, labels = generate_phantom(spec, case_id)
    ct_path = save_ct(ct, Path(out_dir) / f'{case_id}{CT_SUFFIX}.nii.gz')
    seg_path = save_labels(labels, Path(out_dir) / f'{case_id}{SEG_SUFFIX}.nii.gz', spec.spacing)
    return case_id, ct_path.name, seg_path.name


def make_dataset(n_cases: int, out_dir, spec_template: PhantomSpec = PhantomSpec(),
                 split=(0.6, 0.2, 0.2), seed_base: int = 0, workers: int = 1) -> Path:
    '''Write ``n_cases`` phantom pairs and a manifest listing the splits.

    Returns:
        the manifest path.
    '''
    n_train, n_val, n_test = split_counts(n_cases, split)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [
        (dataclasses.replace(spec_template, seed=seed_base + i), str(out_dir), case_name(i))
        for i in range(n_cases)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(tqdm.tqdm(pool.map(_write_case, jobs), total=len(jobs), desc='phantoms'))
    else:
        results = [_write_case(j) for j in tqdm.tqdm(jobs, desc='phantoms')]

    order = np.random.default_rng(seed_base).permutation(n_cases)
    ids = [case_name(int(i)) for i in order]
    splits = {
        'train': sorted(ids[:n_train]),
        'val': sorted(ids[n_train:n_train + n_val]),
        'test': sorted(ids[n_train + n_val:]),
    }
    manifest = {
        'seed_base': seed_base,
        'spec': dataclasses.asdict(spec_template),
        'split': list(split),
        'splits': splits,
        'cases': {
            case_id: {'ct': ct, 'seg': seg, 'seed': seed_base + i}
            for i, (case_id, ct, seg) in enumerate(results)
        },
    }
    path = write_json(out_dir / MANIFEST_NAME, manifest)
    log.info('wrote %d cases to %s (train %d / val %d / test %d)', n_cases, out_dir, n_train, n_val, n_test)
    return path


@dataclasses.dataclass
class DatasetManifest:
    root: Path
    splits: dict[str, list[str]]
    cases: dict[str, dict]

    @classmethod
    def read(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        data = read_json(path)
        return cls(path.parent, data['splits'], data['cases'])

    def paths(self, case_id):
        c = self.cases[case_id]
        return self.root / c['ct'], self.root / c['seg']

    def split(self, name):
        if name not in self.splits:
            raise ValidationError(f'unknown split {name!r}')
        return list(self.splits[name])

    def check_disjoint(self):
        seen = {}
        for name, ids in self.splits.items():
            for i in ids:
                if i in seen:
                    raise ValidationError(f'case {i} appears in both {seen[i]} and {name}')
                seen[i] = name
