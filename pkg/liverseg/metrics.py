'''LiTS-style evaluation: Dice per case, global Dice and tumor burden RMSE.'''
from __future__ import annotations
import math
import dataclasses
from pathlib import Path

import numpy as np
import pandas as pd

from .config import PRED_SUFFIX, SEG_SUFFIX, NIFTI_EXTS
from .errors import ValidationError
from .ingest import load_labels, LabelVolume
from .util import write_json, strip_nifti_ext

import logging
log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    dice_liver: float
    dice_tumor: float
    burden_pred: float
    burden_gt: float


def _pair(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f'shape mismatch: {a.shape} vs {b.shape}')
    return a, b


def overlap_counts(a, b):
    '''``(|a & b|, |a| + |b|)`` as Python ints.'''
    a, b = _pair(a, b)
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a)) + int(np.count_nonzero(b))


def _dice_from_counts(inter, total):
    return 1.0 if total == 0 else 2.0 * inter / total


def dice(a, b) -> float:
    '''``2|a & b| / (|a| + |b|)``, 1.0 when both are empty.'''
    return _dice_from_counts(*overlap_counts(a, b))


def _nonempty(cases):
    cases = list(cases)
    if not cases:
        raise ValidationError('no cases to evaluate')
    return cases


def dice_per_case(cases) -> float:
    '''Unweighted mean of per-case Dice over ``(pred, gt)`` pairs.'''
    cases = _nonempty(cases)
    return float(math.fsum(dice(p, g) for p, g in cases) / len(cases))


def global_dice(cases) -> float:
    '''Dice of all cases pooled into one volume.'''
    counts = [overlap_counts(p, g) for p, g in _nonempty(cases)]
    return _dice_from_counts(sum(c[0] for c in counts), sum(c[1] for c in counts))


def tumor_burden(liver, tumor) -> float:
    '''Tumor voxels over liver voxels; 0 when the liver is empty.'''
    n_liver = int(np.count_nonzero(liver))
    return 0.0 if n_liver == 0 else int(np.count_nonzero(tumor)) / n_liver


def tumor_burden_rmse(cases) -> float:
    '''RMSE of tumor burden over ``(pred, gt)`` label pairs.

    Each side of a pair is a ``LabelVolume``, a ``(liver, tumor)`` mask tuple
    or a precomputed burden.
    '''
    residuals = [_burden(p) - _burden(g) for p, g in _nonempty(cases)]
    return math.sqrt(math.fsum(r * r for r in residuals) / len(residuals))


def _burden(x):
    if isinstance(x, LabelVolume):
        return tumor_burden(x.liver, x.tumor)
    if isinstance(x, (tuple, list)):
        return tumor_burden(*x)
    return float(x)


def case_metrics(pred: LabelVolume, gt: LabelVolume) -> CaseMetrics:
    return CaseMetrics(
        gt.case_id,
        dice(pred.liver, gt.liver),
        dice(pred.tumor, gt.tumor),
        tumor_burden(pred.liver, pred.tumor),
        tumor_burden(gt.liver, gt.tumor),
    )


def summarize(pairs: list[tuple[LabelVolume, LabelVolume]]) -> tuple[pd.DataFrame, dict]:
    '''Per-case table and the headline numbers for ``(pred, gt)`` label pairs.'''
    pairs = sorted(_nonempty(pairs), key=lambda pg: pg[1].case_id)
    rows = pd.DataFrame([dataclasses.asdict(case_metrics(p, g)) for p, g in pairs])
    livers = [(p.liver, g.liver) for p, g in pairs]
    tumors = [(p.tumor, g.tumor) for p, g in pairs]
    summary = {
        'n_cases': len(pairs),
        'dice_per_case_liver': dice_per_case(livers),
        'dice_per_case_tumor': dice_per_case(tumors),
        'dice_global_liver': global_dice(livers),
        'dice_global_tumor': global_dice(tumors),
        'tumor_burden_rmse': tumor_burden_rmse(pairs),
    }
    return rows, summary


def _index_dir(directory, suffix):
    found = {}
    for path in sorted(Path(directory).iterdir()):
        if not path.name.endswith(NIFTI_EXTS):
            continue
        stem = strip_nifti_ext(path.name)
        if stem.endswith(suffix):
            found[stem[:-len(suffix)]] = path
    return found


def evaluate_dirs(pred_dir, gt_dir, out_dir=None):
    '''Evaluate ``<case>_pred.nii.gz`` files against ``<case>_seg.nii.gz``.

    Writes ``per_case.csv`` and ``summary.json`` to ``out_dir`` when given.
    '''
    preds = _index_dir(pred_dir, PRED_SUFFIX)
    gts = _index_dir(gt_dir, SEG_SUFFIX)
    missing = sorted(set(gts) - set(preds))
    if missing:
        log.warning('no prediction for %d cases: %s', len(missing), missing[:5])
    case_ids = sorted(set(preds) & set(gts))
    if not case_ids:
        raise ValidationError(f'no matching prediction/ground-truth pairs in {pred_dir} and {gt_dir}')
    pairs = []
    for case_id in case_ids:
        pred, gt = load_labels(preds[case_id], case_id), load_labels(gts[case_id], case_id)
        if pred.shape != gt.shape:
            raise ValidationError(f'{case_id}: prediction shape {pred.shape} != ground truth {gt.shape}')
        pairs.append((pred, gt))
    rows, summary = summarize(pairs)
    if out_dir is not None:
        write_report(rows, summary, out_dir)
    return rows, summary


def write_report(rows: pd.DataFrame, summary: dict, out_dir, name='per_case.csv', summary_name='summary.json'):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows.to_csv(out_dir / name, index=False, float_format='%.6f')
    write_json(out_dir / summary_name, summary)
    return [out_dir / name, out_dir / summary_name]
