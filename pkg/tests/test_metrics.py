import math

import numpy as np
import pytest

from liverseg.errors import ValidationError
from liverseg.ingest import LabelVolume, save_labels
from liverseg.metrics import (
    dice, dice_per_case, global_dice, tumor_burden, tumor_burden_rmse, summarize, evaluate_dirs)


def box(shape, *slices):
    m = np.zeros(shape, dtype=bool)
    m[slices] = True
    return m


def test_dice_examples():
    a = box((4, 4), slice(0, 2), slice(0, 2))
    b = box((4, 4), slice(0, 2), slice(1, 3))
    assert dice(a, a) == 1.0
    assert dice(a, b) == pytest.approx(0.5)
    assert dice(a, ~a) == 0.0
    assert dice(np.zeros(3), np.zeros(3)) == 1.0
    assert dice(a, np.zeros((4, 4))) == 0.0
    with pytest.raises(ValidationError):
        dice(a, np.zeros((3, 3)))


def test_dice_per_case_mean():
    shape = (12, 12)
    gt = box(shape, slice(0, 10), slice(0, 1))
    shifted = box(shape, slice(1, 11), slice(0, 1))
    miss = box(shape, slice(0, 1), slice(5, 6))
    assert dice(shifted, gt) == pytest.approx(0.9)
    assert dice_per_case([(shifted, gt), (shifted, gt), (miss, gt)]) == pytest.approx(0.6)
    with pytest.raises(ValidationError):
        dice_per_case([])


def test_global_vs_per_case():
    big = box((100, 100), slice(0, 100), slice(0, 100))
    small = box((100, 100), slice(0, 1), slice(0, 2))
    miss = box((100, 100), slice(50, 51), slice(50, 52))
    cases = [(big, big), (miss, small)]
    assert dice_per_case(cases) == pytest.approx(0.5)
    assert global_dice(cases) > 0.999


def test_aggregates_accept_generators():
    shape = (12, 12)
    gt = box(shape, slice(0, 10), slice(0, 1))
    shifted = box(shape, slice(1, 11), slice(0, 1))
    miss = box(shape, slice(0, 1), slice(5, 6))
    pairs = [(shifted, gt), (shifted, gt), (miss, gt)]
    assert dice_per_case(pg for pg in pairs) == pytest.approx(0.6)
    assert global_dice(pg for pg in pairs) == pytest.approx(global_dice(pairs))
    assert tumor_burden_rmse(((0.2, 0.1) for _ in range(3))) == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        dice_per_case(pg for pg in [])


def test_tumor_burden():
    liver = np.ones((10, 10), dtype=bool)
    tumor = box((10, 10), slice(0, 1), slice(0, 10))
    assert tumor_burden(liver, tumor) == pytest.approx(0.1)
    assert tumor_burden(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0
    assert tumor_burden_rmse([(0.1, 0.2), (0.3, 0.3)]) == pytest.approx(math.sqrt(0.01 / 2))
    assert tumor_burden_rmse([((liver, tumor), 0.1)]) == pytest.approx(0.0)


def labels(case_id, liver_rows, tumor_rows=0):
    liver = np.zeros((2, 8, 8), dtype=bool)
    liver[:, :liver_rows] = True
    tumor = np.zeros_like(liver)
    tumor[:, :tumor_rows] = True
    return LabelVolume.from_masks(liver, tumor, case_id)


def test_summarize():
    pairs = [(labels('b', 4, 1), labels('b', 4, 2)), (labels('a', 8, 0), labels('a', 8, 0))]
    rows, summary = summarize(pairs)
    assert rows['case_id'].tolist() == ['a', 'b']
    assert summary['n_cases'] == 2
    assert summary['dice_per_case_liver'] == 1.0
    assert summary['dice_per_case_tumor'] == pytest.approx((1.0 + 2 / 3) / 2)
    assert summary['dice_global_tumor'] == pytest.approx(2 / 3)
    assert summary['tumor_burden_rmse'] == pytest.approx(math.sqrt((0.25 ** 2) / 2))


def test_evaluate_dirs(tmp_path):
    pred_dir, gt_dir = tmp_path / 'pred', tmp_path / 'gt'
    save_labels(labels('x', 4, 1), pred_dir / 'x_pred.nii.gz')
    save_labels(labels('x', 4, 1), gt_dir / 'x_seg.nii.gz')
    save_labels(labels('y', 4), gt_dir / 'y_seg.nii.gz')
    rows, summary = evaluate_dirs(pred_dir, gt_dir, tmp_path / 'out')
    assert len(rows) == 1
    assert summary['dice_per_case_liver'] == 1.0
    assert (tmp_path / 'out' / 'per_case.csv').exists()
    assert (tmp_path / 'out' / 'summary.json').exists()
    with pytest.raises(ValidationError):
        evaluate_dirs(tmp_path / 'out', gt_dir)
