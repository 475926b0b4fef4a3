'''Training experiments on phantoms. Slow: run with LIVERSEG_SLOW_TESTS=1.'''
import math

import pandas as pd
import pytest

from liverseg.ingest import load_case
from liverseg.metrics import summarize
from liverseg.phantom import PhantomSpec, make_dataset, DatasetManifest
from liverseg.pipeline import segment_volume
from liverseg.storage import load_checkpoint, read_records
from liverseg.train import TrainConfig, train_stage1, train_stage2, run_ablation, ABLATION_CONFIGS
from liverseg.train.data import load_samples

pytestmark = pytest.mark.slow

CFG = TrainConfig(max_epochs=60, epoch_size=64)


def _evaluate(data_dir, split, stage1_ckpt, stage2_ckpt):
    manifest = DatasetManifest.read(data_dir)
    stage1, _, _ = load_checkpoint(stage1_ckpt)
    stage2, _, _ = load_checkpoint(stage2_ckpt)
    pairs = []
    for case_id in manifest.split(split):
        ct, gt = load_case(*manifest.paths(case_id))
        pairs.append((segment_volume(ct, stage1, stage2, stage2_size=CFG.stage2_size).to_labels(), gt))
    return summarize(pairs)[1]


def _moving_average(xs, k):
    return [sum(xs[i:i + k]) / k for i in range(len(xs) - k + 1)]


def _train_both(data_dir, out_dir):
    s1 = train_stage1(data_dir, out_dir / 'stage1', CFG)
    s2 = train_stage2(data_dir, out_dir / 'stage2', CFG)
    return s1, s2


def test_overfit_training_phantoms(tmp_path):
    data = tmp_path / 'data'
    make_dataset(8, data, PhantomSpec(), split=(1, 0, 0), seed_base=100)
    s1, s2 = _train_both(data, tmp_path)
    summary = _evaluate(data, 'train', s1.best_checkpoint, s2.best_checkpoint)
    assert summary['dice_per_case_liver'] >= 0.95
    assert summary['dice_per_case_tumor'] >= 0.70

    losses = [r['total'] for r in read_records(tmp_path / 'stage1' / 'train_log.jsonl', split='train')][:20]
    assert losses[-1] < losses[0]
    assert all(math.isfinite(x) for x in losses)
    assert max(losses) <= 1.5 * losses[0]
    smooth = _moving_average(losses, 3)
    steps = list(zip(smooth, smooth[1:]))
    assert sum(b <= a for a, b in steps) >= 0.8 * len(steps)


def test_overfit_is_deterministic(tmp_path):
    data = tmp_path / 'data'
    make_dataset(2, data, PhantomSpec(), split=(1, 0, 0), seed_base=5)
    manifest = DatasetManifest.read(data)
    samples = load_samples(manifest, manifest.split('train'))
    cfg = TrainConfig(max_epochs=3, epoch_size=16)
    a = train_stage2(data, tmp_path / 'a', cfg, samples=(samples, samples))
    b = train_stage2(data, tmp_path / 'b', cfg, samples=(samples, samples))
    assert a.val_losses == pytest.approx(b.val_losses, rel=1e-5)


def test_held_out_phantoms(tmp_path):
    data = tmp_path / 'data'
    make_dataset(20, data, PhantomSpec(), split=(0.8, 0, 0.2), seed_base=200)
    s1, s2 = _train_both(data, tmp_path)
    summary = _evaluate(data, 'test', s1.best_checkpoint, s2.best_checkpoint)
    assert summary['n_cases'] == 4
    assert summary['dice_per_case_liver'] >= 0.85


def test_ablation_table(tmp_path):
    data = tmp_path / 'data'
    make_dataset(10, data, PhantomSpec(), seed_base=300)
    cfg = TrainConfig(max_epochs=8, epoch_size=32)
    table = run_ablation(data, tmp_path / 'ablation', cfg)
    assert table['configuration'].tolist() == [c.name for c in ABLATION_CONFIGS]
    assert ((table['liver'] >= 0) & (table['liver'] <= 1)).all()
    assert (tmp_path / 'ablation' / 'ablation.csv').exists()
    assert (tmp_path / 'ablation' / 'ablation.json').exists()
    ladder = pd.read_csv(tmp_path / 'ablation' / 'ladder.csv')
    assert len(ladder) == 9
    assert set(ladder['status']) <= {'matched', 'flipped', 'tied'}
