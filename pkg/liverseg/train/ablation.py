'''Configuration ladder: the stage-2 model with and without the edge
branch, edge vs. distance-map supervision, and DCFF.

Every configuration is trained with the same seed, config and stage-1 model
and evaluated on the same cases.
'''
from __future__ import annotations
import dataclasses
from pathlib import Path

import pandas as pd
import tqdm

from ..errors import ValidationError
from ..ingest import load_case
from ..metrics import dice_per_case, summarize, write_report
from ..nets import EncoderConfig
from ..phantom import DatasetManifest
from ..pipeline import segment_volume, stage1_probability
from ..storage import load_checkpoint
from ..util import write_json
from .config import TrainConfig
from .data import load_samples
from .trainer import train_stage1, train_stage2

import logging
log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class AblationConfig:
    name: str
    edge_branch: bool
    dcff: bool
    supervision: str | None


ABLATION_CONFIGS = (
    AblationConfig('baseline', edge_branch=False, dcff=False, supervision=None),
    AblationConfig('+edge', edge_branch=True, dcff=False, supervision='edge'),
    AblationConfig('+dist', edge_branch=True, dcff=False, supervision='dist'),
    AblationConfig('+edge+DCFF', edge_branch=True, dcff=True, supervision='edge'),
    AblationConfig('+dist+DCFF', edge_branch=True, dcff=True, supervision='dist'),
)


def _eval_cases(manifest, split):
    ids = manifest.split(split)
    if not ids:
        for fallback in ('test', 'val', 'train'):
            ids = manifest.split(fallback)
            if ids:
                log.warning('split %r is empty, evaluating on %r', split, fallback)
                break
    return [load_case(*manifest.paths(i)) for i in ids]


def stage1_only_dice(stage1, cases, threshold=0.5) -> float:
    '''Liver Dice per case of the thresholded stage-1 map alone.'''
    pairs = []
    for ct, gt in cases:
        prob = stage1_probability(stage1, ct.voxels)
        pairs.append((prob >= threshold, gt.liver))
    return dice_per_case(pairs)


def ladder_comparison(table: pd.DataFrame, metric='tumor', tol=1e-3, stage1_liver=None) -> pd.DataFrame:
    '''Compare neighbouring rows of an ablation table against the expected ladder.

    The expected ordering is the order of ``ABLATION_CONFIGS``, each step
    scoring at least as high as the one before it. A step is ``matched``
    when the higher rung gains more than ``tol``, ``flipped`` when it loses
    more than ``tol`` and ``tied`` otherwise. With ``stage1_liver`` and
    ``metric='liver'`` a first step from stage 1 alone to the baseline is
    added.
    '''
    if metric not in table.columns:
        raise ValidationError(f'no {metric!r} column in the ablation table')
    scores = dict(zip(table['configuration'], table[metric]))
    ladder = [c.name for c in ABLATION_CONFIGS if c.name in scores]
    if metric == 'liver' and stage1_liver is not None:
        scores = {'stage1_only': float(stage1_liver), **scores}
        ladder = ['stage1_only', *ladder]
    rows = []
    for lower, higher in zip(ladder, ladder[1:]):
        delta = float(scores[higher] - scores[lower])
        status = 'matched' if delta > tol else 'flipped' if delta < -tol else 'tied'
        rows.append({'lower': lower, 'higher': higher, 'metric': metric, 'delta': delta, 'status': status})
    return pd.DataFrame(rows, columns=['lower', 'higher', 'metric', 'delta', 'status'])


def run_ablation(data_dir, out_dir, cfg: TrainConfig = TrainConfig(), encoder: EncoderConfig = EncoderConfig(),
                 stage1_checkpoint=None, eval_split='test', configs=ABLATION_CONFIGS, workers=0) -> pd.DataFrame:
    '''Train and evaluate every configuration; returns one row per configuration.

    Writes ``ablation.csv`` (configuration, liver and tumor Dice per case,
    global Dice, burden RMSE), ``ladder.csv`` (each neighbouring pair of
    configurations, matched or flipped against the expected ordering, for
    liver and tumor Dice) and ``ablation.json`` which holds both plus the
    stage-1-only liver Dice.
    '''
    out_dir = Path(out_dir)
    manifest = DatasetManifest.read(data_dir)
    manifest.check_disjoint()
    train_ids = manifest.split('train')
    if not train_ids:
        raise ValidationError('training split is empty')
    val_ids = manifest.split('val') or train_ids
    samples = load_samples(manifest, train_ids), load_samples(manifest, val_ids)

    if stage1_checkpoint is None:
        result = train_stage1(data_dir, out_dir / 'stage1', cfg, encoder, workers=workers, samples=samples)
        stage1_checkpoint = result.best_checkpoint
    stage1, _, _ = load_checkpoint(stage1_checkpoint)
    cases = _eval_cases(manifest, eval_split)

    rows = []
    for ac in tqdm.tqdm(configs, desc='ablation'):
        run_dir = out_dir / ac.name.replace('+', 'plus_')
        result = train_stage2(data_dir, run_dir, cfg, encoder, edge_branch=ac.edge_branch, dcff=ac.dcff,
                              supervision=ac.supervision or 'dist', workers=workers, samples=samples)
        stage2, _, _ = load_checkpoint(result.best_checkpoint)
        pairs = []
        for ct, gt in cases:
            seg = segment_volume(ct, stage1, stage2, stage2_size=cfg.stage2_size, pad=cfg.infer_pad)
            pairs.append((seg.to_labels(), gt))
        per_case, summary = summarize(pairs)
        write_report(per_case, summary, run_dir)
        rows.append({
            'configuration': ac.name,
            'liver': summary['dice_per_case_liver'],
            'tumor': summary['dice_per_case_tumor'],
            'liver_global': summary['dice_global_liver'],
            'tumor_global': summary['dice_global_tumor'],
            'burden_rmse': summary['tumor_burden_rmse'],
            'epochs': result.epochs,
        })
        log.info('%s: liver %.4f tumor %.4f', ac.name, rows[-1]['liver'], rows[-1]['tumor'])

    table = pd.DataFrame(rows)
    stage1_liver = stage1_only_dice(stage1, cases)
    ladder = {m: ladder_comparison(table, m, stage1_liver=stage1_liver) for m in ('liver', 'tumor')}
    for m, steps in ladder.items():
        flipped = steps[steps['status'] == 'flipped']
        log.info('%s ladder: %d of %d steps matched, flipped: %s', m, int((steps['status'] == 'matched').sum()),
                 len(steps), ', '.join(f'{a} > {b}' for a, b in zip(flipped['lower'], flipped['higher'])) or 'none')
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / 'ablation.csv', index=False, float_format='%.6f')
    pd.concat(ladder.values(), ignore_index=True).to_csv(out_dir / 'ladder.csv', index=False, float_format='%.6f')
    write_json(out_dir / 'ablation.json', {
        'stage1_only': {'liver': stage1_liver},
        'rows': rows,
        'ladder': {m: steps.to_dict(orient='records') for m, steps in ladder.items()},
        'train_config': cfg,
        'encoder': encoder,
        'eval_cases': [gt.case_id for _, gt in cases],
    })
    return table
