'''Command line entry point.

    liverseg gen-phantoms --n 10 --out data/ --seed 7
    liverseg train-stage1 --data data/ --out runs/stage1
    liverseg train-stage2 --data data/ --out runs/stage2 --supervision dist
    liverseg infer --ct data/case_0001_ct.nii.gz --stage1 runs/stage1/best.ckpt --stage2 runs/stage2/best.ckpt --out runs/pred/
    liverseg eval --pred runs/pred/ --gt data/ --out metrics/
    liverseg ablation --data data/ --out runs/ablation
    liverseg render-overlay --ct data/case_0001_ct.nii.gz --out overlays/
    liverseg model-summary --kind e2net

Training hyper-parameters can be given in a JSON ``--config`` file and
overridden per flag (``--batch_size 4``).
'''
from __future__ import annotations
import sys
import dataclasses
from pathlib import Path

from .config import DATA_DIR, RUN_DIR, LOG_LEVEL, RUN_MANIFEST_NAME, PRED_SUFFIX, DEVICE
from .errors import LiversegError, ValidationError
from .util import RunManifest, RunTimer, content_hash

import logging
log = logging.getLogger(__name__)


def _write_manifest(command, config, seed, inputs, outputs, path, timer, argv=None):
    manifest = RunManifest(
        command=command,
        config=config,
        seed=seed,
        input_hash=content_hash(inputs),
        outputs=[str(o) for o in outputs],
        duration_s=timer.duration,
        argv=list(argv or sys.argv[1:]),
    )
    return manifest.write(path)


def _config_snapshot(cfgs):
    return {k: dataclasses.asdict(v) for k, v in cfgs.items()}


class Commands:
    '''Liver and tumor segmentation: data, training, inference and evaluation.'''

    # ----------------------------------- Data ----------------------------------- #

    def gen_phantoms(self, n=10, out=DATA_DIR, seed=0, split=(0.6, 0.2, 0.2), config=None, workers=1):
        '''Generate ``n`` phantom CT/label pairs plus a split manifest.

        Arguments:
            n (int): number of cases.
            out (str): output directory.
            seed (int): base seed, case i uses ``seed + i``.
            split (tuple): train/val/test fractions summing to 1.
            config (str): JSON config file with a ``phantom`` section.
            workers (int): parallel generator processes.
        '''
        from .phantom import make_dataset
        from .train.config import load_config
        cfgs = load_config(config)
        with RunTimer() as timer:
            manifest = make_dataset(int(n), out, cfgs['phantom'], tuple(split), seed_base=int(seed), workers=int(workers))
        _write_manifest('gen-phantoms', {'phantom': cfgs['phantom'], 'n': n, 'split': list(split)}, seed,
                        [config], [manifest], Path(out) / RUN_MANIFEST_NAME, timer)
        return str(manifest)

    # --------------------------------- Training --------------------------------- #

    def train_stage1(self, data=DATA_DIR, out=f'{RUN_DIR}/stage1', config=None, seed=None, workers=0,
                     model='r2unet', supervision='dist', **overrides):
        '''Train the coarse liver model.

        Arguments:
            data (str): dataset directory holding ``manifest.json``.
            out (str): run directory for checkpoints and the training log.
            config (str): JSON config file.
            seed (int): overrides ``train.seed``.
            workers (int): data loader workers (results do not depend on it).
            model (str): ``r2unet`` or ``e2net``.
            supervision (str): edge target for an ``e2net`` model, ``edge`` or ``dist``.
        '''
        from .train import load_config, train_stage1
        cfgs = load_config(config, seed=seed, **overrides)
        with RunTimer() as timer:
            result = train_stage1(data, out, cfgs['train'], cfgs['encoder'], kind=model,
                                  edge_kind=supervision, workers=int(workers))
        _write_manifest('train-stage1', {**_config_snapshot(cfgs), 'model': model}, cfgs['train'].seed,
                        [Path(data) / 'manifest.json', config], [result.best_checkpoint, result.last_checkpoint],
                        Path(out) / RUN_MANIFEST_NAME, timer)
        return {'best': str(result.best_checkpoint), 'epochs': result.epochs, 'best_val_loss': result.best_val_loss}

    def train_stage2(self, data=DATA_DIR, out=f'{RUN_DIR}/stage2', config=None, seed=None, workers=0,
                     edge_branch=True, dcff=True, supervision='dist', **overrides):
        '''Train the fine liver/tumor model on liver crops.

        Arguments:
            edge_branch (bool): add the edge prediction branch.
            dcff (bool): cross-refine the two branches' features.
            supervision (str): edge target, ``edge`` or ``dist``.
        '''
        from .train import load_config, train_stage2
        cfgs = load_config(config, seed=seed, **overrides)
        with RunTimer() as timer:
            result = train_stage2(data, out, cfgs['train'], cfgs['encoder'], edge_branch=bool(edge_branch),
                                  dcff=bool(dcff), supervision=supervision, workers=int(workers))
        snapshot = {**_config_snapshot(cfgs), 'edge_branch': edge_branch, 'dcff': dcff, 'supervision': supervision}
        _write_manifest('train-stage2', snapshot, cfgs['train'].seed,
                        [Path(data) / 'manifest.json', config], [result.best_checkpoint, result.last_checkpoint],
                        Path(out) / RUN_MANIFEST_NAME, timer)
        return {'best': str(result.best_checkpoint), 'epochs': result.epochs, 'best_val_loss': result.best_val_loss}

    def ablation(self, data=DATA_DIR, out=f'{RUN_DIR}/ablation', config=None, seed=None, stage1=None,
                 split='test', workers=0, **overrides):
        '''Train and evaluate the five stage-2 configurations.

        Arguments:
            stage1 (str): existing stage-1 checkpoint; trained first when omitted.
            split (str): split to evaluate on.
        '''
        import pandas as pd
        from .train import load_config, run_ablation
        cfgs = load_config(config, seed=seed, **overrides)
        with RunTimer() as timer:
            table = run_ablation(data, out, cfgs['train'], cfgs['encoder'], stage1_checkpoint=stage1,
                                 eval_split=split, workers=int(workers))
        _write_manifest('ablation', _config_snapshot(cfgs), cfgs['train'].seed,
                        [Path(data) / 'manifest.json', config, stage1],
                        [Path(out) / 'ablation.csv', Path(out) / 'ablation.json', Path(out) / 'ladder.csv'],
                        Path(out) / RUN_MANIFEST_NAME, timer)
        ladder = pd.read_csv(Path(out) / 'ladder.csv')
        return table.to_string(index=False) + '\n\n' + ladder.to_string(index=False)

    # --------------------------------- Inference -------------------------------- #

    def infer(self, ct, stage1, stage2, out, threshold=0.5, pad=None, keep_largest=False):
        '''Segment one CT volume and write a {0,1,2} label NIfTI.

        Arguments:
            ct (str): CT volume (raw HU).
            stage1 (str): stage-1 checkpoint.
            stage2 (str): stage-2 checkpoint.
            out (str): output file, or a directory to write ``<case>_pred.nii.gz`` into.
            threshold (float): probability threshold of the final maps.
            pad (int): liver box padding; defaults to the stage-2 training value.
            keep_largest (bool): keep only the largest liver component.
        '''
        from .ingest import load_ct, window_and_normalize, save_labels
        from .pipeline import segment_volume
        from .storage import load_checkpoint
        # load everything before writing anything
        m1, _, _ = load_checkpoint(stage1, DEVICE)
        m2, _, meta2 = load_checkpoint(stage2, DEVICE)
        train_cfg = meta2.get('train_config', {})
        size = int(train_cfg.get('stage2_size', 96))
        pad = int(pad if pad is not None else train_cfg.get('infer_pad', 35))
        vol = window_and_normalize(load_ct(ct))

        with RunTimer() as timer:
            result = segment_volume(vol, m1, m2, threshold=float(threshold), stage2_size=size, pad=pad,
                                    keep_largest=bool(keep_largest), progress=True)
            out = Path(out)
            if out.is_dir() or not out.name.endswith(('.nii', '.nii.gz')):
                out = out / f'{vol.case_id}{PRED_SUFFIX}.nii.gz'
            save_labels(result.to_labels(), out, vol.spacing, vol.affine)
        _write_manifest('infer', {'threshold': threshold, 'pad': pad, 'stage2_size': size,
                                  'keep_largest': keep_largest}, None,
                        [ct, stage1, stage2], [out], f'{out}.manifest.json', timer)
        return str(out)

    def eval(self, pred, gt=DATA_DIR, out='metrics'):
        '''Dice per case, global Dice and tumor burden RMSE of a prediction directory.

        Arguments:
            pred (str): directory of ``<case>_pred.nii.gz`` files.
            gt (str): directory of ``<case>_seg.nii.gz`` files.
            out (str): directory for ``per_case.csv`` and ``summary.json``.
        '''
        from .metrics import evaluate_dirs
        with RunTimer() as timer:
            _, summary = evaluate_dirs(pred, gt, out)
        _write_manifest('eval', {}, None, [pred], [Path(out) / 'per_case.csv', Path(out) / 'summary.json'],
                        Path(out) / RUN_MANIFEST_NAME, timer)
        return summary

    def render_overlay(self, ct, seg=None, out='overlays', stride=1, all_slices=False):
        '''Write per-slice PNGs with liver (green) and tumor (red) contours.

        Arguments:
            ct (str): CT volume.
            seg (str): label volume; defaults to the CT's sibling label file.
            stride (int): render every ``stride``-th slice.
            all_slices (bool): also render slices without liver.
        '''
        from .ingest import load_volume, window_and_normalize
        from .pipeline import render_overlay
        vol, labels = load_volume(ct, seg)
        if labels is None:
            raise ValidationError(f'no label volume found for {ct}; pass --seg')
        with RunTimer() as timer:
            paths = render_overlay(window_and_normalize(vol), labels, out, int(stride), not all_slices)
        _write_manifest('render-overlay', {'stride': stride, 'all_slices': all_slices}, None,
                        [ct, seg], paths, Path(out) / RUN_MANIFEST_NAME, timer)
        return len(paths)

    # ----------------------------------- Misc ----------------------------------- #

    def model_summary(self, checkpoint=None, kind='e2net', out_channels=2, edge_branch=True, dcff=True,
                      depth=1, config=None):
        '''Print per-module parameter counts of a checkpoint or a fresh model.'''
        from .nets import ModelConfig, build_model, parameter_summary
        from .storage import load_checkpoint
        from .train.config import load_config
        if checkpoint:
            model, mcfg, _ = load_checkpoint(checkpoint)
        else:
            mcfg = ModelConfig(kind, load_config(config)['encoder'], int(out_channels), bool(edge_branch), bool(dcff))
            model = build_model(mcfg)
        summary = parameter_summary(model, int(depth))
        summary['heads'] = list(getattr(model, 'heads', ('logits',)))
        return dict(summary)


def cli_dispatch(argv=None) -> int:
    '''Run one sub-command; returns the process exit code.

    0 on success, 1 on validation errors and usage errors, 2 on runtime and
    IO errors.
    '''
    import fire
    from fire.core import FireExit
    from tqdm.contrib.logging import logging_redirect_tqdm
    logging.basicConfig(level=LOG_LEVEL)
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        with logging_redirect_tqdm():
            fire.Fire(Commands, command=argv, name='liverseg')
    except FireExit as e:
        return 0 if not e.code else 1
    except (ValidationError, ValueError) as e:
        log.error('validation error: %s', e)
        return 1
    except (LiversegError, OSError, RuntimeError) as e:
        log.error('%s: %s', type(e).__name__, e)
        return 2
    return 0


def cli():
    sys.exit(cli_dispatch())

if __name__ == '__main__':
    cli()
